#include "ctree/consistency.hpp"

#include <algorithm>
#include <numeric>

#include "ctree/errors.hpp"
#include "ctree/hashing.hpp"
#include "ctree/kernels.hpp"

namespace ctree {

double cross_consistency(const Matrix& a, const Matrix& b) {
    if (a.rows == 0 || b.rows == 0) {
        fail(ErrorCode::empty_set, "consistency of an empty set");
    }
    if (a.cols != b.cols) {
        fail(ErrorCode::invalid_argument, "embedding dimensions differ");
    }
    std::vector<double> block(a.rows * b.rows);
    kernels::cosine_block(kernels::active(), a.data, a.rows, b.data, b.rows, a.cols, block);
    const double sum = std::accumulate(block.begin(), block.end(), 0.0);
    return sum / static_cast<double>(block.size());
}

double self_consistency(const Matrix& a) {
    if (a.rows < 2) {
        fail(ErrorCode::singleton_self_consistency, "self-consistency needs at least 2 images");
    }
    std::vector<double> block(a.rows * a.rows);
    kernels::cosine_block(kernels::active(), a.data, a.rows, a.data, a.rows, a.cols, block);
    double sum = 0.0;
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = i + 1; j < a.rows; ++j) sum += block[i * a.rows + j];
    }
    return sum / (0.5 * static_cast<double>(a.rows) * static_cast<double>(a.rows - 1));
}

const CandidatePair& select_best_seed(std::span<const CandidatePair> candidates) {
    if (candidates.empty()) {
        fail(ErrorCode::empty_candidates, "no candidates to select from");
    }
    const CandidatePair* best = &candidates.front();
    for (const auto& c : candidates.subspan(1)) {
        if (c.report.objective > best->report.objective ||
            (c.report.objective == best->report.objective && c.seed < best->seed)) {
            best = &c;
        }
    }
    return *best;
}

SplitDecision evaluate_stop(const ConsistencyReport& r, const BuildConfig& config) {
    if (std::min(r.self_left, r.self_right) < config.self_coherency_threshold) {
        return SplitDecision::leaf_incoherent;
    }
    if (r.cross >= config.sibling_distinctness_threshold) {
        return SplitDecision::leaf_not_distinct;
    }
    return SplitDecision::split_ok;
}

std::vector<std::size_t> rank_by_mean_similarity(const Matrix& pool, std::size_t n) {
    if (n < 1) fail(ErrorCode::invalid_argument, "selection size must be positive");
    if (pool.rows < n) {
        fail(ErrorCode::pool_too_small, "pool of " + std::to_string(pool.rows) +
                                            " cannot supply " + std::to_string(n) + " images");
    }
    const std::size_t m = pool.rows;
    std::vector<double> block(m * m);
    kernels::cosine_block(kernels::active(), pool.data, m, pool.data, m, pool.cols, block);
    std::vector<double> score(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            if (j != i) score[i] += block[i * m + j];
        }
        if (m > 1) score[i] /= static_cast<double>(m - 1);
    }
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return score[x] > score[y]; });
    order.resize(n);
    return order;
}

// --- cache ---------------------------------------------------------------------

std::optional<EmbeddingVector> EmbeddingCache::find(const std::string& id) const {
    std::shared_lock lock(mutex_);
    const auto it = entries_.find(id);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

void EmbeddingCache::insert(const std::string& id, EmbeddingVector value) {
    std::unique_lock lock(mutex_);
    entries_.insert_or_assign(id, std::move(value));
}

std::size_t EmbeddingCache::size() const {
    std::shared_lock lock(mutex_);
    return entries_.size();
}

namespace {

// Ids are only unique within a tree, so the key also covers the payload.
std::string cache_key(const ImageRef& img) {
    std::uint64_t h = img.has_inline_payload()
                          ? fnv1a64(std::as_bytes(std::span(img.vector)))
                          : fnv1a64(img.path.string());
    return img.id + "#" + to_hex(h);
}

}  // namespace

Matrix ConsistencyScorer::embeddings(const ImageSet& set) {
    if (set.embeddings) return *set.embeddings;
    if (set.empty()) return {};

    std::vector<std::optional<EmbeddingVector>> rows(set.size());
    std::vector<std::size_t> missing;
    for (std::size_t i = 0; i < set.size(); ++i) {
        rows[i] = cache_.find(cache_key(set.images[i]));
        if (!rows[i]) missing.push_back(i);
    }
    if (!missing.empty()) {
        if (!backend_) {
            fail(ErrorCode::backend_unavailable, "image embeddings needed but no backend configured");
        }
        std::vector<ImageRef> todo;
        todo.reserve(missing.size());
        for (const std::size_t i : missing) todo.push_back(set.images[i]);
        const Matrix fresh = backend_->embed_images(todo);
        std::lock_guard lock(fill_mutex_);
        for (std::size_t k = 0; k < missing.size(); ++k) {
            const auto r = fresh.row(k);
            EmbeddingVector e(std::vector<float>(r.begin(), r.end()));
            cache_.insert(cache_key(set.images[missing[k]]), e);
            rows[missing[k]] = std::move(e);
        }
    }
    Matrix m(set.size(), rows.front()->size());
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (rows[i]->size() != m.cols) fail(ErrorCode::decode, "ragged image embeddings");
        std::copy(rows[i]->values().begin(), rows[i]->values().end(), m.row(i).begin());
    }
    return m;
}

void ConsistencyScorer::attach_embeddings(ImageSet& set) {
    set.embeddings = embeddings(set);
}

double ConsistencyScorer::consistency(const ImageSet& a, const ImageSet& b) {
    if (&a == &b) return self_consistency(a);
    if (a.empty() || b.empty()) fail(ErrorCode::empty_set, "consistency of an empty set");
    return cross_consistency(embeddings(a), embeddings(b));
}

double ConsistencyScorer::self_consistency(const ImageSet& set) {
    if (set.size() < 2) {
        fail(ErrorCode::singleton_self_consistency, "self-consistency needs at least 2 images");
    }
    return ctree::self_consistency(embeddings(set));
}

ConsistencyReport ConsistencyScorer::score_candidate(const ImageSet& left, const ImageSet& right) {
    const Matrix l = embeddings(left);
    const Matrix r = embeddings(right);
    if (l.rows < 2 || r.rows < 2) {
        fail(ErrorCode::singleton_self_consistency, "candidate sample sets need at least 2 images");
    }
    return make_report(ctree::self_consistency(l), ctree::self_consistency(r), cross_consistency(l, r));
}

ImageSet ConsistencyScorer::curate_training_set(const ImageSet& pool, int n) {
    if (n < 2) fail(ErrorCode::invalid_argument, "curated set needs n >= 2");
    if (pool.size() < static_cast<std::size_t>(n)) {
        fail(ErrorCode::pool_too_small, "pool of " + std::to_string(pool.size()) +
                                            " cannot supply " + std::to_string(n) + " images");
    }
    const Matrix m = embeddings(pool);
    const auto picked = rank_by_mean_similarity(m, static_cast<std::size_t>(n));
    ImageSet out;
    Matrix rows(picked.size(), m.cols);
    for (std::size_t k = 0; k < picked.size(); ++k) {
        out.images.push_back(pool.images[picked[k]]);
        std::copy(m.row(picked[k]).begin(), m.row(picked[k]).end(), rows.row(k).begin());
    }
    if (pool.embeddings) out.embeddings = std::move(rows);
    return out;
}

double ConsistencyScorer::measure_reconstruction(const ImageSet& parent_set,
                                                 const ImageSet& joint_set) {
    return consistency(parent_set, joint_set);
}

ConsistencyMatrix ConsistencyScorer::consistency_matrix(
    const std::vector<std::pair<std::string, const ImageSet*>>& sets) {
    ConsistencyMatrix out;
    const std::size_t n = sets.size();
    std::vector<Matrix> mats;
    mats.reserve(n);
    for (const auto& [label, set] : sets) {
        out.labels.push_back(label);
        mats.push_back(embeddings(*set));
    }
    out.scores.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        out.scores[i * n + i] = ctree::self_consistency(mats[i]);
        for (std::size_t j = i + 1; j < n; ++j) {
            const double c = cross_consistency(mats[i], mats[j]);
            out.scores[i * n + j] = c;
            out.scores[j * n + i] = c;
        }
    }
    return out;
}

}  // namespace ctree
