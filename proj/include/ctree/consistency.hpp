#pragma once

#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "ctree/backend.hpp"
#include "ctree/core.hpp"

namespace ctree {

// --- pure scoring over embedding matrices ----------------------------------

/// Mean cosine similarity over all (i, j) pairs of rows.
double cross_consistency(const Matrix& a, const Matrix& b);
/// Mean cosine similarity over unordered pairs i < j; needs >= 2 rows.
double self_consistency(const Matrix& a);

struct ConsistencyMatrix {
    std::vector<std::string> labels;
    // row-major, labels.size() squared; diagonal holds self-consistency
    std::vector<double> scores;

    double at(std::size_t i, std::size_t j) const { return scores[i * labels.size() + j]; }
};

/// Seed-selection argmax; ties go to the lowest seed.
const CandidatePair& select_best_seed(std::span<const CandidatePair> candidates);

/// Incoherence is checked before indistinctness.
SplitDecision evaluate_stop(const ConsistencyReport& report, const BuildConfig& config);

/// Indices of the n pool rows with the highest mean cosine similarity to the
/// rest of the pool, best first; ties keep pool order.
std::vector<std::size_t> rank_by_mean_similarity(const Matrix& pool, std::size_t n);

// --- image-set scoring with an embedding cache ------------------------------

/// Image embeddings keyed by image id. Fills are serialised, reads shared.
class EmbeddingCache {
public:
    std::optional<EmbeddingVector> find(const std::string& id) const;
    void insert(const std::string& id, EmbeddingVector value);
    std::size_t size() const;

private:
    mutable std::shared_mutex mutex_;
    std::map<std::string, EmbeddingVector> entries_;
};

class ConsistencyScorer {
public:
    /// backend may be null when every set carries cached embeddings.
    explicit ConsistencyScorer(const DiffusionBackend* backend) : backend_(backend) {}

    /// Embedding matrix of a set: its cached embeddings when present,
    /// otherwise per-image cache lookups with missing rows computed in one
    /// batch call.
    Matrix embeddings(const ImageSet& set);
    /// Stores the matrix on the set.
    void attach_embeddings(ImageSet& set);

    /// Self-consistency when &a == &b, cross-consistency otherwise.
    double consistency(const ImageSet& a, const ImageSet& b);
    double self_consistency(const ImageSet& set);

    ConsistencyReport score_candidate(const ImageSet& left, const ImageSet& right);
    ImageSet curate_training_set(const ImageSet& pool, int n);
    double measure_reconstruction(const ImageSet& parent_set, const ImageSet& joint_set);
    ConsistencyMatrix consistency_matrix(
        const std::vector<std::pair<std::string, const ImageSet*>>& sets);

    const EmbeddingCache& cache() const noexcept { return cache_; }

private:
    const DiffusionBackend* backend_;
    EmbeddingCache cache_;
    std::mutex fill_mutex_;
};

}  // namespace ctree
