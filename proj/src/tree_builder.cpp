#include "ctree/tree_builder.hpp"

#include <chrono>
#include <future>
#include <mutex>
#include <set>

#include "ctree/errors.hpp"
#include "ctree/hashing.hpp"

namespace ctree {

const char* to_string(BuildEventKind kind) {
    switch (kind) {
        case BuildEventKind::split_started: return "split-started";
        case BuildEventKind::train_progress: return "train-progress";
        case BuildEventKind::candidate_scored: return "candidate-scored";
        case BuildEventKind::seed_chosen: return "seed-chosen";
        case BuildEventKind::split_finished: return "split-finished";
    }
    return "split-started";
}

std::int64_t sample_seed(std::int64_t candidate_seed, NodeId node, std::string_view role) {
    const std::uint64_t h = derive_seed(static_cast<std::uint64_t>(candidate_seed),
                                        "node-" + std::to_string(node) + "/" + std::string(role));
    // 53 bits survive a trip through JSON numbers in a browser
    return static_cast<std::int64_t>(h & ((std::uint64_t{1} << 53) - 1));
}

TreeBuilder::TreeBuilder(const DiffusionBackend& backend, BuilderOptions options)
    : backend_(backend), options_(std::move(options)), scorer_(&backend) {}

void TreeBuilder::emit(const BuildEvent& event) const {
    if (options_.events) options_.events(event);
}

namespace {

struct Candidate {
    std::int64_t seed = 0;
    std::unique_ptr<TrainJob> job;
    std::optional<CandidatePair> pair;
    std::string failure;
};

}  // namespace

std::pair<ConceptTree, SplitRecord> TreeBuilder::split_node(ConceptTree tree, NodeId node_id) {
    const auto started = std::chrono::steady_clock::now();
    const ConceptNode& node = tree.node(node_id);
    if (!node.splittable()) {
        fail(ErrorCode::not_splittable, "node " + std::to_string(node_id) + " is " +
                                            to_string(node.status) +
                                            (node.is_leaf() ? "" : " and already split"));
    }
    if (!tree.dictionary.has_base()) {
        tree.dictionary = tree.dictionary.rebind(backend_.vocabulary());
    }
    const BuildConfig& config = tree.config;
    emit({BuildEventKind::split_started, node_id, {}, 0, 0.0, {}, {}});

    // I^p: the user images at the root, the node's curated samples elsewhere
    ImageSet parent_set = node.parent ? node.samples : tree.root_images;
    if (parent_set.empty()) {
        const std::string tok[1] = {*node.token};
        const auto prompt = compose_prompt(config.sample_template, tok, tree.dictionary);
        const auto pool = backend_.generate(prompt, tree.dictionary,
                                            sample_seed(0, node_id, "parent"), config.score_set_size);
        parent_set = scorer_.curate_training_set(pool, config.train_set_size);
    }

    const NodeId left_id = tree.next_node_id();
    const NodeId right_id = left_id + 1;
    const std::string left_token = placeholder_name(tree.tree_id, left_id);
    const std::string right_token = placeholder_name(tree.tree_id, right_id);
    const std::string tokens[2] = {left_token, right_token};
    const TokenDictionary extended = extend(tree.dictionary, tokens, config.init_word);
    const std::string left_prompt = compose_prompt(config.sample_template, std::span(tokens, 1), extended);
    const std::string right_prompt = compose_prompt(config.sample_template, std::span(tokens + 1, 1), extended);

    std::mutex event_mutex;
    auto progress_for = [&](std::int64_t seed) -> TrainProgressSink {
        if (!options_.events || options_.progress_interval <= 0) return {};
        return [this, &event_mutex, node_id, seed](const TrainProgress& p) {
            if (p.step % options_.progress_interval != 0) return;
            std::lock_guard lock(event_mutex);
            emit({BuildEventKind::train_progress, node_id, seed, p.step, p.loss, {}, {}});
        };
    };

    auto sample_pair = [&](const TokenDictionary& dict, std::int64_t seed, std::string_view tag) {
        const std::string l_role = std::string(tag) + "left";
        const std::string r_role = std::string(tag) + "right";
        ImageSet l = backend_.generate(left_prompt, dict, sample_seed(seed, node_id, l_role),
                                       config.score_set_size);
        ImageSet r = backend_.generate(right_prompt, dict, sample_seed(seed, node_id, r_role),
                                       config.score_set_size);
        return std::pair{std::move(l), std::move(r)};
    };

    auto run_candidate = [&](Candidate& c) {
        c.job = std::make_unique<TrainJob>(parent_set, left_token, right_token, extended, config, c.seed);
        try {
            train_pair(*c.job, config.candidate_steps, backend_, progress_for(c.seed));
        } catch (const Error& e) {
            if (e.code() != ErrorCode::non_finite_loss) throw;
            c.failure = e.what();
            return;
        }
        auto [l, r] = sample_pair(c.job->dictionary(), c.seed, "");
        CandidatePair pair;
        pair.seed = c.seed;
        std::tie(pair.left_embedding, pair.right_embedding) = snapshot_embeddings(*c.job);
        pair.report = scorer_.score_candidate(l, r);
        pair.left_samples = std::move(l);
        pair.right_samples = std::move(r);
        c.pair = std::move(pair);
    };

    std::vector<Candidate> candidates(config.seeds.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) candidates[i].seed = config.seeds[i];
    if (options_.parallel_candidates && backend_.concurrent_training() && candidates.size() > 1) {
        std::vector<std::future<void>> running;
        for (auto& c : candidates) {
            running.push_back(std::async(std::launch::async, run_candidate, std::ref(c)));
        }
        // join everything before rethrowing so no task outlives this frame
        std::exception_ptr first_error;
        for (auto& f : running) {
            try {
                f.get();
            } catch (...) {
                if (!first_error) first_error = std::current_exception();
            }
        }
        if (first_error) std::rethrow_exception(first_error);
    } else {
        for (auto& c : candidates) run_candidate(c);
    }

    SplitRecord record;
    record.parent = node_id;
    std::vector<CandidatePair> viable;
    for (const auto& c : candidates) {
        CandidateOutcome outcome;
        outcome.seed = c.seed;
        outcome.valid = c.pair.has_value();
        outcome.failure = c.failure;
        if (c.pair) {
            outcome.report = c.pair->report;
            emit({BuildEventKind::candidate_scored, node_id, c.seed, config.candidate_steps, 0.0,
                  c.pair->report, {}});
            const auto& r = c.pair->report;
            const double thr = config.self_coherency_threshold;
            if (!(r.self_left < thr && r.self_right < thr)) viable.push_back(*c.pair);
        }
        record.candidates.push_back(std::move(outcome));
    }

    auto finish = [&](ConceptTree t, SplitRecord rec) {
        rec.wall_time_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        t.build_log.push_back(rec);
        emit({BuildEventKind::split_finished, node_id, rec.chosen_seed, 0, 0.0, rec.final_report,
              rec.decision});
        return std::pair{std::move(t), std::move(rec)};
    };

    if (viable.empty()) {
        // nothing coherent to keep: the node stays a leaf and no tokens are added
        tree.node(node_id).status = NodeStatus::leaf_stopped;
        record.attached = false;
        record.decision = SplitDecision::leaf_incoherent;
        return finish(std::move(tree), std::move(record));
    }

    const CandidatePair& best = select_best_seed(viable);
    record.chosen_seed = best.seed;
    emit({BuildEventKind::seed_chosen, node_id, best.seed, 0, 0.0, best.report, {}});

    TrainJob& winner = *std::find_if(candidates.begin(), candidates.end(), [&](const Candidate& c) {
                            return c.seed == best.seed;
                        })->job;
    // losing jobs (and their dictionary clones) are dropped here
    if (config.final_steps > 0) {
        train_pair(winner, config.final_steps, backend_, progress_for(best.seed));
    }
    const TokenDictionary& final_dict = winner.dictionary();
    auto [left_pool, right_pool] = sample_pair(final_dict, best.seed, "final-");
    const ConsistencyReport report = scorer_.score_candidate(left_pool, right_pool);
    const SplitDecision decision = evaluate_stop(report, config);
    record.final_report = report;
    record.decision = decision;
    record.children = {left_id, right_id};

    const int depth = node.depth + 1;
    auto make_child = [&](NodeId id, const std::string& token, ImageSet pool, double self) {
        ConceptNode child;
        child.id = id;
        child.depth = depth;
        child.token = token;
        child.embedding = final_dict.injected_embedding(token);
        child.parent = node_id;
        child.samples = scorer_.curate_training_set(pool, config.train_set_size);
        child.score_samples = std::move(pool);
        child.self_consistency = self;
        child.sibling_cross_consistency = report.cross;
        switch (decision) {
            case SplitDecision::split_ok: child.status = NodeStatus::active; break;
            case SplitDecision::leaf_not_distinct: child.status = NodeStatus::leaf_stopped; break;
            case SplitDecision::leaf_incoherent:
                child.status = self < config.self_coherency_threshold ? NodeStatus::leaf_incoherent
                                                                      : NodeStatus::active;
                break;
        }
        return child;
    };
    ConceptNode left = make_child(left_id, left_token, std::move(left_pool), report.self_left);
    ConceptNode right = make_child(right_id, right_token, std::move(right_pool), report.self_right);

    tree.dictionary = final_dict;
    tree.node(node_id).children = {left_id, right_id};
    tree.nodes.emplace(left_id, std::move(left));
    tree.nodes.emplace(right_id, std::move(right));
    return finish(std::move(tree), std::move(record));
}

ConceptTree TreeBuilder::run_breadth_first(ConceptTree tree) {
    std::set<NodeId> rolled_back;
    for (const auto& rec : tree.build_log) {
        if (!rec.attached) rolled_back.insert(rec.parent);
    }
    for (;;) {
        std::optional<NodeId> next;
        // ids grow level by level, so the smallest pending id is the next
        // node in breadth-first order
        for (const auto& [id, n] : tree.nodes) {
            if (n.splittable() && n.depth < tree.config.max_depth && !rolled_back.count(id)) {
                next = id;
                break;
            }
        }
        if (!next) break;
        auto [updated, record] = split_node(std::move(tree), *next);
        tree = std::move(updated);
        if (!record.attached) rolled_back.insert(*next);
        if (options_.checkpoint) options_.checkpoint(tree);
    }
    return tree;
}

ConceptTree TreeBuilder::build_tree(const ImageSet& root_images, const BuildConfig& config,
                                    const std::string& tree_id) {
    if (root_images.empty()) {
        fail(ErrorCode::empty_set, "a tree needs at least one root image");
    }
    validate(root_images);
    ConceptTree tree = make_tree(tree_id, root_images, TokenDictionary(backend_.vocabulary()), config);
    if (options_.checkpoint) options_.checkpoint(tree);
    return run_breadth_first(std::move(tree));
}

ConceptTree TreeBuilder::resume_build(ConceptTree tree) {
    const auto problems = check_build_log(tree);
    if (!problems.empty()) {
        std::string msg = "build log does not match the tree:";
        for (const auto& p : problems) msg += "\n  " + p;
        fail(ErrorCode::corrupt_log, msg);
    }
    if (!tree.dictionary.has_base()) {
        tree.dictionary = tree.dictionary.rebind(backend_.vocabulary());
    }
    return run_breadth_first(std::move(tree));
}

std::vector<std::string> check_build_log(const ConceptTree& tree) {
    std::vector<std::string> out;
    for (const auto& v : validate_tree(tree)) {
        out.push_back((v.node ? "node " + std::to_string(*v.node) + ": " : std::string()) + v.rule +
                      ": " + v.detail);
    }
    std::set<NodeId> logged;
    for (const auto& rec : tree.build_log) {
        const std::string where = "split of node " + std::to_string(rec.parent);
        if (!tree.contains(rec.parent)) {
            out.push_back(where + ": parent missing");
            continue;
        }
        if (!logged.insert(rec.parent).second) out.push_back(where + ": logged twice");
        const auto& parent = tree.node(rec.parent);
        if (rec.attached) {
            if (rec.children.size() != 2 || parent.children != rec.children) {
                out.push_back(where + ": children differ from the node graph");
            }
            if (!rec.chosen_seed || !rec.final_report) {
                out.push_back(where + ": attached split without chosen seed or report");
            } else if (std::find(tree.config.seeds.begin(), tree.config.seeds.end(), *rec.chosen_seed) ==
                       tree.config.seeds.end()) {
                out.push_back(where + ": chosen seed not among configured seeds");
            } else if (evaluate_stop(*rec.final_report, tree.config) != rec.decision) {
                out.push_back(where + ": decision disagrees with its report");
            }
        } else if (!parent.children.empty()) {
            out.push_back(where + ": rolled back but node has children");
        }
    }
    for (const auto& [id, n] : tree.nodes) {
        if (!n.children.empty() && !logged.count(id)) {
            out.push_back("node " + std::to_string(id) + ": split missing from the log");
        }
        if (n.parent && !n.embedding) {
            out.push_back("node " + std::to_string(id) + ": embedding missing");
        }
    }
    return out;
}

}  // namespace ctree
