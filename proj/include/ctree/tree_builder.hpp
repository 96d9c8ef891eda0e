#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>

#include "ctree/backend.hpp"
#include "ctree/consistency.hpp"
#include "ctree/trainer.hpp"
#include "ctree/tree.hpp"

namespace ctree {

enum class BuildEventKind {
    split_started,
    train_progress,
    candidate_scored,
    seed_chosen,
    split_finished,
};

const char* to_string(BuildEventKind kind);

struct BuildEvent {
    BuildEventKind kind = BuildEventKind::split_started;
    NodeId node = 0;
    std::optional<std::int64_t> seed;
    int step = 0;
    double loss = 0.0;
    std::optional<ConsistencyReport> report;
    std::optional<SplitDecision> decision;
};

using BuildEventSink = std::function<void(const BuildEvent&)>;

struct BuilderOptions {
    BuildEventSink events;
    /// Called with the tree after every completed split (persist here).
    std::function<void(const ConceptTree&)> checkpoint;
    /// Run the k candidate jobs on worker threads when the backend allows.
    bool parallel_candidates = true;
    /// Emit train_progress every this many steps (0 = never).
    int progress_interval = 50;
};

/// Orchestrates node splits: training set, dictionary extension, seeded
/// candidates, selection, finalisation, child sampling and the stop rule.
class TreeBuilder {
public:
    TreeBuilder(const DiffusionBackend& backend, BuilderOptions options = {});

    /// Throws Error(not_splittable) unless the node is the root or an active
    /// leaf; Error(unknown_node) for a missing id.
    std::pair<ConceptTree, SplitRecord> split_node(ConceptTree tree, NodeId node);

    ConceptTree build_tree(const ImageSet& root_images, const BuildConfig& config,
                           const std::string& tree_id);

    /// Continues breadth-first splitting; completed splits are kept as is.
    /// Throws Error(corrupt_log) when the log and the nodes disagree.
    ConceptTree resume_build(ConceptTree tree);

    ConsistencyScorer& scorer() noexcept { return scorer_; }

private:
    ConceptTree run_breadth_first(ConceptTree tree);
    void emit(const BuildEvent& event) const;

    const DiffusionBackend& backend_;
    BuilderOptions options_;
    ConsistencyScorer scorer_;
};

/// Log/node consistency check used by resume_build; empty when sound.
std::vector<std::string> check_build_log(const ConceptTree& tree);

/// Seed used for a named image set under a split candidate.
std::int64_t sample_seed(std::int64_t candidate_seed, NodeId node, std::string_view role);

}  // namespace ctree
