#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ctree/core.hpp"
#include "ctree/token_dictionary.hpp"

namespace ctree {

using NodeId = int;

enum class NodeStatus { root, active, leaf_stopped, leaf_incoherent };

const char* to_string(NodeStatus status);
NodeStatus node_status_from_string(const std::string& s);

struct ConceptNode {
    NodeId id = 0;
    int depth = 0;
    std::optional<std::string> token;
    std::optional<EmbeddingVector> embedding;
    std::optional<NodeId> parent;
    std::vector<NodeId> children;
    // curated subset; also the training set when this node is split
    ImageSet samples;
    // full pool the stored scores were computed from
    ImageSet score_samples;
    std::optional<double> self_consistency;
    std::optional<double> sibling_cross_consistency;
    NodeStatus status = NodeStatus::active;

    bool is_leaf() const { return children.empty(); }
    bool splittable() const {
        return is_leaf() && (status == NodeStatus::root || status == NodeStatus::active);
    }

    friend bool operator==(const ConceptNode&, const ConceptNode&) = default;
};

struct CandidateOutcome {
    std::int64_t seed = 0;
    bool valid = true;
    std::string failure;
    std::optional<ConsistencyReport> report;

    friend bool operator==(const CandidateOutcome&, const CandidateOutcome&) = default;
};

struct SplitRecord {
    NodeId parent = 0;
    std::vector<CandidateOutcome> candidates;
    std::optional<std::int64_t> chosen_seed;
    std::optional<ConsistencyReport> final_report;
    SplitDecision decision = SplitDecision::split_ok;
    // false when every candidate failed and the split was rolled back
    bool attached = true;
    std::vector<NodeId> children;
    double wall_time_seconds = 0.0;

    /// Equality over everything except wall time.
    bool same_outcome(const SplitRecord& other) const;
};

struct ConceptTree {
    std::string tree_id;
    ImageSet root_images;
    std::map<NodeId, ConceptNode> nodes;
    TokenDictionary dictionary;
    BuildConfig config;
    std::vector<SplitRecord> build_log;

    const ConceptNode& node(NodeId id) const;
    ConceptNode& node(NodeId id);
    bool contains(NodeId id) const { return nodes.count(id) != 0; }
    NodeId next_node_id() const;
    std::size_t non_root_count() const;

    /// Field equality, ignoring split wall times.
    bool same_content(const ConceptTree& other) const;
};

/// A fresh tree holding only the virtual root.
ConceptTree make_tree(std::string tree_id, ImageSet root_images, TokenDictionary dictionary,
                      BuildConfig config);

struct Violation {
    std::optional<NodeId> node;
    std::string rule;
    std::string detail;
};

/// Empty iff every tree invariant holds. Never throws, never mutates.
std::vector<Violation> validate_tree(const ConceptTree& tree);

}  // namespace ctree
