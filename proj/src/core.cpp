#include "ctree/core.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "ctree/errors.hpp"
#include "ctree/tree.hpp"

namespace ctree {

const char* to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::invalid_argument: return "invalid_argument";
        case ErrorCode::domain: return "domain";
        case ErrorCode::duplicate_token: return "duplicate_token";
        case ErrorCode::unknown_token: return "unknown_token";
        case ErrorCode::unknown_init_word: return "unknown_init_word";
        case ErrorCode::key_collision: return "key_collision";
        case ErrorCode::base_mismatch: return "base_mismatch";
        case ErrorCode::frozen_token: return "frozen_token";
        case ErrorCode::arity_mismatch: return "arity_mismatch";
        case ErrorCode::token_not_trainable: return "token_not_trainable";
        case ErrorCode::decode: return "decode";
        case ErrorCode::generation: return "generation";
        case ErrorCode::non_finite_loss: return "non_finite_loss";
        case ErrorCode::singleton_self_consistency: return "singleton_self_consistency";
        case ErrorCode::empty_set: return "empty_set";
        case ErrorCode::empty_candidates: return "empty_candidates";
        case ErrorCode::pool_too_small: return "pool_too_small";
        case ErrorCode::not_splittable: return "not_splittable";
        case ErrorCode::unknown_node: return "unknown_node";
        case ErrorCode::corrupt_log: return "corrupt_log";
        case ErrorCode::io: return "io";
        case ErrorCode::checksum: return "checksum";
        case ErrorCode::schema_version: return "schema_version";
        case ErrorCode::backend_unavailable: return "backend_unavailable";
    }
    return "unknown";
}

EmbeddingVector::EmbeddingVector(std::vector<float> values) : values_(std::move(values)) {
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (!std::isfinite(values_[i])) {
            fail(ErrorCode::domain, "embedding entry " + std::to_string(i) + " is not finite");
        }
    }
}

EmbeddingVector EmbeddingVector::zeros(std::size_t dim) {
    return EmbeddingVector(std::vector<float>(dim, 0.0f));
}

std::vector<double> EmbeddingVector::to_double() const {
    return {values_.begin(), values_.end()};
}

const char* to_string(ImageSource source) {
    return source == ImageSource::generated ? "generated" : "user-provided";
}

ImageSource image_source_from_string(const std::string& s) {
    if (s == "generated") return ImageSource::generated;
    if (s == "user-provided") return ImageSource::user_provided;
    fail(ErrorCode::invalid_argument, "unknown image source '" + s + "'");
}

void validate(const ImageRef& image) {
    if (image.id.empty()) {
        fail(ErrorCode::invalid_argument, "image without id");
    }
    const bool has_provenance = image.seed.has_value() && image.prompt.has_value();
    const bool has_any = image.seed.has_value() || image.prompt.has_value();
    if (image.source == ImageSource::generated && !has_provenance) {
        fail(ErrorCode::invalid_argument, "generated image " + image.id + " lacks seed or prompt");
    }
    if (image.source == ImageSource::user_provided && has_any) {
        fail(ErrorCode::invalid_argument,
             "user-provided image " + image.id + " carries generation metadata");
    }
}

void validate(const ImageSet& set) {
    for (const auto& image : set.images) {
        validate(image);
    }
    if (set.embeddings && set.embeddings->rows != set.images.size()) {
        fail(ErrorCode::invalid_argument, "cached embedding rows do not match image count");
    }
}

void validate(const BuildConfig& c) {
    auto bad = [](const std::string& what) { fail(ErrorCode::domain, "config: " + what); };
    if (!(c.alpha >= 0.0 && c.alpha <= 1.0)) bad("alpha must lie in [0, 1]");
    auto in_unit = [](double v) { return v >= -1.0 && v <= 1.0; };
    if (!in_unit(c.self_coherency_threshold)) bad("self-coherency threshold outside [-1, 1]");
    if (!in_unit(c.sibling_distinctness_threshold)) bad("distinctness threshold outside [-1, 1]");
    if (c.train_set_size < 2) bad("train-set-size must be >= 2");
    if (c.score_set_size < c.train_set_size) bad("score-set-size must be >= train-set-size");
    if (c.seeds.empty()) bad("seed list is empty");
    if (std::set<std::int64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size()) {
        bad("seeds must be distinct");
    }
    if (c.candidate_steps < 1 || c.final_steps < 0) bad("step counts");
    if (c.batch_size < 1) bad("batch-size must be >= 1");
    if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate)) bad("learning rate");
    if (c.max_depth < 0) bad("max-depth must be >= 0");
    if (c.init_word.empty()) bad("init word is empty");
}

double selection_objective(double self_left, double self_right, double cross) {
    return self_left + self_right + (std::min(self_left, self_right) - cross);
}

ConsistencyReport make_report(double self_left, double self_right, double cross) {
    return {self_left, self_right, cross, selection_objective(self_left, self_right, cross)};
}

const char* to_string(SplitDecision decision) {
    switch (decision) {
        case SplitDecision::split_ok: return "split-ok";
        case SplitDecision::leaf_incoherent: return "leaf-incoherent";
        case SplitDecision::leaf_not_distinct: return "leaf-not-distinct";
    }
    return "split-ok";
}

SplitDecision split_decision_from_string(const std::string& s) {
    if (s == "split-ok") return SplitDecision::split_ok;
    if (s == "leaf-incoherent") return SplitDecision::leaf_incoherent;
    if (s == "leaf-not-distinct") return SplitDecision::leaf_not_distinct;
    fail(ErrorCode::invalid_argument, "unknown split decision '" + s + "'");
}

// --- tree ------------------------------------------------------------------

const char* to_string(NodeStatus status) {
    switch (status) {
        case NodeStatus::root: return "root";
        case NodeStatus::active: return "active";
        case NodeStatus::leaf_stopped: return "leaf-stopped";
        case NodeStatus::leaf_incoherent: return "leaf-incoherent";
    }
    return "active";
}

NodeStatus node_status_from_string(const std::string& s) {
    if (s == "root") return NodeStatus::root;
    if (s == "active") return NodeStatus::active;
    if (s == "leaf-stopped") return NodeStatus::leaf_stopped;
    if (s == "leaf-incoherent") return NodeStatus::leaf_incoherent;
    fail(ErrorCode::invalid_argument, "unknown node status '" + s + "'");
}

bool SplitRecord::same_outcome(const SplitRecord& o) const {
    return parent == o.parent && candidates == o.candidates && chosen_seed == o.chosen_seed &&
           final_report == o.final_report && decision == o.decision && attached == o.attached &&
           children == o.children;
}

const ConceptNode& ConceptTree::node(NodeId id) const {
    const auto it = nodes.find(id);
    if (it == nodes.end()) {
        fail(ErrorCode::unknown_node, "tree " + tree_id + " has no node " + std::to_string(id));
    }
    return it->second;
}

ConceptNode& ConceptTree::node(NodeId id) {
    return const_cast<ConceptNode&>(std::as_const(*this).node(id));
}

NodeId ConceptTree::next_node_id() const {
    return nodes.empty() ? 0 : nodes.rbegin()->first + 1;
}

std::size_t ConceptTree::non_root_count() const {
    return static_cast<std::size_t>(
        std::count_if(nodes.begin(), nodes.end(), [](const auto& kv) { return kv.second.parent; }));
}

bool ConceptTree::same_content(const ConceptTree& o) const {
    if (tree_id != o.tree_id || !(root_images == o.root_images) || nodes != o.nodes ||
        !(dictionary == o.dictionary) || !(config == o.config) ||
        build_log.size() != o.build_log.size()) {
        return false;
    }
    for (std::size_t i = 0; i < build_log.size(); ++i) {
        if (!build_log[i].same_outcome(o.build_log[i])) return false;
    }
    return true;
}

ConceptTree make_tree(std::string tree_id, ImageSet root_images, TokenDictionary dictionary,
                      BuildConfig config) {
    validate(config);
    ConceptTree tree;
    tree.tree_id = std::move(tree_id);
    tree.root_images = std::move(root_images);
    tree.dictionary = std::move(dictionary);
    tree.config = std::move(config);
    ConceptNode root;
    root.id = 0;
    root.depth = 0;
    root.status = NodeStatus::root;
    root.samples = tree.root_images;
    tree.nodes.emplace(0, std::move(root));
    return tree;
}

std::vector<Violation> validate_tree(const ConceptTree& tree) {
    std::vector<Violation> out;
    auto add = [&](std::optional<NodeId> node, std::string rule, std::string detail) {
        out.push_back({node, std::move(rule), std::move(detail)});
    };

    std::vector<NodeId> roots;
    std::map<std::string, std::vector<NodeId>> token_owners;
    for (const auto& [id, node] : tree.nodes) {
        if (node.id != id) add(id, "id", "stored id differs from key");
        if (!node.children.empty() && node.children.size() != 2) {
            add(id, "arity", "node has " + std::to_string(node.children.size()) + " children");
        }
        if (!node.parent) {
            roots.push_back(id);
            if (node.token || node.embedding) {
                add(id, "root", "root carries a token or embedding");
            }
            continue;
        }
        if (!tree.contains(*node.parent)) {
            add(id, "parent", "parent " + std::to_string(*node.parent) + " missing");
        } else {
            const auto& siblings = tree.node(*node.parent).children;
            if (std::find(siblings.begin(), siblings.end(), id) == siblings.end()) {
                add(id, "parent", "not listed among its parent's children");
            }
        }
        if (!node.token) {
            add(id, "token", "non-root node without token");
            continue;
        }
        token_owners[*node.token].push_back(id);
        if (!tree.dictionary.is_injected(*node.token)) {
            add(id, "dictionary", "token " + *node.token + " does not resolve");
        } else if (node.embedding &&
                   !(tree.dictionary.injected_embedding(*node.token) == *node.embedding)) {
            add(id, "dictionary", "node embedding differs from dictionary entry");
        }
        if (node.status == NodeStatus::root) add(id, "status", "non-root node marked root");
    }
    if (roots.size() != 1) {
        add(std::nullopt, "root", "expected one root, found " + std::to_string(roots.size()));
    }
    for (const auto& [token, owners] : token_owners) {
        if (owners.size() > 1) {
            for (std::size_t i = 1; i < owners.size(); ++i) {
                add(owners[i], "unique-token",
                    "token " + token + " already used by node " + std::to_string(owners[0]));
            }
        }
    }
    for (const auto& [id, node] : tree.nodes) {
        for (const NodeId child : node.children) {
            if (!tree.contains(child)) {
                add(id, "children", "child " + std::to_string(child) + " missing");
            } else if (tree.node(child).parent != id) {
                add(id, "children", "child " + std::to_string(child) + " names another parent");
            }
        }
    }
    // every node must reach the root without revisiting a node
    for (const auto& [id, node] : tree.nodes) {
        std::set<NodeId> seen{id};
        auto cursor = node.parent;
        while (cursor && tree.contains(*cursor)) {
            if (!seen.insert(*cursor).second) {
                add(id, "acyclic", "parent chain loops");
                break;
            }
            cursor = tree.node(*cursor).parent;
        }
    }
    return out;
}

}  // namespace ctree
