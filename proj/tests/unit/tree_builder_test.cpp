#include <doctest.h>

#include <cmath>
#include <set>

#include "ctree/consistency.hpp"
#include "ctree/errors.hpp"
#include "ctree/mock_backend.hpp"
#include "ctree/tree_builder.hpp"
#include "test_support.hpp"

using namespace ctree;

namespace {

struct Built {
    HierarchicalFixture fx;
    std::unique_ptr<MockBackend> backend;
    ConceptTree tree;
};

Built build_fixture(BuilderOptions opts = {}, BuildConfig cfg = ctree::testing::quick_config()) {
    Built b{make_hierarchical_fixture(), nullptr, {}};
    b.backend = std::make_unique<MockBackend>(b.fx.space);
    TreeBuilder builder(*b.backend, std::move(opts));
    b.tree = builder.build_tree(b.fx.root_images, cfg, "fx");
    return b;
}

std::vector<double> centroid(const ImageSet& s) {
    std::vector<double> c(s.images.front().vector.size(), 0.0);
    for (const auto& img : s.images)
        for (std::size_t i = 0; i < c.size(); ++i) c[i] += img.vector[i] / static_cast<double>(s.size());
    return c;
}

double cosine(const std::vector<double>& a, std::span<const float> b) {
    std::vector<float> af(a.begin(), a.end());
    return ctree::testing::brute_cosine(af, b);
}

ErrorCode error_code(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("no error raised");
    return ErrorCode::io;
}

}  // namespace

TEST_CASE("hierarchical fixture builds the planted two-level tree") {
    const auto b = build_fixture();
    const auto& t = b.tree;
    CHECK(validate_tree(t).empty());
    REQUIRE(t.nodes.size() == 7);
    CHECK(t.dictionary.injected().size() == t.non_root_count());
    CHECK(t.node(0).children == std::vector<NodeId>{1, 2});
    REQUIRE(t.build_log.size() == 3);
    CHECK(t.build_log[0].decision == SplitDecision::split_ok);

    // which child got A depends on the winning seed, so match by direction
    const bool v1_is_a = cosine(centroid(t.node(1).samples), b.fx.a.values()) >
                         cosine(centroid(t.node(2).samples), b.fx.a.values());
    const NodeId a_node = v1_is_a ? 1 : 2;
    const NodeId b_node = v1_is_a ? 2 : 1;
    CHECK(cosine(centroid(t.node(a_node).samples), b.fx.a.values()) > 0.9);

    // A is a single concept: its split is rejected as indistinct
    CHECK(t.node(t.node(a_node).children[0]).status == NodeStatus::leaf_stopped);
    // B's split separates the two variants
    const auto& bk = t.node(b_node).children;
    REQUIRE(bk.size() == 2);
    CHECK(t.node(bk[0]).status == NodeStatus::active);
    CHECK(t.node(bk[1]).status == NodeStatus::active);
    const auto k0 = centroid(t.node(bk[0]).samples);
    const auto k1 = centroid(t.node(bk[1]).samples);
    const double best = std::max(std::min(cosine(k0, b.fx.b1.values()), cosine(k1, b.fx.b2.values())),
                                 std::min(cosine(k0, b.fx.b2.values()), cosine(k1, b.fx.b1.values())));
    CHECK(best > 0.9);

    for (const auto& rec : t.build_log) {
        if (rec.decision != SplitDecision::split_ok) continue;
        for (const NodeId k : rec.children) {
            CHECK(*t.node(k).self_consistency > *t.node(k).sibling_cross_consistency);
        }
    }
}

TEST_CASE("token names and embeddings follow the node ids") {
    const auto b = build_fixture();
    for (const auto& [id, n] : b.tree.nodes) {
        if (id == 0) continue;
        CHECK(*n.token == placeholder_name("fx", id));
        CHECK(*n.embedding == b.tree.dictionary.injected_embedding(*n.token));
        CHECK(n.samples.size() == 10);
        CHECK(n.score_samples.size() == 40);
    }
}

TEST_CASE("builds are deterministic and independent of candidate threading") {
    const auto a = build_fixture();
    const auto b = build_fixture();
    BuilderOptions serial;
    serial.parallel_candidates = false;
    const auto c = build_fixture(serial);
    CHECK(a.tree.same_content(b.tree));
    CHECK(a.tree.same_content(c.tree));
}

TEST_CASE("the winning seed is the argmax of the recorded candidates") {
    const auto b = build_fixture();
    for (const auto& rec : b.tree.build_log) {
        REQUIRE(rec.candidates.size() == 4);
        std::vector<CandidatePair> pairs;
        for (const auto& c : rec.candidates) {
            CandidatePair p;
            p.seed = c.seed;
            p.report = *c.report;
            pairs.push_back(p);
        }
        CHECK(*rec.chosen_seed == select_best_seed(pairs).seed);
    }
}

TEST_CASE("events arrive in order for each split") {
    std::vector<BuildEvent> events;
    BuilderOptions opts;
    opts.events = [&](const BuildEvent& e) { events.push_back(e); };
    opts.parallel_candidates = false;
    opts.progress_interval = 100;
    build_fixture(opts);
    REQUIRE(!events.empty());
    CHECK(events.front().kind == BuildEventKind::split_started);
    CHECK(events.back().kind == BuildEventKind::split_finished);
    int finished = 0;
    int scored = 0;
    for (const auto& e : events) {
        finished += e.kind == BuildEventKind::split_finished;
        scored += e.kind == BuildEventKind::candidate_scored;
    }
    CHECK(finished == 3);
    CHECK(scored == 12);
}

TEST_CASE("split_node errors") {
    auto b = build_fixture();
    TreeBuilder builder(*b.backend);
    CHECK(error_code([&] { builder.split_node(b.tree, 99); }) == ErrorCode::unknown_node);
    CHECK(error_code([&] { builder.split_node(b.tree, 0); }) == ErrorCode::not_splittable);
    CHECK(error_code([&] { builder.split_node(b.tree, 3); }) == ErrorCode::not_splittable);
}

TEST_CASE("a split with no coherent candidate is rolled back") {
    auto fx = make_hierarchical_fixture();
    fx.space.sigma_gen = 5.0;  // generations are pure noise
    MockBackend backend(fx.space);
    TreeBuilder builder(backend);
    BuildConfig cfg = ctree::testing::quick_config();
    ConceptTree t = make_tree("noisy", fx.root_images, TokenDictionary(backend.vocabulary()), cfg);
    const auto dict_before = t.dictionary;
    auto [after, rec] = builder.split_node(t, 0);
    CHECK(!rec.attached);
    CHECK(rec.decision == SplitDecision::leaf_incoherent);
    CHECK(after.nodes.size() == 1);
    CHECK(after.dictionary == dict_before);
    CHECK(after.node(0).status == NodeStatus::leaf_stopped);
    CHECK(validate_tree(after).empty());
}

TEST_CASE("resume after an interruption equals an uninterrupted build") {
    const auto full = build_fixture();

    auto fx = make_hierarchical_fixture();
    MockBackend backend(fx.space);
    ConceptTree saved;
    struct Interrupt {};
    BuilderOptions opts;
    opts.checkpoint = [&](const ConceptTree& t) {
        saved = t;
        // the fresh root is checkpointed too, before any split
        if (t.build_log.size() == 2) throw Interrupt{};
    };
    TreeBuilder interrupted(backend, opts);
    CHECK_THROWS_AS(interrupted.build_tree(fx.root_images, ctree::testing::quick_config(), "fx"), Interrupt);
    CHECK(saved.build_log.size() == 2);

    TreeBuilder resumer(backend);
    const auto resumed = resumer.resume_build(saved);
    CHECK(resumed.same_content(full.tree));
}

TEST_CASE("check_build_log catches log/node disagreement") {
    auto b = build_fixture();
    CHECK(check_build_log(b.tree).empty());
    auto bad = b.tree;
    bad.build_log.pop_back();
    CHECK(!check_build_log(bad).empty());
    TreeBuilder builder(*b.backend);
    CHECK(error_code([&] { builder.resume_build(bad); }) == ErrorCode::corrupt_log);
}

TEST_CASE("sample_seed separates roles and nodes") {
    std::set<std::int64_t> seen;
    for (NodeId n = 0; n < 5; ++n)
        for (const auto* role : {"left", "right", "final-left", "final-right"}) seen.insert(sample_seed(1000, n, role));
    CHECK(seen.size() == 20);
    CHECK(sample_seed(0, 0, "left") == sample_seed(0, 0, "left"));
    CHECK(sample_seed(0, 0, "left") >= 0);
}

TEST_CASE("max_depth limits the tree") {
    BuildConfig cfg = ctree::testing::quick_config();
    cfg.max_depth = 1;
    const auto b = build_fixture({}, cfg);
    CHECK(b.tree.nodes.size() == 3);
    cfg.max_depth = 0;
    const auto z = build_fixture({}, cfg);
    CHECK(z.tree.nodes.size() == 1);
}
