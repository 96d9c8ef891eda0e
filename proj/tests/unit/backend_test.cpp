#include <doctest.h>

#include <cmath>
#include <random>

#include "ctree/errors.hpp"
#include "ctree/mock_backend.hpp"
#include "test_support.hpp"

using namespace ctree;

TEST_CASE("scaled-linear schedule matches a numpy reference") {
    const auto s = NoiseSchedule::scaled_linear();
    // numpy: b = linspace(sqrt(0.00085), sqrt(0.012), 1000)**2; a = cumprod(1 - b)
    CHECK(s.alpha_at(1) == doctest::Approx(0.9995749096490968).epsilon(1e-12));
    CHECK(s.sigma_at(1) == doctest::Approx(0.029154759474226803).epsilon(1e-10));
    CHECK(s.alpha_at(500) == doctest::Approx(0.526943688126604).epsilon(1e-12));
    CHECK(s.sigma_at(500) == doctest::Approx(0.8499001997549668).epsilon(1e-12));
    CHECK(s.alpha_at(1000) == doctest::Approx(0.0682649142171675).epsilon(1e-12));
    CHECK(s.sigma_at(1000) == doctest::Approx(0.9976672298351403).epsilon(1e-12));
    CHECK_NOTHROW(validate(s));
    CHECK_THROWS_AS(s.alpha_at(0), Error);
    CHECK_THROWS_AS(s.sigma_at(1001), Error);
}

TEST_CASE("noise_latent is alpha z + sigma eps") {
    const auto s = NoiseSchedule::scaled_linear();
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g;
    for (int t : {1, 17, 500, 1000}) {
        std::vector<double> z(33);
        std::vector<double> e(33);
        for (auto& x : z) x = g(rng);
        for (auto& x : e) x = g(rng);
        const auto out = noise_latent(z, t, e, s);
        for (std::size_t i = 0; i < z.size(); ++i) {
            CHECK(std::fabs(out[i] - (s.alpha[t - 1] * z[i] + s.sigma[t - 1] * e[i])) < 1e-14);
        }
    }
    const std::vector<double> z(3);
    const std::vector<double> e(2);
    CHECK_THROWS_AS(noise_latent(z, 1, e, s), Error);
    CHECK_THROWS_AS(noise_latent(z, 0, z, s), Error);
}

TEST_CASE("concept space JSON round trip and validation") {
    const auto f = make_hierarchical_fixture();
    const auto back = ConceptSpace::from_json_text(f.space.to_json_text());
    CHECK(back.concepts == f.space.concepts);
    CHECK(back.families.size() == 1);
    CHECK(MockBackend(back).weights_checksum() == MockBackend(f.space).weights_checksum());
    CHECK_THROWS_AS(ConceptSpace::from_json_text("{"), Error);
    CHECK_THROWS_AS(ConceptSpace::from_json_text(R"({"dim": 2, "concepts": {"x": [1]}})"), Error);
}

namespace {

// Closed form of the mock loss for one sample, written from the definition.
double oracle_loss(const std::vector<std::vector<double>>& toks, const std::vector<double>& z, double kappa,
                   double lambda) {
    std::vector<double> c(z.size(), 0.0);
    for (const auto& t : toks)
        for (std::size_t i = 0; i < z.size(); ++i) c[i] += t[i] / static_cast<double>(toks.size());
    auto sq = [&](const std::vector<double>& a) {
        double s = 0;
        for (std::size_t i = 0; i < z.size(); ++i) s += (a[i] - z[i]) * (a[i] - z[i]);
        return s;
    };
    double best = 1e300;
    for (const auto& t : toks) best = std::min(best, sq(t));
    return kappa * (sq(c) + lambda * best);
}

struct GradFixture {
    MockBackend backend;
    TokenDictionary dict;
    BackendBatch batch;
    std::vector<std::string> tokens{"t_v1", "t_v2"};
};

GradFixture grad_fixture(double lambda, std::uint64_t seed) {
    auto fx = make_hierarchical_fixture();
    fx.space.aspect_weight = lambda;
    MockBackend backend(fx.space);
    TokenDictionary dict(backend.vocabulary());
    const std::vector<std::string> toks{"t_v1", "t_v2"};
    dict = extend(dict, toks, "object");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 0.5);
    for (const auto& t : toks) {
        std::vector<float> v(fx.space.dim);
        for (auto& x : v) x = static_cast<float>(g(rng));
        dict.set(t, EmbeddingVector(v));
    }
    BackendBatch batch;
    batch.prompt = "A photograph of <t_v1> <t_v2> teapot";
    for (int i = 0; i < 3; ++i) {
        std::vector<double> z(fx.space.dim);
        std::vector<double> e(fx.space.dim);
        for (auto& x : z) x = g(rng);
        for (auto& x : e) x = g(rng) * 2;
        batch.latents.push_back(z);
        batch.noises.push_back(e);
        batch.timesteps.push_back(1 + 300 * i);
    }
    return {std::move(backend), std::move(dict), std::move(batch)};
}

}  // namespace

TEST_CASE("mock loss equals the closed form regardless of timestep and noise") {
    for (const double lambda : {0.0, 3.0}) {
        auto g = grad_fixture(lambda, 21);
        const auto r = g.backend.loss_and_gradient(g.batch, g.dict, g.tokens);
        std::vector<std::vector<double>> toks{g.dict.injected_embedding("t_v1").to_double(),
                                              g.dict.injected_embedding("t_v2").to_double(),
                                              g.dict.lookup("teapot")->to_double()};
        double want = 0;
        for (const auto& z : g.batch.latents) want += oracle_loss(toks, z, 5.0, lambda) / 3.0;
        CHECK(r.loss == doctest::Approx(want).epsilon(1e-10));
    }
}

TEST_CASE("mock gradients match central finite differences") {
    for (const double lambda : {0.0, 3.0}) {
        for (std::uint64_t seed : {1u, 2u, 3u}) {
            auto g = grad_fixture(lambda, seed);
            const auto r = g.backend.loss_and_gradient(g.batch, g.dict, g.tokens);
            for (const auto& tok : g.tokens) {
                const auto base = g.dict.injected_embedding(tok);
                const auto& grad = r.gradients.at(tok);
                double err = 0;
                double norm = 0;
                for (std::size_t i = 0; i < base.size(); ++i) {
                    auto plus = base;
                    auto minus = base;
                    plus.mutable_values()[i] += 1e-3f;
                    minus.mutable_values()[i] -= 1e-3f;
                    const double h = static_cast<double>(plus[i]) - minus[i];
                    auto dp = g.dict;
                    auto dm = g.dict;
                    dp.set(tok, plus);
                    dm.set(tok, minus);
                    const double fd = (g.backend.loss_and_gradient(g.batch, dp, g.tokens).loss -
                                       g.backend.loss_and_gradient(g.batch, dm, g.tokens).loss) / h;
                    err += (fd - grad[i]) * (fd - grad[i]);
                    norm += fd * fd;
                }
                CAPTURE(lambda);
                // gradients are stored as float32, so 1e-6 relative is the floor
                CHECK(std::sqrt(err / norm) < 1e-5);
            }
        }
    }
}

TEST_CASE("only injected tokens are trainable") {
    auto g = grad_fixture(3.0, 5);
    const std::vector<std::string> bad{"teapot"};
    try {
        g.backend.loss_and_gradient(g.batch, g.dict, bad);
        FAIL("expected error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::token_not_trainable);
    }
}

TEST_CASE("generation is deterministic and seed dependent") {
    const auto fx = make_hierarchical_fixture();
    MockBackend backend(fx.space);
    TokenDictionary dict(backend.vocabulary());
    const auto a = backend.generate("a photo of teapot", dict, 4, 6);
    const auto b = backend.generate("a photo of teapot", dict, 4, 6);
    const auto c = backend.generate("a photo of teapot", dict, 5, 6);
    CHECK(a == b);
    CHECK(a.images[0].vector != c.images[0].vector);
    CHECK(a.images[0].id != c.images[0].id);
    for (const auto& img : a.images) {
        CHECK(img.source == ImageSource::generated);
        CHECK(img.seed == 4);
        CHECK_NOTHROW(validate(img));
    }
    CHECK_THROWS_AS(backend.generate("teapot", dict, 0, 0), Error);
}

TEST_CASE("family prompts alternate between components") {
    const auto fx = make_hierarchical_fixture();
    MockBackend backend(fx.space);
    TokenDictionary dict(backend.vocabulary());
    const auto set = backend.generate("lamp_red lamp_blue", dict, 0, 4);
    auto cos_to = [](const std::vector<float>& v, const EmbeddingVector& e) {
        return testing::brute_cosine(v, e.values());
    };
    // sigma_gen noise keeps them off the exact concept
    CHECK(cos_to(set.images[0].vector, fx.b1) > 0.95);
    CHECK(cos_to(set.images[1].vector, fx.b2) > 0.95);
    CHECK(cos_to(set.images[2].vector, fx.b1) > 0.95);
    CHECK(cos_to(set.images[0].vector, fx.b1) > cos_to(set.images[0].vector, fx.b2));
    CHECK(cos_to(set.images[1].vector, fx.b2) > cos_to(set.images[1].vector, fx.b1));
}

TEST_CASE("make_backend honours the configuration") {
    BackendOptions o;
    o.kind = BackendKind::real;
    try {
        make_backend(o);
        FAIL("expected error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::backend_unavailable);
    }
    o = {};
    auto b = make_backend(o);
    CHECK(b->name() == "mock");
}
