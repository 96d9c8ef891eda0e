#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "ctree/kernels.hpp"

using namespace ctree;

namespace {

std::vector<float> random_f32(std::mt19937_64& rng, std::size_t n) {
    std::normal_distribution<float> d(0.0f, 1.0f);
    std::vector<float> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

std::vector<double> random_f64(std::mt19937_64& rng, std::size_t n) {
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

// plain long-double loops, independent of every table
long double ref_dot(const float* a, const float* b, std::size_t n) {
    long double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += static_cast<long double>(a[i]) * b[i];
    return s;
}

}  // namespace

TEST_CASE("scalar table is always available and listed first") {
    const auto v = kernels::available_kernels();
    REQUIRE(!v.empty());
    CHECK(v.front()->name == "scalar");
    bool found = false;
    for (const auto* k : v) found |= k == &kernels::active();
    CHECK(found);
}

TEST_CASE("every variant matches the reference loops") {
    std::mt19937_64 rng(42);
    // odd lengths exercise the tails of the vector loops
    for (const std::size_t n : {0u, 1u, 3u, 4u, 7u, 8u, 15u, 16u, 17u, 31u, 64u, 257u, 1000u}) {
        const auto a = random_f32(rng, n);
        const auto b = random_f32(rng, n);
        const auto x = random_f64(rng, n);
        const auto y = random_f64(rng, n);
        const double tol = 1e-12 * (1.0 + static_cast<double>(n));
        for (const auto* k : kernels::available_kernels()) {
            CAPTURE(k->name);
            CAPTURE(n);
            CHECK(k->dot_f32(a.data(), b.data(), n) == doctest::Approx(static_cast<double>(ref_dot(a.data(), b.data(), n))).epsilon(tol));
            CHECK(std::fabs(k->dot_f32(a.data(), b.data(), n) - static_cast<double>(ref_dot(a.data(), b.data(), n))) < tol);
            CHECK(std::fabs(k->sum_squares_f32(a.data(), n) - static_cast<double>(ref_dot(a.data(), a.data(), n))) < tol);

            long double d64 = 0;
            long double sq = 0;
            for (std::size_t i = 0; i < n; ++i) {
                d64 += static_cast<long double>(x[i]) * y[i];
                sq += static_cast<long double>(x[i] - y[i]) * (x[i] - y[i]);
            }
            CHECK(std::fabs(k->dot_f64(x.data(), y.data(), n) - static_cast<double>(d64)) < tol);
            CHECK(std::fabs(k->squared_distance_f64(x.data(), y.data(), n) - static_cast<double>(sq)) < tol);

            std::vector<float> yf = b;
            k->axpy_f32(0.37f, a.data(), yf.data(), n);
            for (std::size_t i = 0; i < n; ++i) {
                CHECK(std::fabs(yf[i] - (b[i] + 0.37f * a[i])) <= 1e-6f * (1.0f + std::fabs(yf[i])));
            }
            std::vector<double> yd = y;
            k->axpy_f64(-1.25, x.data(), yd.data(), n);
            std::vector<double> out(n);
            k->affine_f64(0.3, x.data(), -2.0, y.data(), out.data(), n);
            for (std::size_t i = 0; i < n; ++i) {
                CHECK(std::fabs(yd[i] - (y[i] - 1.25 * x[i])) < 1e-14 * (1 + std::fabs(yd[i])));
                CHECK(std::fabs(out[i] - (0.3 * x[i] - 2.0 * y[i])) < 1e-14 * (1 + std::fabs(out[i])));
            }
        }
    }
}

TEST_CASE("cosine_block agrees across variants and handles zero rows") {
    std::mt19937_64 rng(7);
    const std::size_t dim = 19;
    auto a = random_f32(rng, 5 * dim);
    const auto b = random_f32(rng, 3 * dim);
    std::fill(a.begin() + 2 * dim, a.begin() + 3 * dim, 0.0f);  // row 2 is zero

    std::vector<double> ref(15);
    kernels::cosine_block(kernels::scalar_kernels(), a, 5, b, 3, dim, ref);
    for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            const long double d = ref_dot(&a[i * dim], &b[j * dim], dim);
            const long double na = std::sqrt(ref_dot(&a[i * dim], &a[i * dim], dim));
            const long double nb = std::sqrt(ref_dot(&b[j * dim], &b[j * dim], dim));
            const double want = na == 0 ? 0.0 : static_cast<double>(d / (na * nb));
            CHECK(std::fabs(ref[i * 3 + j] - want) < 1e-12);
        }
    }
    for (const auto* k : kernels::available_kernels()) {
        std::vector<double> got(15);
        kernels::cosine_block(*k, a, 5, b, 3, dim, got);
        for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::fabs(got[i] - ref[i]) < 1e-12);
    }
}

TEST_CASE("cosine of a vector with itself is clamped to 1") {
    std::vector<float> v{1e-3f, 3.3f, -7.1f, 0.25f, 9.0f};
    for (const auto* k : kernels::available_kernels()) {
        std::vector<double> out(1);
        kernels::cosine_block(*k, v, 1, v, 1, v.size(), out);
        CHECK(out[0] <= 1.0);
        CHECK(out[0] == doctest::Approx(1.0).epsilon(1e-15));
    }
}
