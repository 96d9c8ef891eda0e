#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdlib>
#include <string>

#include "ctree/kernels.hpp"

namespace ctree::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(CTREE_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const KernelTable& select() {
    const auto variants = available_kernels();
    if (const char* forced = std::getenv("CTREE_KERNELS")) {
        for (const auto* v : variants) {
            if (v->name == forced) {
                return *v;
            }
        }
        // unknown or unsupported request falls back to the reference
        return scalar_kernels();
    }
    return *variants.back();
}

}  // namespace

std::vector<const KernelTable*> available_kernels() {
    std::vector<const KernelTable*> out{&scalar_kernels()};
#if defined(CTREE_HAVE_AVX2)
    if (cpu_has_avx2()) {
        out.push_back(&avx2_kernels());
    }
#endif
#if defined(CTREE_HAVE_NEON)
    out.push_back(&neon_kernels());
#endif
    return out;
}

const KernelTable& active() {
    static const KernelTable& table = select();
    return table;
}

double dot(std::span<const float> a, std::span<const float> b) {
    assert(a.size() == b.size());
    return active().dot_f32(a.data(), b.data(), a.size());
}

double sum_squares(std::span<const float> a) {
    return active().sum_squares_f32(a.data(), a.size());
}

void axpy(float alpha, std::span<const float> x, std::span<float> y) {
    assert(x.size() == y.size());
    active().axpy_f32(alpha, x.data(), y.data(), x.size());
}

double dot(std::span<const double> a, std::span<const double> b) {
    assert(a.size() == b.size());
    return active().dot_f64(a.data(), b.data(), a.size());
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
    assert(a.size() == b.size());
    return active().squared_distance_f64(a.data(), b.data(), a.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    assert(x.size() == y.size());
    active().axpy_f64(alpha, x.data(), y.data(), x.size());
}

void affine(double a, std::span<const double> x, double b, std::span<const double> y,
            std::span<double> out) {
    assert(x.size() == y.size() && x.size() == out.size());
    active().affine_f64(a, x.data(), b, y.data(), out.data(), x.size());
}

void cosine_block(const KernelTable& k, std::span<const float> a, std::size_t a_rows,
                  std::span<const float> b, std::size_t b_rows, std::size_t dim,
                  std::span<double> out) {
    assert(a.size() == a_rows * dim && b.size() == b_rows * dim);
    assert(out.size() == a_rows * b_rows);
    std::vector<double> b_norms(b_rows);
    for (std::size_t j = 0; j < b_rows; ++j) {
        b_norms[j] = std::sqrt(k.sum_squares_f32(b.data() + j * dim, dim));
    }
    for (std::size_t i = 0; i < a_rows; ++i) {
        const float* ai = a.data() + i * dim;
        const double a_norm = std::sqrt(k.sum_squares_f32(ai, dim));
        for (std::size_t j = 0; j < b_rows; ++j) {
            const double denom = a_norm * b_norms[j];
            out[i * b_rows + j] =
                denom > 0.0
                    ? std::clamp(k.dot_f32(ai, b.data() + j * dim, dim) / denom, -1.0, 1.0)
                    : 0.0;
        }
    }
}

}  // namespace ctree::kernels
