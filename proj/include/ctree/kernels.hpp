#pragma once

// Data-parallel inner loops used by scoring and training.
//
// Every kernel has a scalar reference implementation; vectorized variants
// (AVX2+FMA on x86-64, NEON on aarch64) are selected once at runtime and must
// agree with the reference within rounding (see tests/kernels_test.cpp).
// Single-precision inputs are accumulated in double.

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace ctree::kernels {

struct KernelTable {
    std::string_view name;

    double (*dot_f32)(const float* a, const float* b, std::size_t n);
    double (*sum_squares_f32)(const float* a, std::size_t n);
    // y += alpha * x
    void (*axpy_f32)(float alpha, const float* x, float* y, std::size_t n);

    double (*dot_f64)(const double* a, const double* b, std::size_t n);
    double (*squared_distance_f64)(const double* a, const double* b, std::size_t n);
    // y += alpha * x
    void (*axpy_f64)(double alpha, const double* x, double* y, std::size_t n);
    // out = a * x + b * y
    void (*affine_f64)(double a, const double* x, double b, const double* y, double* out,
                       std::size_t n);
};

const KernelTable& scalar_kernels();
#if defined(CTREE_HAVE_AVX2)
const KernelTable& avx2_kernels();
#endif
#if defined(CTREE_HAVE_NEON)
const KernelTable& neon_kernels();
#endif

/// Variants compiled in and supported by the running CPU, scalar first.
std::vector<const KernelTable*> available_kernels();

/// The table used by the library. Picks the widest supported variant unless
/// CTREE_KERNELS=scalar|avx2|neon overrides it.
const KernelTable& active();

// Convenience wrappers over active().

double dot(std::span<const float> a, std::span<const float> b);
double sum_squares(std::span<const float> a);
void axpy(float alpha, std::span<const float> x, std::span<float> y);

double dot(std::span<const double> a, std::span<const double> b);
double squared_distance(std::span<const double> a, std::span<const double> b);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
void affine(double a, std::span<const double> x, double b, std::span<const double> y,
            std::span<double> out);

/// Row-major block of cosine similarities: out[i * b_rows + j] = cos(a_i, b_j).
/// Rows with zero norm produce 0.
void cosine_block(const KernelTable& k, std::span<const float> a, std::size_t a_rows,
                  std::span<const float> b, std::size_t b_rows, std::size_t dim,
                  std::span<double> out);

}  // namespace ctree::kernels
