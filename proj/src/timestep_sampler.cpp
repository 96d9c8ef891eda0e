#include "ctree/timestep_sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ctree/errors.hpp"

namespace ctree {

TimestepDistribution::TimestepDistribution(int total_steps, double alpha)
    : total_steps_(total_steps), alpha_(alpha) {
    if (total_steps < 1) {
        fail(ErrorCode::domain, "timestep count must be >= 1");
    }
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        fail(ErrorCode::domain, "alpha must lie in [0, 1]");
    }
    const double T = total_steps;
    pmf_.resize(static_cast<std::size_t>(total_steps));
    double total = 0.0;
    for (int t = 1; t <= total_steps; ++t) {
        const double f = (1.0 / T) * (1.0 - alpha * std::cos(std::numbers::pi * t / T));
        pmf_[t - 1] = f;
        total += f;
    }
    // alpha = 1, T = 1 gives f(1) = 2, never zero; the sum is always positive
    cdf_.resize(pmf_.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < pmf_.size(); ++i) {
        pmf_[i] /= total;
        acc += pmf_[i];
        cdf_[i] = acc;
    }
    cdf_.back() = 1.0;
}

int TimestepDistribution::sample(std::mt19937_64& rng) const {
    const double u = uniform01(rng);
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    const auto idx = std::min<std::ptrdiff_t>(it - cdf_.begin(), total_steps_ - 1);
    return static_cast<int>(idx) + 1;
}

TimestepDistribution build_distribution(int total_steps, double alpha) {
    return TimestepDistribution(total_steps, alpha);
}

double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double standard_normal(std::mt19937_64& rng) {
    const double u1 = 1.0 - uniform01(rng);  // (0, 1]
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace ctree
