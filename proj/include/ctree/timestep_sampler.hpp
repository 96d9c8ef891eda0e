#pragma once

#include <random>
#include <vector>

namespace ctree {

/// Discrete pmf over t in {1..T} proportional to (1/T)(1 - alpha cos(pi t / T)).
///
/// alpha = 0 is the uniform schedule; alpha > 0 favours large (noisier) t.
class TimestepDistribution {
public:
    TimestepDistribution(int total_steps, double alpha);

    int total_steps() const noexcept { return total_steps_; }
    double alpha() const noexcept { return alpha_; }
    /// pmf()[t - 1] is P(t).
    const std::vector<double>& pmf() const noexcept { return pmf_; }
    double probability(int t) const { return pmf_.at(static_cast<std::size_t>(t - 1)); }

    /// Inverse-transform draw over the cumulative table; deterministic for a
    /// given engine state.
    int sample(std::mt19937_64& rng) const;

private:
    int total_steps_;
    double alpha_;
    std::vector<double> pmf_;
    std::vector<double> cdf_;
};

TimestepDistribution build_distribution(int total_steps, double alpha);

/// 53-bit uniform in [0, 1) taken straight from the engine; unlike
/// std::uniform_real_distribution the sequence is the same on every
/// standard library.
double uniform01(std::mt19937_64& rng);

/// Standard normal via Box-Muller over uniform01, for the same reason.
double standard_normal(std::mt19937_64& rng);

}  // namespace ctree
