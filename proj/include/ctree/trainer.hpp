#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ctree/backend.hpp"
#include "ctree/core.hpp"
#include "ctree/timestep_sampler.hpp"
#include "ctree/token_dictionary.hpp"

namespace ctree {

struct TrainProgress {
    std::int64_t seed = 0;
    int step = 0;
    double loss = 0.0;
};

using TrainProgressSink = std::function<void(const TrainProgress&)>;

/// Paired sibling-embedding optimisation state. Owns its dictionary clone and
/// its random streams, so separate jobs never share mutable state.
class TrainJob {
public:
    TrainJob(ImageSet parent_images, std::string left_token, std::string right_token,
             TokenDictionary dict, BuildConfig config, std::int64_t seed);

    const ImageSet& parent_images() const noexcept { return parent_images_; }
    const std::string& left_token() const noexcept { return left_; }
    const std::string& right_token() const noexcept { return right_; }
    const TokenDictionary& dictionary() const noexcept { return dict_; }
    const BuildConfig& config() const noexcept { return config_; }
    std::int64_t seed() const noexcept { return seed_; }
    int step_counter() const noexcept { return steps_; }
    int step_budget() const noexcept { return config_.candidate_steps + config_.final_steps; }
    const std::vector<double>& loss_history() const noexcept { return losses_; }
    /// Every timestep drawn so far, in draw order.
    const std::vector<int>& timestep_history() const noexcept { return timesteps_; }

private:
    friend struct TrainerAccess;

    ImageSet parent_images_;
    std::string left_;
    std::string right_;
    TokenDictionary dict_;
    BuildConfig config_;
    std::int64_t seed_;
    int steps_ = 0;
    std::vector<double> losses_;
    std::vector<int> timesteps_;
    std::mt19937_64 rng_;
    std::vector<std::size_t> epoch_order_;
    std::size_t epoch_pos_ = 0;
    std::vector<std::vector<double>> latents_;
};

struct TrainResult {
    TokenDictionary dict;
    std::vector<double> loss_history;
};

/// Runs `steps` SGD iterations on the two sibling tokens. Each iteration draws
/// batch_size images (reshuffled every epoch), a timestep per image from the
/// skewed schedule and fresh Gaussian noise, fills the training template and
/// steps both embeddings against the backend gradient.
///
/// Throws Error(invalid_argument) for steps < 1 or a budget overrun and
/// Error(non_finite_loss) if the backend returns a non-finite loss; the
/// job's dictionary is left at its last finite state.
TrainResult train_pair(TrainJob& job, int steps, const DiffusionBackend& backend,
                       const TrainProgressSink& progress = {});

/// Copies of the current (left, right) embeddings.
std::pair<EmbeddingVector, EmbeddingVector> snapshot_embeddings(const TrainJob& job);

}  // namespace ctree
