#include "ctree/trainer.hpp"

#include <cmath>
#include <numeric>

#include "ctree/errors.hpp"
#include "ctree/hashing.hpp"
#include "ctree/kernels.hpp"

namespace ctree {

struct TrainerAccess {
    static std::size_t next_index(TrainJob& job) {
        const std::size_t n = job.parent_images_.size();
        if (job.epoch_pos_ >= job.epoch_order_.size()) {
            job.epoch_order_.resize(n);
            std::iota(job.epoch_order_.begin(), job.epoch_order_.end(), std::size_t{0});
            // Fisher-Yates over uniform01 so the order is library independent
            for (std::size_t i = n; i-- > 1;) {
                const auto j = static_cast<std::size_t>(uniform01(job.rng_) * static_cast<double>(i + 1));
                std::swap(job.epoch_order_[i], job.epoch_order_[std::min(j, i)]);
            }
            job.epoch_pos_ = 0;
        }
        return job.epoch_order_[job.epoch_pos_++];
    }

    static TrainResult run(TrainJob& job, int steps, const DiffusionBackend& backend,
                           const TrainProgressSink& progress) {
        if (steps < 1) {
            fail(ErrorCode::invalid_argument, "train_pair needs steps >= 1");
        }
        if (job.steps_ + steps > job.step_budget()) {
            fail(ErrorCode::invalid_argument, "step budget of " + std::to_string(job.step_budget()) +
                                                  " would be exceeded");
        }
        if (job.latents_.empty()) {
            for (const auto& img : job.parent_images_.images) {
                job.latents_.push_back(backend.encode_image(img));
            }
        }
        const std::size_t dim = job.latents_.front().size();
        const auto dist = build_distribution(backend.schedule().total_steps, job.config_.alpha);
        const std::string tokens[2] = {job.left_, job.right_};
        const std::string prompt = compose_prompt(job.config_.train_template, tokens, job.dict_);
        const auto batch_size = static_cast<std::size_t>(job.config_.batch_size);
        const auto lr = static_cast<float>(job.config_.learning_rate);

        BackendBatch batch;
        batch.prompt = prompt;
        for (int s = 0; s < steps; ++s) {
            batch.latents.clear();
            batch.timesteps.clear();
            batch.noises.clear();
            for (std::size_t b = 0; b < batch_size; ++b) {
                batch.latents.push_back(job.latents_[next_index(job)]);
                const int t = dist.sample(job.rng_);
                batch.timesteps.push_back(t);
                job.timesteps_.push_back(t);
                std::vector<double> eps(dim);
                for (auto& e : eps) e = standard_normal(job.rng_);
                batch.noises.push_back(std::move(eps));
            }

            const TrainStepResult r = backend.loss_and_gradient(batch, job.dict_, tokens);
            if (!std::isfinite(r.loss)) {
                fail(ErrorCode::non_finite_loss, "non-finite loss at step " +
                                                     std::to_string(job.steps_ + 1) + " (seed " +
                                                     std::to_string(job.seed_) + ")");
            }
            EmbeddingVector updated[2];
            for (int k = 0; k < 2; ++k) {
                const auto g = r.gradients.find(tokens[k]);
                if (g == r.gradients.end()) {
                    fail(ErrorCode::invalid_argument, "backend returned no gradient for " + tokens[k]);
                }
                EmbeddingVector v = job.dict_.injected_embedding(tokens[k]);
                kernels::axpy(-lr, g->second.values(), v.mutable_values());
                for (const float x : v.values()) {
                    if (!std::isfinite(x)) {
                        fail(ErrorCode::non_finite_loss, "embedding diverged at step " +
                                                             std::to_string(job.steps_ + 1));
                    }
                }
                updated[k] = std::move(v);
            }
            job.dict_.set(tokens[0], std::move(updated[0]));
            job.dict_.set(tokens[1], std::move(updated[1]));
            job.losses_.push_back(r.loss);
            ++job.steps_;
            if (progress) progress({job.seed_, job.steps_, r.loss});
        }
        return {job.dict_, job.losses_};
    }
};

TrainJob::TrainJob(ImageSet parent_images, std::string left_token, std::string right_token,
                   TokenDictionary dict, BuildConfig config, std::int64_t seed)
    : parent_images_(std::move(parent_images)),
      left_(std::move(left_token)),
      right_(std::move(right_token)),
      dict_(std::move(dict)),
      config_(std::move(config)),
      seed_(seed),
      rng_(derive_seed(static_cast<std::uint64_t>(seed), "train")) {
    validate(config_);
    if (parent_images_.empty()) {
        fail(ErrorCode::empty_set, "training set is empty");
    }
    if (left_ == right_) {
        fail(ErrorCode::invalid_argument, "sibling tokens must differ");
    }
    for (const auto* t : {&left_, &right_}) {
        if (!dict_.is_injected(*t)) {
            fail(ErrorCode::unknown_token, "token '" + *t + "' is not injected");
        }
    }
}

TrainResult train_pair(TrainJob& job, int steps, const DiffusionBackend& backend,
                       const TrainProgressSink& progress) {
    return TrainerAccess::run(job, steps, backend, progress);
}

std::pair<EmbeddingVector, EmbeddingVector> snapshot_embeddings(const TrainJob& job) {
    return {job.dictionary().injected_embedding(job.left_token()),
            job.dictionary().injected_embedding(job.right_token())};
}

}  // namespace ctree
