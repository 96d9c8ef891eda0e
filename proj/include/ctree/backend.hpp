#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ctree/core.hpp"
#include "ctree/token_dictionary.hpp"

namespace ctree {

/// z_t = alpha_t z + sigma_t eps, indexed by t in {1..T}.
struct NoiseSchedule {
    int total_steps = 0;
    std::vector<double> alpha;
    std::vector<double> sigma;

    /// Stable Diffusion's scaled-linear beta schedule.
    static NoiseSchedule scaled_linear(int total_steps = 1000, double beta_start = 0.00085,
                                       double beta_end = 0.012);

    double alpha_at(int t) const;
    double sigma_at(int t) const;
};

void validate(const NoiseSchedule& schedule);

/// alpha_t * z + sigma_t * eps. Throws Error(domain) for t outside {1..T}
/// and Error(invalid_argument) on a shape mismatch.
std::vector<double> noise_latent(std::span<const double> z, int t, std::span<const double> eps,
                                 const NoiseSchedule& schedule);

struct BackendBatch {
    std::vector<std::vector<double>> latents;
    std::vector<int> timesteps;
    std::vector<std::vector<double>> noises;
    std::string prompt;
};

void validate(const BackendBatch& batch);

struct TrainStepResult {
    double loss = 0.0;
    std::map<std::string, EmbeddingVector> gradients;
};

/// The text-to-image system seen by the trainer and the scorer: frozen text
/// vocabulary, latent encoder, noise predictor loss, sampler and the
/// semantic image embedder.
class DiffusionBackend {
public:
    virtual ~DiffusionBackend() = default;

    virtual std::string name() const = 0;
    virtual std::shared_ptr<const BaseVocabulary> vocabulary() const = 0;
    virtual const NoiseSchedule& schedule() const = 0;

    virtual std::vector<double> encode_image(const ImageRef& image) const = 0;

    /// Mean over the batch of the noise-prediction loss and its exact
    /// gradient with respect to each trainable token's embedding. Nothing
    /// else receives a gradient.
    virtual TrainStepResult loss_and_gradient(const BackendBatch& batch,
                                              const TokenDictionary& dict,
                                              std::span<const std::string> trainable) const = 0;

    /// n images for the prompt, deterministic in (prompt, embeddings, seed).
    virtual ImageSet generate(const std::string& prompt, const TokenDictionary& dict,
                              std::int64_t seed, int n) const = 0;

    /// Semantic (CLIP-role) image embedding.
    virtual EmbeddingVector embed_image(const ImageRef& image) const = 0;
    virtual Matrix embed_images(std::span<const ImageRef> images) const;

    /// Digest over every frozen weight the backend owns, vocabulary included.
    virtual std::string weights_checksum() const = 0;

    /// True when loss_and_gradient may be called from several threads at once.
    virtual bool concurrent_training() const { return false; }
};

enum class BackendKind { mock, real };

struct BackendOptions {
    BackendKind kind = BackendKind::mock;
    std::string concept_space_path;  // mock
    std::string model_id;            // real
    std::string device;              // real
    std::string endpoint;            // real: URL of the inference server
};

/// Reads BACKEND, MODEL_ID, DEVICE, BACKEND_URL and MOCK_CONCEPT_SPACE.
BackendOptions backend_options_from_env();

/// Throws Error(backend_unavailable) when the configuration cannot be met.
std::unique_ptr<DiffusionBackend> make_backend(const BackendOptions& options);

}  // namespace ctree
