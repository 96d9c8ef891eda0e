#pragma once

#include <memory>
#include <mutex>
#include <string>

#include "ctree/backend.hpp"

namespace ctree {

/// Adapter to an external inference server hosting the pretrained latent
/// diffusion model and image embedder. All model work happens remotely; this
/// class speaks the JSON protocol below and keeps no weights.
///
///   GET  /info                -> {dim, latent_dim, model_id, checksum, schedule:{alpha,sigma}}
///   POST /vocab      {words}  -> {vectors: {word: [..] | null}}
///   POST /encode     {paths}  -> {latents: [[..]]}
///   POST /embed      {paths}  -> {embeddings: [[..]]}
///   POST /loss       {latents, timesteps, noises, prompt, embeddings:{token:[..]}, trainable}
///                             -> {loss, gradients:{token:[..]}}
///   POST /generate   {prompt, embeddings, seed, n} -> {paths: [..]}
///
/// Images travel as paths on storage shared with the server.
class RemoteBackend final : public DiffusionBackend {
public:
    RemoteBackend(std::string endpoint, std::string model_id, std::string device);
    ~RemoteBackend() override;

    std::string name() const override { return "real:" + model_id_; }
    std::shared_ptr<const BaseVocabulary> vocabulary() const override;
    const NoiseSchedule& schedule() const override;

    std::vector<double> encode_image(const ImageRef& image) const override;
    TrainStepResult loss_and_gradient(const BackendBatch& batch, const TokenDictionary& dict,
                                      std::span<const std::string> trainable) const override;
    ImageSet generate(const std::string& prompt, const TokenDictionary& dict, std::int64_t seed,
                      int n) const override;
    EmbeddingVector embed_image(const ImageRef& image) const override;
    Matrix embed_images(std::span<const ImageRef> images) const override;
    std::string weights_checksum() const override;

    // HTTP client shared with the vocabulary view
    struct Connection;

private:
    void ensure_info() const;

    std::string endpoint_;
    std::string model_id_;
    std::string device_;
    std::shared_ptr<Connection> conn_;
    mutable std::mutex mutex_;
    mutable bool have_info_ = false;
    mutable std::size_t dim_ = 0;
    mutable std::string checksum_;
    mutable NoiseSchedule schedule_;
    mutable std::shared_ptr<const BaseVocabulary> vocabulary_;
};

}  // namespace ctree
