#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ctree/backend.hpp"

namespace ctree {

/// A composite concept whose images come in several variants. Generation from
/// a condition near the family centre draws image i around component i mod K.
struct ConceptFamily {
    std::string name;
    std::vector<std::string> components;
    // capture radius as a fraction of the mean component distance to centre
    double capture = 0.5;
};

/// Synthetic concept space driving the mock backend.
///
/// Images are d-dimensional vectors; the latent encoder and the image
/// embedder are both the identity. A prompt's condition vector c is the
/// mean of the embeddings of its resolvable words. Per sample the denoiser's
/// SNR-normalised residual gives
///
///   loss = loss_scale * (|c - z|^2 + aspect_weight * min_u |u - z|^2)
///
/// where u runs over the condition tokens. aspect_weight = 0 is the plain
/// quadratic surrogate whose optimum puts c on the training-set centroid.
struct ConceptSpace {
    std::size_t dim = 16;
    double sigma_gen = 0.05;
    double aspect_weight = 3.0;
    double loss_scale = 5.0;
    std::map<std::string, EmbeddingVector, std::less<>> concepts;
    std::vector<ConceptFamily> families;
    int schedule_steps = 1000;

    static ConceptSpace from_json_text(const std::string& text);
    static ConceptSpace load(const std::filesystem::path& path);
    std::string to_json_text() const;
};

void validate(const ConceptSpace& space);

class MockBackend final : public DiffusionBackend {
public:
    explicit MockBackend(ConceptSpace space);

    std::string name() const override { return "mock"; }
    std::shared_ptr<const BaseVocabulary> vocabulary() const override { return vocabulary_; }
    const NoiseSchedule& schedule() const override { return schedule_; }

    std::vector<double> encode_image(const ImageRef& image) const override;
    TrainStepResult loss_and_gradient(const BackendBatch& batch, const TokenDictionary& dict,
                                      std::span<const std::string> trainable) const override;
    ImageSet generate(const std::string& prompt, const TokenDictionary& dict, std::int64_t seed,
                      int n) const override;
    EmbeddingVector embed_image(const ImageRef& image) const override;
    std::string weights_checksum() const override;
    bool concurrent_training() const override { return true; }

    const ConceptSpace& space() const noexcept { return space_; }

    /// Condition vector of a prompt (mean of resolvable word embeddings).
    std::vector<double> condition(const std::string& prompt, const TokenDictionary& dict) const;

private:
    struct Family {
        std::vector<std::vector<double>> offsets;  // component - centre
        std::vector<double> centre;
        double radius = 0.0;
    };

    std::vector<float> read_payload(const ImageRef& image) const;

    ConceptSpace space_;
    std::shared_ptr<const StaticVocabulary> vocabulary_;
    NoiseSchedule schedule_;
    std::vector<Family> families_;
};

/// Planted hierarchical concept space used by the tests and `ctree fixture`:
/// concept A, and concept B made of two variants B1/B2.
struct HierarchicalFixture {
    ConceptSpace space;
    ImageSet root_images;
    EmbeddingVector a;
    EmbeddingVector b1;
    EmbeddingVector b2;
};

HierarchicalFixture make_hierarchical_fixture(std::uint64_t seed = 7);

}  // namespace ctree
