#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ctree {

/// Fixed-length, finite embedding (token embedding or image embedding).
class EmbeddingVector {
public:
    EmbeddingVector() = default;
    explicit EmbeddingVector(std::vector<float> values);

    static EmbeddingVector zeros(std::size_t dim);

    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }
    std::span<const float> values() const noexcept { return values_; }
    std::span<float> mutable_values() noexcept { return values_; }
    float operator[](std::size_t i) const { return values_[i]; }

    std::vector<double> to_double() const;

    friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;

private:
    std::vector<float> values_;
};

/// Row-major float matrix; rows are embeddings.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0f) {}

    std::span<const float> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
    std::span<float> row(std::size_t i) { return {data.data() + i * cols, cols}; }

    friend bool operator==(const Matrix&, const Matrix&) = default;
};

enum class ImageSource { user_provided, generated };

const char* to_string(ImageSource source);
ImageSource image_source_from_string(const std::string& s);

/// An image is either an inline vector payload (mock backend) or a file.
struct ImageRef {
    std::string id;
    std::vector<float> vector;
    std::filesystem::path path;
    ImageSource source = ImageSource::user_provided;
    std::optional<std::int64_t> seed;
    std::optional<std::string> prompt;

    bool has_inline_payload() const { return !vector.empty(); }

    friend bool operator==(const ImageRef&, const ImageRef&) = default;
};

/// Throws Error(invalid_argument) when the provenance fields disagree with source.
void validate(const ImageRef& image);

struct ImageSet {
    std::vector<ImageRef> images;
    std::optional<Matrix> embeddings;

    std::size_t size() const { return images.size(); }
    bool empty() const { return images.empty(); }

    friend bool operator==(const ImageSet&, const ImageSet&) = default;
};

void validate(const ImageSet& set);

struct BuildConfig {
    double alpha = 0.5;
    std::vector<std::int64_t> seeds{0, 1000, 1234, 111};
    int candidate_steps = 200;
    int final_steps = 1500;
    int score_set_size = 40;
    int train_set_size = 10;
    int batch_size = 2;
    double learning_rate = 0.004;
    int max_depth = 2;
    double self_coherency_threshold = 0.70;
    double sibling_distinctness_threshold = 0.70;
    std::string init_word = "object";
    std::string train_template = "A photograph of {left} {right}";
    // prompt used to draw a node's sample sets
    std::string sample_template = "A photograph of {token}";

    friend bool operator==(const BuildConfig&, const BuildConfig&) = default;
};

void validate(const BuildConfig& config);

/// Self scores, sibling cross score and the seed-selection objective.
struct ConsistencyReport {
    double self_left = 0.0;
    double self_right = 0.0;
    double cross = 0.0;
    double objective = 0.0;

    friend bool operator==(const ConsistencyReport&, const ConsistencyReport&) = default;
};

/// objective = C_l + C_r + (min(C_l, C_r) - cross)
double selection_objective(double self_left, double self_right, double cross);
ConsistencyReport make_report(double self_left, double self_right, double cross);

struct CandidatePair {
    std::int64_t seed = 0;
    EmbeddingVector left_embedding;
    EmbeddingVector right_embedding;
    ImageSet left_samples;
    ImageSet right_samples;
    ConsistencyReport report;
};

enum class SplitDecision { split_ok, leaf_incoherent, leaf_not_distinct };

const char* to_string(SplitDecision decision);
SplitDecision split_decision_from_string(const std::string& s);

}  // namespace ctree
