#include "ctree/backend.hpp"

#include <cmath>
#include <cstdlib>

#include "ctree/errors.hpp"
#include "ctree/kernels.hpp"
#include "ctree/mock_backend.hpp"
#include "ctree/remote_backend.hpp"

namespace ctree {

NoiseSchedule NoiseSchedule::scaled_linear(int total_steps, double beta_start, double beta_end) {
    if (total_steps < 1) fail(ErrorCode::domain, "schedule needs at least one step");
    NoiseSchedule s;
    s.total_steps = total_steps;
    s.alpha.resize(static_cast<std::size_t>(total_steps));
    s.sigma.resize(static_cast<std::size_t>(total_steps));
    const double a = std::sqrt(beta_start);
    const double b = std::sqrt(beta_end);
    double cumprod = 1.0;
    for (int i = 0; i < total_steps; ++i) {
        const double frac = total_steps == 1 ? 0.0 : static_cast<double>(i) / (total_steps - 1);
        const double root = a + (b - a) * frac;
        cumprod *= 1.0 - root * root;
        s.alpha[i] = std::sqrt(cumprod);
        s.sigma[i] = std::sqrt(1.0 - cumprod);
    }
    return s;
}

double NoiseSchedule::alpha_at(int t) const {
    if (t < 1 || t > total_steps) {
        fail(ErrorCode::domain, "timestep " + std::to_string(t) + " outside [1, " +
                                    std::to_string(total_steps) + "]");
    }
    return alpha[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::sigma_at(int t) const {
    if (t < 1 || t > total_steps) {
        fail(ErrorCode::domain, "timestep " + std::to_string(t) + " outside [1, " +
                                    std::to_string(total_steps) + "]");
    }
    return sigma[static_cast<std::size_t>(t - 1)];
}

void validate(const NoiseSchedule& s) {
    const auto n = static_cast<std::size_t>(s.total_steps);
    if (s.total_steps < 1 || s.alpha.size() != n || s.sigma.size() != n) {
        fail(ErrorCode::invalid_argument, "noise schedule arrays do not match T");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!(s.alpha[i] > 0.0 && s.alpha[i] <= 1.0) || !(s.sigma[i] > 0.0 && s.sigma[i] <= 1.0)) {
            fail(ErrorCode::domain, "noise schedule entry " + std::to_string(i + 1) +
                                        " outside (0, 1]");
        }
    }
}

std::vector<double> noise_latent(std::span<const double> z, int t, std::span<const double> eps,
                                 const NoiseSchedule& schedule) {
    if (z.size() != eps.size()) {
        fail(ErrorCode::invalid_argument, "latent and noise shapes differ");
    }
    std::vector<double> out(z.size());
    kernels::affine(schedule.alpha_at(t), z, schedule.sigma_at(t), eps, out);
    return out;
}

void validate(const BackendBatch& batch) {
    const std::size_t n = batch.latents.size();
    if (n == 0) fail(ErrorCode::invalid_argument, "empty batch");
    if (batch.timesteps.size() != n || batch.noises.size() != n) {
        fail(ErrorCode::invalid_argument, "batch fields disagree on batch size");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (batch.noises[i].size() != batch.latents[i].size() ||
            batch.latents[i].size() != batch.latents[0].size()) {
            fail(ErrorCode::invalid_argument, "batch row " + std::to_string(i) + " has mismatched shape");
        }
    }
}

Matrix DiffusionBackend::embed_images(std::span<const ImageRef> images) const {
    Matrix m;
    for (std::size_t i = 0; i < images.size(); ++i) {
        const EmbeddingVector e = embed_image(images[i]);
        if (i == 0) m = Matrix(images.size(), e.size());
        if (e.size() != m.cols) fail(ErrorCode::decode, "embedder returned ragged dimensions");
        std::copy(e.values().begin(), e.values().end(), m.row(i).begin());
    }
    return m;
}

BackendOptions backend_options_from_env() {
    auto env = [](const char* name) -> std::string {
        const char* v = std::getenv(name);
        return v ? v : "";
    };
    BackendOptions o;
    const std::string kind = env("BACKEND");
    if (kind == "real") {
        o.kind = BackendKind::real;
    } else if (!kind.empty() && kind != "mock") {
        fail(ErrorCode::invalid_argument, "BACKEND must be mock or real, got '" + kind + "'");
    }
    o.concept_space_path = env("MOCK_CONCEPT_SPACE");
    o.model_id = env("MODEL_ID");
    o.device = env("DEVICE");
    o.endpoint = env("BACKEND_URL");
    return o;
}

std::unique_ptr<DiffusionBackend> make_backend(const BackendOptions& o) {
    if (o.kind == BackendKind::mock) {
        ConceptSpace space = o.concept_space_path.empty()
                                 ? make_hierarchical_fixture().space
                                 : ConceptSpace::load(o.concept_space_path);
        return std::make_unique<MockBackend>(std::move(space));
    }
    if (o.endpoint.empty()) {
        fail(ErrorCode::backend_unavailable,
             "real backend needs BACKEND_URL pointing at an inference server");
    }
    return std::make_unique<RemoteBackend>(o.endpoint, o.model_id.empty() ? "default" : o.model_id,
                                           o.device.empty() ? "cuda" : o.device);
}

}  // namespace ctree
