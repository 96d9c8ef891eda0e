#include "ctree/mock_backend.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include <json.hpp>

#include "ctree/errors.hpp"
#include "ctree/hashing.hpp"
#include "ctree/kernels.hpp"
#include "ctree/timestep_sampler.hpp"
#include "ctree/vector_file.hpp"

namespace ctree {

using nlohmann::json;

namespace {

struct ConditionToken {
    std::string word;
    bool injected = false;
    std::vector<double> vec;
};

std::vector<ConditionToken> condition_tokens(const std::string& prompt, const TokenDictionary& dict) {
    std::vector<ConditionToken> out;
    for (const auto& w : tokenize_prompt(prompt)) {
        if (w.placeholder) {
            if (!dict.is_injected(w.text)) {
                fail(ErrorCode::unknown_token, "placeholder <" + w.text + "> does not resolve");
            }
            out.push_back({w.text, true, dict.injected_embedding(w.text).to_double()});
        } else if (auto v = dict.lookup(w.text)) {
            out.push_back({w.text, dict.is_injected(w.text), v->to_double()});
        }
        // unknown plain words carry no conditioning
    }
    return out;
}

std::vector<double> mean_of(const std::vector<ConditionToken>& tokens, std::size_t dim) {
    std::vector<double> c(dim, 0.0);
    if (tokens.empty()) return c;
    const double w = 1.0 / static_cast<double>(tokens.size());
    for (const auto& t : tokens) kernels::axpy(w, t.vec, c);
    return c;
}

std::vector<double> to_vec(const EmbeddingVector& e) {
    return e.to_double();
}

EmbeddingVector from_double(std::span<const double> v) {
    return EmbeddingVector(std::vector<float>(v.begin(), v.end()));
}

}  // namespace

// --- concept space -----------------------------------------------------------

ConceptSpace ConceptSpace::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        fail(ErrorCode::decode, std::string("concept space is not valid JSON: ") + e.what());
    }
    ConceptSpace s;
    try {
        s.dim = j.at("dim").get<std::size_t>();
        s.sigma_gen = j.value("sigma_gen", s.sigma_gen);
        s.aspect_weight = j.value("aspect_weight", s.aspect_weight);
        s.loss_scale = j.value("loss_scale", s.loss_scale);
        s.schedule_steps = j.value("schedule_steps", s.schedule_steps);
        for (const auto& [name, values] : j.at("concepts").items()) {
            s.concepts.emplace(name, EmbeddingVector(values.get<std::vector<float>>()));
        }
        if (j.contains("families")) {
            for (const auto& f : j.at("families")) {
                ConceptFamily fam;
                fam.name = f.at("name").get<std::string>();
                fam.components = f.at("components").get<std::vector<std::string>>();
                fam.capture = f.value("capture", fam.capture);
                s.families.push_back(std::move(fam));
            }
        }
    } catch (const json::exception& e) {
        fail(ErrorCode::decode, std::string("concept space: ") + e.what());
    }
    validate(s);
    return s;
}

ConceptSpace ConceptSpace::load(const std::filesystem::path& path) {
    return from_json_text(read_file_bytes(path));
}

std::string ConceptSpace::to_json_text() const {
    json j;
    j["dim"] = dim;
    j["sigma_gen"] = sigma_gen;
    j["aspect_weight"] = aspect_weight;
    j["loss_scale"] = loss_scale;
    j["schedule_steps"] = schedule_steps;
    json concepts = json::object();
    for (const auto& [name, vec] : this->concepts) {
        concepts[name] = std::vector<float>(vec.values().begin(), vec.values().end());
    }
    j["concepts"] = std::move(concepts);
    json fams = json::array();
    for (const auto& f : families) {
        fams.push_back({{"name", f.name}, {"components", f.components}, {"capture", f.capture}});
    }
    j["families"] = std::move(fams);
    return j.dump(2);
}

void validate(const ConceptSpace& s) {
    if (s.dim == 0) fail(ErrorCode::domain, "concept space dimension must be positive");
    if (!(s.sigma_gen >= 0.0)) fail(ErrorCode::domain, "sigma_gen must be >= 0");
    if (!(s.aspect_weight >= 0.0)) fail(ErrorCode::domain, "aspect_weight must be >= 0");
    if (!(s.loss_scale > 0.0)) fail(ErrorCode::domain, "loss_scale must be > 0");
    if (s.schedule_steps < 1) fail(ErrorCode::domain, "schedule_steps must be >= 1");
    for (const auto& [name, vec] : s.concepts) {
        if (vec.size() != s.dim) {
            fail(ErrorCode::invalid_argument, "concept '" + name + "' has wrong dimension");
        }
    }
    for (const auto& f : s.families) {
        if (f.components.size() < 2) {
            fail(ErrorCode::invalid_argument, "family '" + f.name + "' needs >= 2 components");
        }
        if (!(f.capture > 0.0)) fail(ErrorCode::domain, "family capture must be > 0");
        for (const auto& c : f.components) {
            if (!s.concepts.count(c)) {
                fail(ErrorCode::invalid_argument, "family '" + f.name + "' names unknown concept '" + c + "'");
            }
        }
    }
}

// --- backend -------------------------------------------------------------------

MockBackend::MockBackend(ConceptSpace space) : space_(std::move(space)) {
    validate(space_);
    StaticVocabulary::WordMap words;
    for (const auto& [name, vec] : space_.concepts) words.emplace(name, vec);
    vocabulary_ = std::make_shared<StaticVocabulary>(space_.dim, std::move(words));
    schedule_ = NoiseSchedule::scaled_linear(space_.schedule_steps);

    for (const auto& f : space_.families) {
        Family fam;
        fam.centre.assign(space_.dim, 0.0);
        const double w = 1.0 / static_cast<double>(f.components.size());
        for (const auto& name : f.components) {
            kernels::axpy(w, to_vec(space_.concepts.at(name)), fam.centre);
        }
        double spread = 0.0;
        for (const auto& name : f.components) {
            std::vector<double> off = to_vec(space_.concepts.at(name));
            kernels::axpy(-1.0, fam.centre, off);
            spread += std::sqrt(kernels::dot(off, off)) * w;
            fam.offsets.push_back(std::move(off));
        }
        fam.radius = f.capture * spread;
        families_.push_back(std::move(fam));
    }
}

std::vector<float> MockBackend::read_payload(const ImageRef& image) const {
    std::vector<float> v = image.has_inline_payload() ? image.vector : read_vector_file(image.path);
    if (v.size() != space_.dim) {
        fail(ErrorCode::decode, "image " + image.id + " has dimension " + std::to_string(v.size()) +
                                    ", concept space is " + std::to_string(space_.dim));
    }
    for (const float f : v) {
        if (!std::isfinite(f)) fail(ErrorCode::decode, "image " + image.id + " has non-finite payload");
    }
    return v;
}

std::vector<double> MockBackend::encode_image(const ImageRef& image) const {
    const auto v = read_payload(image);
    return {v.begin(), v.end()};
}

EmbeddingVector MockBackend::embed_image(const ImageRef& image) const {
    return EmbeddingVector(read_payload(image));
}

std::vector<double> MockBackend::condition(const std::string& prompt,
                                           const TokenDictionary& dict) const {
    return mean_of(condition_tokens(prompt, dict), space_.dim);
}

TrainStepResult MockBackend::loss_and_gradient(const BackendBatch& batch,
                                               const TokenDictionary& dict,
                                               std::span<const std::string> trainable) const {
    validate(batch);
    for (const auto& t : trainable) {
        if (!dict.is_injected(t)) {
            fail(ErrorCode::token_not_trainable, "'" + t + "' is not an injected token");
        }
    }
    const auto tokens = condition_tokens(batch.prompt, dict);
    const std::size_t d = space_.dim;
    const auto c = mean_of(tokens, d);
    const double kappa = space_.loss_scale;
    const double lambda = space_.aspect_weight;
    const double inv_b = 1.0 / static_cast<double>(batch.latents.size());
    const double m = static_cast<double>(tokens.size());

    TrainStepResult result;
    std::vector<std::vector<double>> grads(trainable.size(), std::vector<double>(d, 0.0));

    std::vector<double> residual(d);
    std::vector<double> x_hat(d);
    std::vector<double> eps_hat(d);
    for (std::size_t i = 0; i < batch.latents.size(); ++i) {
        const auto& z = batch.latents[i];
        const auto& eps = batch.noises[i];
        if (z.size() != d) fail(ErrorCode::invalid_argument, "latent dimension mismatch");
        const int t = batch.timesteps[i];
        const double a = schedule_.alpha_at(t);
        const double s = schedule_.sigma_at(t);
        const auto z_t = noise_latent(z, t, eps, schedule_);

        // One denoiser head: predicts a clean latent x_hat, converted to a
        // noise prediction; the residual is reported at unit SNR.
        auto head_loss = [&](std::span<const double> target, double weight) {
            kernels::affine(1.0 - weight, z, weight, target, x_hat);  // z + w (target - z)
            kernels::affine(1.0 / s, z_t, -a / s, x_hat, eps_hat);
            kernels::affine(s / a, eps, -s / a, eps_hat, residual);
            return kernels::dot(residual, residual);
        };

        double sample_loss = 0.0;
        if (!tokens.empty()) {
            sample_loss += head_loss(c, std::sqrt(kappa));
        } else {
            sample_loss += kappa * kernels::dot(z, z);
        }

        std::size_t best = 0;
        double best_dist = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < tokens.size(); ++k) {
            const double dist = kernels::squared_distance(tokens[k].vec, z);
            if (dist < best_dist) {
                best_dist = dist;
                best = k;
            }
        }
        if (lambda > 0.0 && !tokens.empty()) {
            sample_loss += head_loss(tokens[best].vec, std::sqrt(kappa * lambda));
        }
        result.loss += sample_loss * inv_b;

        for (std::size_t j = 0; j < trainable.size(); ++j) {
            double count = 0.0;
            for (const auto& tok : tokens) count += tok.word == trainable[j] ? 1.0 : 0.0;
            if (count > 0.0) {
                // d|c - z|^2 / dv_j = 2 (c - z) * count_j / m
                const double w = kappa * 2.0 * inv_b * count / m;
                kernels::axpy(w, c, grads[j]);
                kernels::axpy(-w, z, grads[j]);
            }
            if (lambda > 0.0 && !tokens.empty() && tokens[best].word == trainable[j]) {
                const double w = kappa * lambda * 2.0 * inv_b;
                kernels::axpy(w, tokens[best].vec, grads[j]);
                kernels::axpy(-w, z, grads[j]);
            }
        }
    }
    for (std::size_t j = 0; j < trainable.size(); ++j) {
        for (const double g : grads[j]) {
            if (!std::isfinite(g)) fail(ErrorCode::non_finite_loss, "non-finite gradient");
        }
        result.gradients.insert_or_assign(trainable[j], from_double(grads[j]));
    }
    return result;
}

ImageSet MockBackend::generate(const std::string& prompt, const TokenDictionary& dict,
                               std::int64_t seed, int n) const {
    if (n < 1) fail(ErrorCode::invalid_argument, "generate needs n >= 1");
    const auto c = condition(prompt, dict);

    const Family* family = nullptr;
    for (const auto& f : families_) {
        if (std::sqrt(kernels::squared_distance(c, f.centre)) <= f.radius) {
            family = &f;
            break;
        }
    }

    std::uint64_t h = fnv1a64(prompt);
    h = fnv1a64(std::to_string(seed), h);
    h = fnv1a64(std::as_bytes(std::span(c)), h);
    const std::string stem = "g" + to_hex(h).substr(0, 12);

    ImageSet set;
    set.images.reserve(static_cast<std::size_t>(n));
    std::vector<double> centre(space_.dim);
    for (int i = 0; i < n; ++i) {
        centre = c;
        if (family) {
            kernels::axpy(1.0, family->offsets[static_cast<std::size_t>(i) % family->offsets.size()], centre);
        }
        std::mt19937_64 rng(derive_seed(static_cast<std::uint64_t>(seed), "mock-image-" + std::to_string(i)));
        ImageRef img;
        img.id = stem + "-" + std::to_string(i);
        img.vector.resize(space_.dim);
        for (std::size_t k = 0; k < space_.dim; ++k) {
            img.vector[k] = static_cast<float>(centre[k] + space_.sigma_gen * standard_normal(rng));
        }
        img.source = ImageSource::generated;
        img.seed = seed;
        img.prompt = prompt;
        set.images.push_back(std::move(img));
    }
    return set;
}

std::string MockBackend::weights_checksum() const {
    std::uint64_t h = fnv1a64(space_.to_json_text());
    h = fnv1a64(vocabulary_->checksum(), h);
    return to_hex(h);
}

// --- fixture -------------------------------------------------------------------

HierarchicalFixture make_hierarchical_fixture(std::uint64_t seed) {
    constexpr std::size_t d = 16;
    auto basis = [](std::initializer_list<std::pair<std::size_t, double>> terms) {
        std::vector<float> v(d, 0.0f);
        for (const auto& [i, w] : terms) v[i] = static_cast<float>(w);
        return EmbeddingVector(std::move(v));
    };
    const double theta = 35.0 * std::numbers::pi / 180.0;
    const double c = 0.8 * std::cos(theta);
    const double s = 0.8 * std::sin(theta);

    HierarchicalFixture fx;
    fx.a = basis({{0, 0.6}, {1, 0.8}});
    fx.b1 = basis({{0, 0.6}, {2, c}, {3, s}});
    fx.b2 = basis({{0, 0.6}, {2, c}, {3, -s}});

    ConceptSpace& space = fx.space;
    space.dim = d;
    space.concepts.emplace("object", basis({{0, 0.5}, {4, 0.3}}));
    space.concepts.emplace("teapot", fx.a);
    space.concepts.emplace("lamp_red", fx.b1);
    space.concepts.emplace("lamp_blue", fx.b2);
    space.concepts.emplace("chair", basis({{0, 0.6}, {5, 0.8}}));
    space.families.push_back({"lamp", {"lamp_red", "lamp_blue"}, 0.5});

    std::mt19937_64 rng(seed);
    const double noise = 0.05;
    auto add = [&](const EmbeddingVector& centre, int count) {
        for (int k = 0; k < count; ++k) {
            ImageRef img;
            img.id = "root-" + std::to_string(fx.root_images.size());
            img.vector.resize(d);
            for (std::size_t i = 0; i < d; ++i) {
                img.vector[i] = static_cast<float>(centre[i] + noise * standard_normal(rng));
            }
            fx.root_images.images.push_back(std::move(img));
        }
    };
    add(fx.a, 4);
    add(fx.b1, 2);
    add(fx.b2, 2);
    return fx;
}

}  // namespace ctree
