#include "ctree/remote_backend.hpp"

#include <map>

#include <httplib.h>
#include <json.hpp>

#include "ctree/errors.hpp"
#include "ctree/hashing.hpp"

namespace ctree {

using nlohmann::json;

struct RemoteBackend::Connection {
    explicit Connection(const std::string& endpoint) : client(endpoint) {
        client.set_connection_timeout(10);
        // loss and generation calls can take minutes on a busy GPU
        client.set_read_timeout(600);
        client.set_write_timeout(60);
    }

    json call(const std::string& path, const json* body, ErrorCode on_error) {
        std::lock_guard lock(mutex);
        auto res = body ? client.Post(path, body->dump(), "application/json") : client.Get(path);
        if (!res) {
            fail(ErrorCode::backend_unavailable,
                 "inference server unreachable at " + path + ": " + httplib::to_string(res.error()));
        }
        if (res->status != 200) {
            const std::string msg = path + " returned HTTP " + std::to_string(res->status) + ": " + res->body;
            if (on_error == ErrorCode::generation) throw GenerationError(msg);
            fail(on_error, msg);
        }
        try {
            return json::parse(res->body);
        } catch (const json::exception& e) {
            fail(ErrorCode::decode, path + " returned malformed JSON: " + e.what());
        }
    }

    httplib::Client client;
    std::mutex mutex;
};

namespace {

// Missing or mistyped response fields surface as decode errors.
template <class F>
auto decoded(const char* path, F&& f) {
    try {
        return f();
    } catch (const json::exception& e) {
        fail(ErrorCode::decode, std::string(path) + " response: " + e.what());
    }
}

// Base words are fetched from the server on first use and cached.
class RemoteVocabulary final : public BaseVocabulary {
public:
    RemoteVocabulary(std::shared_ptr<RemoteBackend::Connection> conn, std::size_t dim, std::string checksum)
        : conn_(std::move(conn)), dim_(dim), checksum_(std::move(checksum)) {}

    std::size_t dim() const override { return dim_; }
    std::string fingerprint() const override { return checksum_; }
    std::string checksum() const override { return checksum_; }

    std::optional<EmbeddingVector> lookup(std::string_view word) const override {
        {
            std::lock_guard lock(mutex_);
            if (const auto it = cache_.find(word); it != cache_.end()) return it->second;
        }
        const json body = {{"words", json::array({std::string(word)})}};
        const json res = conn_->call("/vocab", &body, ErrorCode::backend_unavailable);
        std::optional<EmbeddingVector> v;
        const json entry = decoded("/vocab", [&] { return res.at("vectors").at(std::string(word)); });
        if (!entry.is_null()) {
            v = EmbeddingVector(decoded("/vocab", [&] { return entry.get<std::vector<float>>(); }));
            if (v->size() != dim_) fail(ErrorCode::decode, "vocabulary vector has the wrong dimension");
        }
        std::lock_guard lock(mutex_);
        cache_.emplace(std::string(word), v);
        return v;
    }

private:
    std::shared_ptr<RemoteBackend::Connection> conn_;
    std::size_t dim_;
    std::string checksum_;
    mutable std::mutex mutex_;
    mutable std::map<std::string, std::optional<EmbeddingVector>, std::less<>> cache_;
};

json embeddings_json(const TokenDictionary& dict) {
    json out = json::object();
    for (const auto& [token, vec] : dict.injected()) {
        out[token] = std::vector<float>(vec.values().begin(), vec.values().end());
    }
    return out;
}

std::string image_path(const ImageRef& image) {
    if (image.path.empty()) {
        fail(ErrorCode::decode, "image " + image.id + " has no file; the remote backend reads images from disk");
    }
    return image.path.string();
}

}  // namespace

RemoteBackend::RemoteBackend(std::string endpoint, std::string model_id, std::string device)
    : endpoint_(std::move(endpoint)),
      model_id_(std::move(model_id)),
      device_(std::move(device)),
      conn_(std::make_shared<Connection>(endpoint_)) {}

RemoteBackend::~RemoteBackend() = default;

void RemoteBackend::ensure_info() const {
    std::lock_guard lock(mutex_);
    if (have_info_) return;
    const json info = conn_->call("/info?model_id=" + model_id_ + "&device=" + device_, nullptr,
                                  ErrorCode::backend_unavailable);
    try {
        dim_ = info.at("dim").get<std::size_t>();
        checksum_ = info.at("checksum").get<std::string>();
        const auto& s = info.at("schedule");
        schedule_.alpha = s.at("alpha").get<std::vector<double>>();
        schedule_.sigma = s.at("sigma").get<std::vector<double>>();
        schedule_.total_steps = static_cast<int>(schedule_.alpha.size());
    } catch (const json::exception& e) {
        fail(ErrorCode::decode, std::string("/info: ") + e.what());
    }
    validate(schedule_);
    vocabulary_ = std::make_shared<RemoteVocabulary>(conn_, dim_, checksum_);
    have_info_ = true;
}

std::shared_ptr<const BaseVocabulary> RemoteBackend::vocabulary() const {
    ensure_info();
    return vocabulary_;
}

const NoiseSchedule& RemoteBackend::schedule() const {
    ensure_info();
    return schedule_;
}

std::string RemoteBackend::weights_checksum() const {
    ensure_info();
    return checksum_;
}

std::vector<double> RemoteBackend::encode_image(const ImageRef& image) const {
    const json body = {{"paths", json::array({image_path(image)})}};
    const json res = conn_->call("/encode", &body, ErrorCode::decode);
    return decoded("/encode", [&] { return res.at("latents").at(0).get<std::vector<double>>(); });
}

TrainStepResult RemoteBackend::loss_and_gradient(const BackendBatch& batch, const TokenDictionary& dict,
                                                 std::span<const std::string> trainable) const {
    validate(batch);
    for (const auto& t : trainable) {
        if (!dict.is_injected(t)) fail(ErrorCode::token_not_trainable, "'" + t + "' is not an injected token");
    }
    const json body = {{"latents", batch.latents},
                       {"timesteps", batch.timesteps},
                       {"noises", batch.noises},
                       {"prompt", batch.prompt},
                       {"embeddings", embeddings_json(dict)},
                       {"trainable", std::vector<std::string>(trainable.begin(), trainable.end())}};
    const json res = conn_->call("/loss", &body, ErrorCode::backend_unavailable);
    TrainStepResult out;
    decoded("/loss", [&] {
        out.loss = res.at("loss").get<double>();
        const auto& grads = res.at("gradients");
        for (const auto& t : trainable) {
            if (!grads.contains(t)) fail(ErrorCode::decode, "/loss omitted the gradient for " + t);
            out.gradients.insert_or_assign(t, EmbeddingVector(grads.at(t).get<std::vector<float>>()));
        }
        return 0;
    });
    return out;
}

ImageSet RemoteBackend::generate(const std::string& prompt, const TokenDictionary& dict, std::int64_t seed,
                                 int n) const {
    if (n < 1) fail(ErrorCode::invalid_argument, "generate needs n >= 1");
    const json body = {{"prompt", prompt}, {"embeddings", embeddings_json(dict)}, {"seed", seed}, {"n", n}};
    const json res = conn_->call("/generate", &body, ErrorCode::generation);
    const auto paths = decoded("/generate", [&] { return res.at("paths").get<std::vector<std::string>>(); });
    if (paths.size() != static_cast<std::size_t>(n)) {
        throw GenerationError("/generate returned " + std::to_string(paths.size()) + " images, asked for " +
                              std::to_string(n));
    }
    const std::string stem = "r" + to_hex(fnv1a64(body.dump())).substr(0, 12);
    ImageSet set;
    for (std::size_t i = 0; i < paths.size(); ++i) {
        ImageRef img;
        img.id = stem + "-" + std::to_string(i);
        img.path = paths[i];
        img.source = ImageSource::generated;
        img.seed = seed;
        img.prompt = prompt;
        set.images.push_back(std::move(img));
    }
    return set;
}

Matrix RemoteBackend::embed_images(std::span<const ImageRef> images) const {
    if (images.empty()) return {};
    json paths = json::array();
    for (const auto& img : images) paths.push_back(image_path(img));
    const json body = {{"paths", paths}};
    const json res = conn_->call("/embed", &body, ErrorCode::decode);
    const auto rows =
        decoded("/embed", [&] { return res.at("embeddings").get<std::vector<std::vector<float>>>(); });
    if (rows.size() != images.size()) fail(ErrorCode::decode, "/embed returned the wrong row count");
    Matrix m(rows.size(), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != m.cols) fail(ErrorCode::decode, "/embed returned ragged rows");
        std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
    }
    return m;
}

EmbeddingVector RemoteBackend::embed_image(const ImageRef& image) const {
    const Matrix m = embed_images(std::span(&image, 1));
    return EmbeddingVector(std::vector<float>(m.data.begin(), m.data.end()));
}

}  // namespace ctree
