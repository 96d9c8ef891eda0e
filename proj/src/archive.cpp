#include "ctree/archive.hpp"

#include <atomic>
#include <map>
#include <system_error>
#include <unistd.h>

#include <json.hpp>
#include <zlib.h>

#include "ctree/errors.hpp"
#include "ctree/hashing.hpp"
#include "ctree/vector_file.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ctree {
namespace {

std::uint32_t crc_of(std::string_view bytes) {
    uLong c = crc32(0L, Z_NULL, 0);
    c = crc32(c, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
    return static_cast<std::uint32_t>(c);
}

void check_path_component(const std::string& s, const char* what) {
    if (s.empty() || s == "." || s == ".." || s.find_first_of("/\\") != std::string::npos) {
        fail(ErrorCode::invalid_argument, std::string(what) + " '" + s + "' is not usable as a file name");
    }
}

template <class T>
json opt(const std::optional<T>& v) {
    return v ? json(*v) : json(nullptr);
}

template <class T>
std::optional<T> get_opt(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<T>();
}

json report_json(const ConsistencyReport& r) {
    return {{"self_left", r.self_left}, {"self_right", r.self_right}, {"cross", r.cross},
            {"objective", r.objective}};
}

ConsistencyReport report_from(const json& j) {
    return {j.at("self_left").get<double>(), j.at("self_right").get<double>(),
            j.at("cross").get<double>(), j.at("objective").get<double>()};
}

json config_json(const BuildConfig& c) {
    return {{"alpha", c.alpha},
            {"seeds", c.seeds},
            {"candidate_steps", c.candidate_steps},
            {"final_steps", c.final_steps},
            {"score_set_size", c.score_set_size},
            {"train_set_size", c.train_set_size},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"max_depth", c.max_depth},
            {"self_coherency_threshold", c.self_coherency_threshold},
            {"sibling_distinctness_threshold", c.sibling_distinctness_threshold},
            {"init_word", c.init_word},
            {"train_template", c.train_template},
            {"sample_template", c.sample_template}};
}

BuildConfig config_from(const json& j) {
    BuildConfig c;
    c.alpha = j.at("alpha").get<double>();
    c.seeds = j.at("seeds").get<std::vector<std::int64_t>>();
    c.candidate_steps = j.at("candidate_steps").get<int>();
    c.final_steps = j.at("final_steps").get<int>();
    c.score_set_size = j.at("score_set_size").get<int>();
    c.train_set_size = j.at("train_set_size").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.max_depth = j.at("max_depth").get<int>();
    c.self_coherency_threshold = j.at("self_coherency_threshold").get<double>();
    c.sibling_distinctness_threshold = j.at("sibling_distinctness_threshold").get<double>();
    c.init_word = j.at("init_word").get<std::string>();
    c.train_template = j.at("train_template").get<std::string>();
    c.sample_template = j.value("sample_template", c.sample_template);
    return c;
}

// Collects files while building the manifest; `root` is null when only the
// document is wanted.
class Writer {
public:
    explicit Writer(const fs::path* root) : root_(root) {}

    json file(const std::string& rel, const std::string& bytes) {
        if (root_) {
            const fs::path p = *root_ / rel;
            fs::create_directories(p.parent_path());
            write_file_bytes(p, bytes);
        }
        return {{"file", rel}, {"crc32", crc_of(bytes)}};
    }

    json image_set(const ImageSet& set, const std::string& group) {
        auto& written = groups_[group];
        json images = json::array();
        for (const auto& img : set.images) {
            const std::string key = img.id + "#" +
                                    (img.has_inline_payload()
                                         ? to_hex(fnv1a64(std::as_bytes(std::span(img.vector))))
                                         : img.path.string());
            auto it = written.find(key);
            if (it == written.end()) {
                const std::string n = std::to_string(written.size());
                json entry;
                if (img.has_inline_payload()) {
                    entry = file("images/" + group + "/" + n + ".vec", encode_vector(img.vector));
                    entry["payload"] = "inline";
                } else {
                    const std::string ext = img.path.has_extension() ? img.path.extension().string() : ".png";
                    entry = file("images/" + group + "/" + n + ext, read_file_bytes(img.path));
                    entry["payload"] = "file";
                }
                it = written.emplace(key, std::move(entry)).first;
            }
            json e = it->second;
            e["id"] = img.id;
            e["source"] = to_string(img.source);
            e["seed"] = opt(img.seed);
            e["prompt"] = opt(img.prompt);
            images.push_back(std::move(e));
        }
        json out = {{"images", std::move(images)}};
        if (set.embeddings) {
            const auto& m = *set.embeddings;
            json emb = file("images/" + group + "/embeddings-" + std::to_string(embedding_files_++) + ".bin",
                            encode_vector(m.data));
            emb["rows"] = m.rows;
            emb["cols"] = m.cols;
            out["embeddings"] = std::move(emb);
        } else {
            out["embeddings"] = nullptr;
        }
        return out;
    }

private:
    const fs::path* root_;
    std::map<std::string, std::map<std::string, json>> groups_;
    int embedding_files_ = 0;
};

json build_manifest(const ConceptTree& tree, const fs::path* root) {
    check_path_component(tree.tree_id, "tree id");
    Writer w(root);
    json m;
    m["schema_version"] = kSchemaVersion;
    m["tree_id"] = tree.tree_id;
    m["config"] = config_json(tree.config);

    json tokens = json::object();
    for (const auto& [token, vec] : tree.dictionary.injected()) {
        check_path_component(token, "token");
        tokens[token] = w.file("embeddings/" + token + ".bin", encode_vector(vec.values()));
    }
    m["dictionary"] = {{"dim", tree.dictionary.dim()},
                       {"base_fingerprint", tree.dictionary.base_fingerprint()},
                       {"tokens", std::move(tokens)}};
    m["root_images"] = w.image_set(tree.root_images, "root");

    json nodes = json::array();
    for (const auto& [id, n] : tree.nodes) {
        const std::string group = std::to_string(id);
        nodes.push_back({{"id", n.id},
                         {"depth", n.depth},
                         {"token", opt(n.token)},
                         {"has_embedding", n.embedding.has_value()},
                         {"parent", opt(n.parent)},
                         {"children", n.children},
                         {"status", to_string(n.status)},
                         {"self_consistency", opt(n.self_consistency)},
                         {"sibling_cross_consistency", opt(n.sibling_cross_consistency)},
                         {"samples", w.image_set(n.samples, group)},
                         {"score_samples", w.image_set(n.score_samples, group)}});
    }
    m["nodes"] = std::move(nodes);

    json log = json::array();
    for (const auto& rec : tree.build_log) {
        json cands = json::array();
        for (const auto& c : rec.candidates) {
            cands.push_back({{"seed", c.seed},
                             {"valid", c.valid},
                             {"failure", c.failure},
                             {"report", c.report ? report_json(*c.report) : json(nullptr)}});
        }
        log.push_back({{"parent", rec.parent},
                       {"candidates", std::move(cands)},
                       {"chosen_seed", opt(rec.chosen_seed)},
                       {"final_report", rec.final_report ? report_json(*rec.final_report) : json(nullptr)},
                       {"decision", to_string(rec.decision)},
                       {"attached", rec.attached},
                       {"children", rec.children},
                       {"wall_time_seconds", rec.wall_time_seconds}});
    }
    m["build_log"] = std::move(log);
    return m;
}

// --- loading -------------------------------------------------------------------

class Reader {
public:
    Reader(fs::path root, bool verify) : root_(std::move(root)), verify_(verify) {}

    std::string file(const json& entry) const {
        const std::string rel = entry.at("file").get<std::string>();
        const fs::path p = root_ / rel;
        if (rel.find("..") != std::string::npos) {
            fail(ErrorCode::corrupt_log, "manifest path escapes the archive: " + rel);
        }
        std::error_code ec;
        if (!fs::is_regular_file(p, ec)) {
            fail(ErrorCode::corrupt_log, "manifest references missing file " + rel);
        }
        std::string bytes = read_file_bytes(p);
        if (verify_ && crc_of(bytes) != entry.at("crc32").get<std::uint32_t>()) {
            fail(ErrorCode::checksum, "checksum mismatch for " + rel);
        }
        return bytes;
    }

    ImageSet image_set(const json& j) const {
        ImageSet set;
        for (const auto& e : j.at("images")) {
            ImageRef img;
            img.id = e.at("id").get<std::string>();
            img.source = image_source_from_string(e.at("source").get<std::string>());
            img.seed = get_opt<std::int64_t>(e, "seed");
            img.prompt = get_opt<std::string>(e, "prompt");
            const std::string bytes = file(e);
            if (e.value("payload", std::string("inline")) == "inline") {
                img.vector = decode_vector(bytes);
            } else {
                img.path = root_ / e.at("file").get<std::string>();
            }
            set.images.push_back(std::move(img));
        }
        if (j.contains("embeddings") && !j.at("embeddings").is_null()) {
            const auto& emb = j.at("embeddings");
            Matrix m;
            m.rows = emb.at("rows").get<std::size_t>();
            m.cols = emb.at("cols").get<std::size_t>();
            m.data = decode_vector(file(emb));
            if (m.data.size() != m.rows * m.cols) {
                fail(ErrorCode::decode, "embedding matrix size disagrees with its shape");
            }
            set.embeddings = std::move(m);
        }
        return set;
    }

private:
    fs::path root_;
    bool verify_;
};

ConceptTree tree_from_manifest(const json& m, const fs::path& dir) {
    if (!m.contains("schema_version") || !m.at("schema_version").is_number_integer()) {
        fail(ErrorCode::schema_version, "manifest has no schema_version");
    }
    const int version = m.at("schema_version").get<int>();
    if (version != 1 && version != kSchemaVersion) {
        fail(ErrorCode::schema_version, "unsupported archive schema version " + std::to_string(version) +
                                            " (this build reads 1 and " + std::to_string(kSchemaVersion) + ")");
    }
    // version 1 predates per-file checksums
    const Reader r(dir, version >= 2);

    ConceptTree tree;
    tree.tree_id = m.at("tree_id").get<std::string>();
    tree.config = config_from(m.at("config"));

    const auto& d = m.at("dictionary");
    tree.dictionary = TokenDictionary::detached(d.at("dim").get<std::size_t>(),
                                                d.at("base_fingerprint").get<std::string>());
    for (const auto& [token, entry] : d.at("tokens").items()) {
        auto values = decode_vector(r.file(entry));
        if (values.size() != tree.dictionary.dim()) {
            fail(ErrorCode::checksum, "embedding for " + token + " has the wrong length");
        }
        tree.dictionary.set(token, EmbeddingVector(std::move(values)));
    }
    tree.root_images = r.image_set(m.at("root_images"));

    for (const auto& jn : m.at("nodes")) {
        ConceptNode n;
        n.id = jn.at("id").get<NodeId>();
        n.depth = jn.at("depth").get<int>();
        n.token = get_opt<std::string>(jn, "token");
        n.parent = get_opt<NodeId>(jn, "parent");
        n.children = jn.at("children").get<std::vector<NodeId>>();
        n.status = node_status_from_string(jn.at("status").get<std::string>());
        n.self_consistency = get_opt<double>(jn, "self_consistency");
        n.sibling_cross_consistency = get_opt<double>(jn, "sibling_cross_consistency");
        n.samples = r.image_set(jn.at("samples"));
        n.score_samples = r.image_set(jn.at("score_samples"));
        if (jn.value("has_embedding", n.token.has_value()) && n.token) {
            if (!tree.dictionary.is_injected(*n.token)) {
                fail(ErrorCode::corrupt_log, "node " + std::to_string(n.id) + " token " + *n.token +
                                                 " has no embedding file");
            }
            n.embedding = tree.dictionary.injected_embedding(*n.token);
        }
        tree.nodes.emplace(n.id, std::move(n));
    }

    for (const auto& jr : m.at("build_log")) {
        SplitRecord rec;
        rec.parent = jr.at("parent").get<NodeId>();
        for (const auto& jc : jr.at("candidates")) {
            CandidateOutcome c;
            c.seed = jc.at("seed").get<std::int64_t>();
            c.valid = jc.at("valid").get<bool>();
            c.failure = jc.value("failure", std::string());
            if (jc.contains("report") && !jc.at("report").is_null()) c.report = report_from(jc.at("report"));
            rec.candidates.push_back(std::move(c));
        }
        rec.chosen_seed = get_opt<std::int64_t>(jr, "chosen_seed");
        if (jr.contains("final_report") && !jr.at("final_report").is_null()) {
            rec.final_report = report_from(jr.at("final_report"));
        }
        rec.decision = split_decision_from_string(jr.at("decision").get<std::string>());
        rec.attached = jr.at("attached").get<bool>();
        rec.children = jr.at("children").get<std::vector<NodeId>>();
        rec.wall_time_seconds = jr.value("wall_time_seconds", 0.0);
        tree.build_log.push_back(std::move(rec));
    }
    return tree;
}

std::atomic<unsigned> temp_counter{0};

}  // namespace

std::string manifest_text(const ConceptTree& tree) {
    return build_manifest(tree, nullptr).dump(2) + "\n";
}

void save_tree(const ConceptTree& tree, const fs::path& dir) {
    const fs::path target = fs::absolute(dir).lexically_normal();
    const fs::path parent = target.parent_path();
    const std::string suffix = std::to_string(::getpid()) + "-" + std::to_string(temp_counter++);
    const fs::path tmp = parent / ("." + target.filename().string() + ".tmp-" + suffix);
    const fs::path old = parent / ("." + target.filename().string() + ".old-" + suffix);

    std::error_code ec;
    try {
        fs::create_directories(parent);
        fs::remove_all(tmp, ec);
        fs::create_directories(tmp);
        const json m = build_manifest(tree, &tmp);
        write_file_bytes(tmp / "manifest.json", m.dump(2) + "\n");
    } catch (const fs::filesystem_error& e) {
        fs::remove_all(tmp, ec);
        fail(ErrorCode::io, std::string("writing archive: ") + e.what());
    } catch (...) {
        fs::remove_all(tmp, ec);
        throw;
    }

    const bool had_previous = fs::exists(target);
    if (had_previous) {
        fs::rename(target, old, ec);
        if (ec) {
            fs::remove_all(tmp, ec);
            fail(ErrorCode::io, "cannot replace " + target.string());
        }
    }
    fs::rename(tmp, target, ec);
    if (ec) {
        std::error_code ignore;
        if (had_previous) fs::rename(old, target, ignore);
        fs::remove_all(tmp, ignore);
        fail(ErrorCode::io, "cannot move archive into place: " + ec.message());
    }
    if (had_previous) fs::remove_all(old, ec);
}

ConceptTree load_tree(const fs::path& dir) {
    const fs::path manifest = dir / "manifest.json";
    if (!fs::is_regular_file(manifest)) {
        fail(ErrorCode::io, "no manifest.json in " + dir.string());
    }
    json m;
    try {
        m = json::parse(read_file_bytes(manifest));
    } catch (const json::exception& e) {
        fail(ErrorCode::decode, "manifest is not valid JSON: " + std::string(e.what()));
    }
    try {
        return tree_from_manifest(m, dir);
    } catch (const json::exception& e) {
        fail(ErrorCode::decode, "malformed manifest: " + std::string(e.what()));
    }
}

}  // namespace ctree
