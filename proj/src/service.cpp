#include "ctree/service.hpp"

#include <atomic>
#include <chrono>

#include <httplib.h>
#include <json.hpp>

#include "ctree/archive.hpp"
#include "ctree/errors.hpp"
#include "ctree/tree_builder.hpp"
#include "ctree/vector_file.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ctree {

const char* to_string(JobKind kind) {
    return kind == JobKind::split ? "split" : "generate";
}

const char* to_string(JobState state) {
    switch (state) {
        case JobState::queued: return "queued";
        case JobState::running: return "running";
        case JobState::done: return "done";
        case JobState::failed: return "failed";
    }
    return "queued";
}

namespace {

json job_json(const JobHandle& j) {
    return {{"id", j.id},
            {"kind", to_string(j.kind)},
            {"state", to_string(j.state)},
            {"step", j.step},
            {"loss", j.loss},
            {"result_ref", j.result_ref.empty() ? json(nullptr) : json(j.result_ref)},
            {"error", j.error.empty() ? json(nullptr) : json(j.error)}};
}

int http_status(ErrorCode code) {
    switch (code) {
        case ErrorCode::unknown_node: return 404;
        case ErrorCode::not_splittable: return 409;
        case ErrorCode::arity_mismatch:
        case ErrorCode::unknown_token:
        case ErrorCode::invalid_argument:
        case ErrorCode::key_collision:
        case ErrorCode::base_mismatch:
        case ErrorCode::domain: return 422;
        case ErrorCode::backend_unavailable: return 503;
        default: return 500;
    }
}

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message,
                const std::string& code = "") {
    json body = {{"error", message}};
    if (!code.empty()) body["code"] = code;
    send_json(res, status, body);
}

json read_manifest(const fs::path& dir) {
    return json::parse(read_file_bytes(dir / "manifest.json"));
}

json report_json(const std::optional<ConsistencyReport>& r) {
    if (!r) return nullptr;
    return {{"self_left", r->self_left}, {"self_right", r->self_right}, {"cross", r->cross},
            {"objective", r->objective}};
}

json tree_json(const ConceptTree& tree) {
    json nodes = json::array();
    for (const auto& [id, n] : tree.nodes) {
        nodes.push_back({{"id", id},
                         {"depth", n.depth},
                         {"token", n.token ? json(*n.token) : json(nullptr)},
                         {"parent", n.parent ? json(*n.parent) : json(nullptr)},
                         {"children", n.children},
                         {"status", to_string(n.status)},
                         {"splittable", n.splittable()},
                         {"self_consistency", n.self_consistency ? json(*n.self_consistency) : json(nullptr)},
                         {"sibling_cross_consistency",
                          n.sibling_cross_consistency ? json(*n.sibling_cross_consistency) : json(nullptr)},
                         {"sample_count", n.samples.size()}});
    }
    json log = json::array();
    for (const auto& r : tree.build_log) {
        json cands = json::array();
        for (const auto& c : r.candidates) {
            cands.push_back({{"seed", c.seed}, {"valid", c.valid}, {"report", report_json(c.report)}});
        }
        log.push_back({{"parent", r.parent},
                       {"candidates", cands},
                       {"chosen_seed", r.chosen_seed ? json(*r.chosen_seed) : json(nullptr)},
                       {"final_report", report_json(r.final_report)},
                       {"decision", to_string(r.decision)},
                       {"attached", r.attached},
                       {"children", r.children}});
    }
    return {{"tree_id", tree.tree_id},
            {"root_image_count", tree.root_images.size()},
            {"token_count", tree.dictionary.injected().size()},
            {"nodes", nodes},
            {"build_log", log}};
}

json event_json(const BuildEvent& e) {
    json j = {{"kind", to_string(e.kind)}, {"node", e.node}, {"step", e.step}, {"loss", e.loss}};
    if (e.seed) j["seed"] = *e.seed;
    if (e.report) j["report"] = report_json(e.report);
    if (e.decision) j["decision"] = to_string(*e.decision);
    return j;
}

bool valid_tree_id(const std::string& id) {
    return !id.empty() && id.front() != '.' && id.find('/') == std::string::npos &&
           id.find("..") == std::string::npos;
}

}  // namespace

ExplorationService::ExplorationService(fs::path trees_dir, std::shared_ptr<const DiffusionBackend> backend,
                                       ServiceOptions options)
    : trees_dir_(std::move(trees_dir)),
      backend_(std::move(backend)),
      options_(std::move(options)),
      server_(std::make_unique<httplib::Server>()) {
    if (!fs::is_directory(trees_dir_)) {
        fail(ErrorCode::io, "trees directory " + trees_dir_.string() + " does not exist");
    }
    install_routes();
    for (int i = 0; i < std::max(1, options_.workers); ++i) {
        workers_.emplace_back([this] { worker_loop(); });
    }
}

ExplorationService::~ExplorationService() {
    stop();
}

fs::path ExplorationService::tree_dir(const std::string& tree_id) const {
    return trees_dir_ / tree_id;
}

bool ExplorationService::tree_exists(const std::string& tree_id) const {
    return valid_tree_id(tree_id) && fs::is_regular_file(tree_dir(tree_id) / "manifest.json");
}

int ExplorationService::start(const std::string& host, int port) {
    const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
    if (bound < 0) fail(ErrorCode::io, "cannot bind " + host + ":" + std::to_string(port));
    server_thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return bound;
}

void ExplorationService::listen(const std::string& host, int port) {
    if (!server_->listen(host, port)) {
        fail(ErrorCode::io, "cannot listen on " + host + ":" + std::to_string(port));
    }
}

void ExplorationService::stop() {
    if (server_) server_->stop();
    if (server_thread_.joinable()) server_thread_.join();
    {
        std::lock_guard lock(mutex_);
        if (stopping_ && workers_.empty()) return;
        stopping_ = true;
        for (auto& t : queue_) {
            auto& j = jobs_[t.job_id];
            j.state = JobState::failed;
            j.error = "service stopped";
        }
        queue_.clear();
    }
    queue_changed_.notify_all();
    job_changed_.notify_all();
    for (auto& w : workers_) w.join();
    workers_.clear();
}

std::optional<JobHandle> ExplorationService::job(const std::string& id) const {
    std::lock_guard lock(mutex_);
    const auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
}

std::optional<JobHandle> ExplorationService::wait_for_job(const std::string& id, double timeout_seconds) const {
    std::unique_lock lock(mutex_);
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_seconds);
    job_changed_.wait_until(lock, deadline, [&] {
        const auto it = jobs_.find(id);
        return it == jobs_.end() || it->second.terminal();
    });
    const auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
}

void ExplorationService::update_job(const std::string& id, const std::function<void(JobHandle&)>& fn) {
    {
        std::lock_guard lock(mutex_);
        auto& j = jobs_.at(id);
        if (j.terminal()) return;
        fn(j);
    }
    job_changed_.notify_all();
}

std::string ExplorationService::enqueue(JobKind kind, std::function<std::string(const std::string&)> run,
                                        std::optional<std::string> tree_lock) {
    std::string id;
    {
        std::lock_guard lock(mutex_);
        id = "job-" + std::to_string(next_job_++);
        JobHandle h;
        h.id = id;
        h.kind = kind;
        jobs_.emplace(id, std::move(h));
        queue_.push_back({id, std::move(run), std::move(tree_lock)});
    }
    queue_changed_.notify_one();
    return id;
}

void ExplorationService::worker_loop() {
    for (;;) {
        Task task;
        {
            std::unique_lock lock(mutex_);
            queue_changed_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
            if (stopping_ && queue_.empty()) return;
            task = std::move(queue_.front());
            queue_.pop_front();
            auto& j = jobs_.at(task.job_id);
            j.state = JobState::running;
            j.events.push_back(json{{"kind", "state"}, {"state", "running"}}.dump());
        }
        job_changed_.notify_all();

        std::string result;
        std::string error;
        try {
            result = task.run(task.job_id);
        } catch (const std::exception& e) {
            error = e.what();
            if (error.empty()) error = "job failed";
        }
        {
            std::lock_guard lock(mutex_);
            auto& j = jobs_.at(task.job_id);
            if (error.empty()) {
                j.state = JobState::done;
                j.result_ref = result;
            } else {
                j.state = JobState::failed;
                j.error = error;
            }
            j.events.push_back(json{{"kind", "state"}, {"state", to_string(j.state)}}.dump());
            if (task.tree_lock) locked_trees_.erase(*task.tree_lock);
        }
        job_changed_.notify_all();
    }
}

void ExplorationService::install_routes() {
    auto& srv = *server_;
    const std::string origin = options_.cors_origin;

    srv.set_default_headers({{"Access-Control-Allow-Origin", origin},
                             {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                             {"Access-Control-Allow-Headers", "Content-Type"}});
    srv.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    srv.set_mount_point("/files", trees_dir_.string());

    srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        try {
            std::rethrow_exception(ep);
        } catch (const Error& e) {
            send_error(res, http_status(e.code()), e.what(), to_string(e.code()));
        } catch (const json::exception& e) {
            send_error(res, 400, std::string("bad JSON: ") + e.what());
        } catch (const std::exception& e) {
            send_error(res, 500, e.what());
        }
    });

    srv.Get("/trees", [this](const httplib::Request&, httplib::Response& res) {
        json out = json::array();
        std::vector<fs::path> dirs;
        for (const auto& entry : fs::directory_iterator(trees_dir_)) {
            const std::string name = entry.path().filename().string();
            if (entry.is_directory() && valid_tree_id(name) && fs::exists(entry.path() / "manifest.json")) {
                dirs.push_back(entry.path());
            }
        }
        std::sort(dirs.begin(), dirs.end());
        for (const auto& d : dirs) {
            try {
                const json m = read_manifest(d);
                out.push_back({{"id", d.filename().string()},
                               {"tree_id", m.at("tree_id")},
                               {"node_count", m.at("nodes").size()},
                               {"schema_version", m.at("schema_version")}});
            } catch (const std::exception&) {
                // unreadable archives are left out of the listing
            }
        }
        send_json(res, 200, out);
    });

    srv.Get(R"(/trees/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        if (!tree_exists(id)) return send_error(res, 404, "unknown tree '" + id + "'");
        send_json(res, 200, tree_json(load_tree(tree_dir(id))));
    });

    srv.Get(R"(/trees/([^/]+)/nodes/(-?\d+)/samples)", [this](const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        if (!tree_exists(id)) return send_error(res, 404, "unknown tree '" + id + "'");
        const json m = read_manifest(tree_dir(id));
        const int node = std::stoi(req.matches[2]);
        for (const auto& n : m.at("nodes")) {
            if (n.at("id").get<int>() != node) continue;
            auto images_of = [&](const json& set) {
                json out = json::array();
                for (const auto& img : set.at("images")) {
                    json e = {{"id", img.at("id")},
                              {"url", "/files/" + id + "/" + img.at("file").get<std::string>()},
                              {"source", img.at("source")},
                              {"seed", img.value("seed", json(nullptr))},
                              {"prompt", img.value("prompt", json(nullptr))}};
                    out.push_back(std::move(e));
                }
                return out;
            };
            json out = {{"tree_id", id}, {"node", node}};
            out["samples"] = images_of(n.at("samples"));
            out["score_samples"] = images_of(n.at("score_samples"));
            return send_json(res, 200, out);
        }
        send_error(res, 404, "tree '" + id + "' has no node " + std::to_string(node));
    });

    srv.Post(R"(/trees/([^/]+)/nodes/(-?\d+)/split)", [this](const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        if (!tree_exists(id)) return send_error(res, 404, "unknown tree '" + id + "'");
        const int node = std::stoi(req.matches[2]);
        const ConceptTree tree = load_tree(tree_dir(id));
        if (!tree.contains(node)) {
            return send_error(res, 404, "tree '" + id + "' has no node " + std::to_string(node));
        }
        if (!tree.node(node).splittable()) {
            return send_error(res, 409, "node " + std::to_string(node) + " cannot be split (" +
                                            to_string(tree.node(node).status) +
                                            (tree.node(node).is_leaf() ? "" : ", already split") + ")");
        }
        if (!backend_) return send_error(res, 503, "no backend configured");
        {
            std::lock_guard lock(mutex_);
            if (!locked_trees_.insert(id).second) {
                return send_error(res, 409, "tree '" + id + "' is already being split");
            }
        }
        auto run = [this, id, node](const std::string& job_id) {
            auto steps = std::make_shared<std::atomic<int>>(0);
            BuilderOptions opts;
            opts.progress_interval = 10;
            opts.events = [this, job_id, steps, interval = opts.progress_interval](const BuildEvent& e) {
                const int total = e.kind == BuildEventKind::train_progress ? (*steps += interval) : steps->load();
                update_job(job_id, [&](JobHandle& j) {
                    j.step = std::max(j.step, total);
                    if (e.kind == BuildEventKind::train_progress) j.loss = e.loss;
                    j.events.push_back(event_json(e).dump());
                });
            };
            TreeBuilder builder(*backend_, opts);
            ConceptTree t = load_tree(tree_dir(id));
            auto [updated, record] = builder.split_node(std::move(t), node);
            save_tree(updated, tree_dir(id));
            return "/trees/" + id;
        };
        const std::string job_id = enqueue(JobKind::split, run, id);
        send_json(res, 202, job_json(*job(job_id)));
    });

    srv.Post("/generate", [this](const httplib::Request& req, httplib::Response& res) {
        const json body = json::parse(req.body);
        const auto tree_ids = body.value("tree_ids", std::vector<std::string>{});
        const auto tokens = body.value("tokens", std::vector<std::string>{});
        const std::string tpl = body.value("template", std::string());
        const int n = body.value("n", 4);
        const std::int64_t seed = body.value("seed", std::int64_t{0});

        if (count_slots(tpl) != tokens.size()) {
            return send_error(res, 422, "template has " + std::to_string(count_slots(tpl)) + " slots but " +
                                            std::to_string(tokens.size()) + " tokens were given",
                              "arity_mismatch");
        }
        if (n < 1 || n > options_.max_generate_images) {
            return send_error(res, 422, "n must lie in [1, " + std::to_string(options_.max_generate_images) + "]");
        }
        for (const auto& t : tree_ids) {
            if (!tree_exists(t)) return send_error(res, 404, "unknown tree '" + t + "'");
        }
        if (!backend_) return send_error(res, 503, "no backend configured");

        TokenDictionary dict(backend_->vocabulary());
        std::set<std::string> seen;
        for (const auto& t : tree_ids) {
            if (!seen.insert(t).second) continue;
            dict = merge(dict, load_tree(tree_dir(t)).dictionary.rebind(backend_->vocabulary()));
        }
        const std::string prompt = compose_prompt(tpl, tokens, dict);

        auto run = [this, dict, prompt, seed, n](const std::string& job_id) {
            const ImageSet images = backend_->generate(prompt, dict, seed, n);
            const fs::path out = trees_dir_ / ".generated" / job_id;
            fs::create_directories(out);
            json list = json::array();
            for (std::size_t i = 0; i < images.size(); ++i) {
                const auto& img = images.images[i];
                json e = {{"id", img.id}, {"seed", seed}, {"prompt", prompt}};
                if (img.has_inline_payload()) {
                    const std::string name = std::to_string(i) + ".vec";
                    write_vector_file(out / name, img.vector);
                    e["url"] = "/files/.generated/" + job_id + "/" + name;
                    e["vector"] = img.vector;
                } else {
                    const std::string name = std::to_string(i) + img.path.extension().string();
                    fs::copy_file(img.path, out / name, fs::copy_options::overwrite_existing);
                    e["url"] = "/files/.generated/" + job_id + "/" + name;
                }
                list.push_back(std::move(e));
                update_job(job_id, [&](JobHandle& j) { j.step = static_cast<int>(i) + 1; });
            }
            write_file_bytes(out / "result.json", json{{"prompt", prompt}, {"images", list}}.dump(2));
            return "/files/.generated/" + job_id + "/result.json";
        };
        const std::string job_id = enqueue(JobKind::generate, run, std::nullopt);
        json out = job_json(*job(job_id));
        out["prompt"] = prompt;
        send_json(res, 202, out);
    });

    srv.Get(R"(/jobs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
        const auto j = job(req.matches[1]);
        if (!j) return send_error(res, 404, "unknown job");
        send_json(res, 200, job_json(*j));
    });

    srv.Get(R"(/jobs/([^/]+)/events)", [this](const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        if (!job(id)) return send_error(res, 404, "unknown job");
        auto sent = std::make_shared<std::size_t>(0);
        res.set_chunked_content_provider("text/event-stream", [this, id, sent](std::size_t, httplib::DataSink& sink) {
            std::unique_lock lock(mutex_);
            job_changed_.wait_for(lock, std::chrono::milliseconds(250), [&] {
                const auto& j = jobs_.at(id);
                return stopping_ || j.terminal() || j.events.size() > *sent;
            });
            const JobHandle& j = jobs_.at(id);
            std::string chunk;
            for (; *sent < j.events.size(); ++*sent) chunk += "data: " + j.events[*sent] + "\n\n";
            const bool finished = j.terminal() || stopping_;
            if (finished) chunk += "event: end\ndata: " + job_json(j).dump() + "\n\n";
            lock.unlock();
            if (!chunk.empty() && !sink.write(chunk.data(), chunk.size())) return false;
            if (finished) sink.done();
            return true;
        });
    });
}

}  // namespace ctree
