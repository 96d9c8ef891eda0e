#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "ctree/backend.hpp"
#include "ctree/tree.hpp"

namespace httplib {
class Server;
}

namespace ctree {

enum class JobKind { split, generate };
enum class JobState { queued, running, done, failed };

const char* to_string(JobKind kind);
const char* to_string(JobState state);

struct JobHandle {
    std::string id;
    JobKind kind = JobKind::split;
    JobState state = JobState::queued;
    int step = 0;
    double loss = 0.0;
    std::string result_ref;
    std::string error;
    // serialized progress events, in emission order
    std::vector<std::string> events;

    bool terminal() const { return state == JobState::done || state == JobState::failed; }
};

struct ServiceOptions {
    int workers = 2;
    int max_generate_images = 64;
    std::string cors_origin = "*";
    BuildConfig default_config;
};

/// REST front end over a directory of tree archives.
///
/// Reads are served from the archives on disk; splits and generations run as
/// queued jobs. A split job rewrites its archive only after it completes, so
/// a failed job leaves the archive as it was.
class ExplorationService {
public:
    ExplorationService(std::filesystem::path trees_dir,
                       std::shared_ptr<const DiffusionBackend> backend,
                       ServiceOptions options = {});
    ~ExplorationService();

    ExplorationService(const ExplorationService&) = delete;
    ExplorationService& operator=(const ExplorationService&) = delete;

    /// Binds and serves on a background thread; port 0 picks a free port.
    /// Returns the bound port.
    int start(const std::string& host = "127.0.0.1", int port = 0);
    /// Blocks serving on the calling thread.
    void listen(const std::string& host, int port);
    void stop();

    std::optional<JobHandle> job(const std::string& id) const;
    /// Blocks until the job reaches a terminal state or the timeout passes.
    std::optional<JobHandle> wait_for_job(const std::string& id, double timeout_seconds) const;

private:
    struct Task {
        std::string job_id;
        std::function<std::string(const std::string& job_id)> run;
        std::optional<std::string> tree_lock;
    };

    void install_routes();
    void worker_loop();
    std::string enqueue(JobKind kind, std::function<std::string(const std::string&)> run,
                        std::optional<std::string> tree_lock);
    void update_job(const std::string& id, const std::function<void(JobHandle&)>& fn);
    std::filesystem::path tree_dir(const std::string& tree_id) const;
    bool tree_exists(const std::string& tree_id) const;

    std::filesystem::path trees_dir_;
    std::shared_ptr<const DiffusionBackend> backend_;
    ServiceOptions options_;
    std::unique_ptr<httplib::Server> server_;
    std::thread server_thread_;

    mutable std::mutex mutex_;
    mutable std::condition_variable job_changed_;
    std::condition_variable queue_changed_;
    std::map<std::string, JobHandle> jobs_;
    std::deque<Task> queue_;
    std::set<std::string> locked_trees_;
    std::vector<std::thread> workers_;
    bool stopping_ = false;
    std::uint64_t next_job_ = 1;
};

}  // namespace ctree
