#pragma once

#include "ehrisk/config.hpp"
#include "ehrisk/jobs.hpp"
#include "ehrisk/model.hpp"
#include "ehrisk/store.hpp"

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

namespace httplib {
class Server;
}

namespace ehrisk {

/// The /api/v1 HTTP service: session auth, patient CRUD, lab submission,
/// asynchronous prediction jobs, horizons and alerts.
///
/// The checkpoint is loaded at construction. When it cannot be loaded the
/// service still starts; jobs then fail with the load error and loading is
/// retried on the next job.
class Service {
  public:
    using Clock = std::function<TimestampMs()>;

    Service(ServiceConfig config, Storage &store, Clock clock = now_ms);
    ~Service();

    Service(const Service &) = delete;
    Service &operator=(const Service &) = delete;

    /// Binds the configured address (port 0 picks a free one), serves on a
    /// background thread, and returns the bound port. Throws StateError when
    /// the address cannot be bound.
    int start();
    void stop();

    JobQueue &jobs() { return *queue_; }
    [[nodiscard]] std::optional<std::string> model_version() const;

  private:
    struct Session {
        std::string user;
        TimestampMs expires_at = 0;
    };

    void install_routes();
    [[nodiscard]] bool authorized(const std::string &header);
    std::shared_ptr<const Model> current_model(std::string &version);
    std::string run_job(const PredictionJob &job);

    ServiceConfig config_;
    Storage &store_;
    Clock clock_;

    mutable std::mutex model_mutex_;
    std::shared_ptr<const Model> model_;
    std::string model_version_;

    std::mutex session_mutex_;
    std::map<std::string, Session, std::less<>> sessions_;

    std::unique_ptr<httplib::Server> server_;
    std::thread server_thread_;
    // last: destroyed first, while everything its workers use is alive
    std::unique_ptr<JobQueue> queue_;
};

/// Opens the store, starts the service and blocks until SIGINT / SIGTERM.
void serve_forever(const ServiceConfig &config);

}  // namespace ehrisk
