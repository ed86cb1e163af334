#pragma once

#include "ehrisk/store.hpp"

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace ehrisk {

enum class JobState { pending, running, done, failed };

std::string_view job_state_name(JobState state);

/// Lowercase hex of `bytes` bytes from the OS CSPRNG.
std::string random_hex(std::size_t bytes);

struct PredictionJob {
    std::string job_id;
    std::string patient_id;
    bool with_explanation = false;
    JobState state = JobState::pending;
    TimestampMs submitted_at = 0;
    std::optional<TimestampMs> finished_at;
    std::optional<std::string> result;  ///< prediction_id once done
    std::optional<std::string> error;  ///< message once failed
    /// Every state the job has been in, in order.
    std::vector<JobState> history;
};

/// Moves `job` to `next` and records it in the history. The only legal moves are
/// pending -> running and running -> done | failed; anything else throws StateError,
/// so a terminal state is never overwritten.
void advance(PredictionJob &job, JobState next);

/// Runs a job; returns the stored prediction id or throws to fail it.
using JobHandler = std::function<std::string(const PredictionJob &job)>;

/// Bounded FIFO of prediction jobs consumed by a fixed pool of worker threads.
/// Only pending jobs count against the depth. Jobs are kept in memory for lookup.
class JobQueue {
  public:
    JobQueue(std::size_t depth, std::size_t workers, JobHandler handler);
    /// Stops intake, lets workers finish every queued job, then joins them.
    ~JobQueue();

    JobQueue(const JobQueue &) = delete;
    JobQueue &operator=(const JobQueue &) = delete;

    /// The new job id, or nullopt when the queue is full (nothing was enqueued).
    std::optional<std::string> submit(const std::string &patient_id, bool with_explanation);
    [[nodiscard]] std::optional<PredictionJob> get(const std::string &job_id) const;

    /// Workers finish their current job and then take no new one until resume().
    void pause();
    void resume();
    /// Blocks until no job is pending or running; false on timeout.
    bool wait_idle(std::chrono::milliseconds timeout);

    [[nodiscard]] std::size_t pending() const;
    [[nodiscard]] std::size_t depth() const noexcept { return depth_; }
    [[nodiscard]] std::vector<PredictionJob> jobs() const;

  private:
    void worker_loop();

    const std::size_t depth_;
    JobHandler handler_;

    mutable std::mutex mutex_;
    std::condition_variable work_cv_;
    std::condition_variable idle_cv_;
    std::deque<std::string> queue_;
    std::map<std::string, PredictionJob, std::less<>> jobs_;
    std::size_t running_ = 0;
    bool paused_ = false;
    bool stopping_ = false;
    std::vector<std::thread> workers_;
};

}  // namespace ehrisk
