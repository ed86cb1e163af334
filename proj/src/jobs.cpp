#include "ehrisk/jobs.hpp"

#include "ehrisk/errors.hpp"

#include <openssl/rand.h>

#include <vector>

namespace ehrisk {

std::string_view job_state_name(JobState state) {
    switch (state) {
    case JobState::pending: return "pending";
    case JobState::running: return "running";
    case JobState::done: return "done";
    case JobState::failed: return "failed";
    }
    return "unknown";
}

std::string random_hex(std::size_t bytes) {
    std::vector<unsigned char> raw(bytes);
    if (RAND_bytes(raw.data(), static_cast<int>(raw.size())) != 1) {
        throw StateError("system random source unavailable");
    }
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * bytes);
    for (const unsigned char b : raw) {
        out.push_back(kDigits[b >> 4]);
        out.push_back(kDigits[b & 0xF]);
    }
    return out;
}

JobQueue::JobQueue(std::size_t depth, std::size_t workers, JobHandler handler) : depth_(depth), handler_(std::move(handler)) {
    if (depth == 0 || workers == 0) {
        throw ConfigError("job queue needs a positive depth and worker count");
    }
    workers_.reserve(workers);
    for (std::size_t i = 0; i < workers; ++i) {
        workers_.emplace_back([this] { worker_loop(); });
    }
}

JobQueue::~JobQueue() {
    {
        std::lock_guard lock(mutex_);
        stopping_ = true;
        paused_ = false;
    }
    work_cv_.notify_all();
    for (std::thread &t : workers_) {
        t.join();
    }
}

void advance(PredictionJob &job, JobState next) {
    const JobState current = job.state;
    const bool legal = (current == JobState::pending && next == JobState::running) || (current == JobState::running && (next == JobState::done || next == JobState::failed));
    if (!legal) {
        throw StateError("job " + job.job_id + ": illegal transition " + std::string(job_state_name(current)) + " -> " + std::string(job_state_name(next)));
    }
    job.state = next;
    job.history.push_back(next);
}

std::optional<std::string> JobQueue::submit(const std::string &patient_id, bool with_explanation) {
    std::lock_guard lock(mutex_);
    if (stopping_ || queue_.size() >= depth_) {
        return std::nullopt;
    }
    PredictionJob job;
    job.job_id = random_hex(16);
    job.patient_id = patient_id;
    job.with_explanation = with_explanation;
    job.submitted_at = now_ms();
    job.history.push_back(JobState::pending);
    const std::string id = job.job_id;
    jobs_.emplace(id, std::move(job));
    queue_.push_back(id);
    work_cv_.notify_one();
    return id;
}

std::optional<PredictionJob> JobQueue::get(const std::string &job_id) const {
    std::lock_guard lock(mutex_);
    const auto it = jobs_.find(job_id);
    if (it == jobs_.end()) {
        return std::nullopt;
    }
    return it->second;
}

void JobQueue::pause() {
    std::lock_guard lock(mutex_);
    paused_ = true;
}

void JobQueue::resume() {
    {
        std::lock_guard lock(mutex_);
        paused_ = false;
    }
    work_cv_.notify_all();
}

bool JobQueue::wait_idle(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mutex_);
    return idle_cv_.wait_for(lock, timeout, [this] { return queue_.empty() && running_ == 0; });
}

std::size_t JobQueue::pending() const {
    std::lock_guard lock(mutex_);
    return queue_.size();
}

std::vector<PredictionJob> JobQueue::jobs() const {
    std::lock_guard lock(mutex_);
    std::vector<PredictionJob> out;
    out.reserve(jobs_.size());
    for (const auto &[id, job] : jobs_) {
        out.push_back(job);
    }
    return out;
}

void JobQueue::worker_loop() {
    std::unique_lock lock(mutex_);
    for (;;) {
        work_cv_.wait(lock, [this] { return (!paused_ && !queue_.empty()) || (stopping_ && queue_.empty()); });
        if (queue_.empty()) {
            return;
        }
        const std::string id = queue_.front();
        queue_.pop_front();
        PredictionJob &job = jobs_.at(id);
        advance(job, JobState::running);
        ++running_;
        const PredictionJob snapshot = job;
        lock.unlock();

        std::optional<std::string> result;
        std::string error;
        try {
            result = handler_(snapshot);
        } catch (const std::exception &e) {
            error = e.what();
        } catch (...) {
            error = "unknown failure";
        }

        lock.lock();
        PredictionJob &finished = jobs_.at(id);
        finished.finished_at = now_ms();
        if (result) {
            finished.result = std::move(result);
            advance(finished, JobState::done);
        } else {
            finished.error = error.empty() ? "job failed" : error;
            advance(finished, JobState::failed);
        }
        --running_;
        if (queue_.empty() && running_ == 0) {
            idle_cv_.notify_all();
        }
    }
}

}  // namespace ehrisk
