#include "doctest.h"

#include "ehrisk/errors.hpp"
#include "ehrisk/jobs.hpp"

#include <atomic>
#include <set>
#include <thread>

using namespace ehrisk;
using namespace std::chrono_literals;

TEST_CASE("legal and illegal transitions") {
    const std::vector<JobState> all{ JobState::pending, JobState::running, JobState::done, JobState::failed };
    for (const JobState from : all) {
        for (const JobState to : all) {
            PredictionJob job;
            job.state = from;
            const bool legal = (from == JobState::pending && to == JobState::running) || (from == JobState::running && (to == JobState::done || to == JobState::failed));
            if (legal) {
                CHECK_NOTHROW(advance(job, to));
                CHECK(job.state == to);
                CHECK(job.history.back() == to);
            } else {
                CHECK_THROWS_AS(advance(job, to), StateError);
                CHECK(job.state == from);
                CHECK(job.history.empty());
            }
        }
    }
}

TEST_CASE("random ids are hex of the requested length and distinct") {
    std::set<std::string> seen;
    for (int i = 0; i < 200; ++i) {
        const std::string id = random_hex(16);
        CHECK(id.size() == 32);
        CHECK(id.find_first_not_of("0123456789abcdef") == std::string::npos);
        seen.insert(id);
    }
    CHECK(seen.size() == 200);
}

TEST_CASE("jobs run to done or failed with their full history") {
    JobQueue q(8, 2, [](const PredictionJob &job) -> std::string {
        if (job.patient_id == "bad") {
            throw std::runtime_error("no such thing");
        }
        return "pred-" + job.patient_id;
    });
    const auto good = q.submit("p1", true);
    const auto bad = q.submit("bad", false);
    REQUIRE(good);
    REQUIRE(bad);
    REQUIRE(q.wait_idle(5s));
    const auto g = q.get(*good);
    REQUIRE(g);
    CHECK(g->state == JobState::done);
    CHECK(g->result == "pred-p1");
    CHECK(g->with_explanation);
    CHECK(g->finished_at.has_value());
    CHECK(g->history == std::vector<JobState>{ JobState::pending, JobState::running, JobState::done });
    const auto b = q.get(*bad);
    CHECK(b->state == JobState::failed);
    CHECK(b->error == "no such thing");
    CHECK(b->history == std::vector<JobState>{ JobState::pending, JobState::running, JobState::failed });
    CHECK_FALSE(q.get("nope").has_value());
    CHECK(q.jobs().size() == 2);
}

TEST_CASE("a paused queue fills to its depth and then refuses") {
    std::atomic<int> ran{ 0 };
    JobQueue q(5, 1, [&](const PredictionJob &) {
        ++ran;
        return std::string("x");
    });
    q.pause();
    std::vector<std::string> ids;
    int refused = 0;
    for (int i = 0; i < 8; ++i) {
        if (auto id = q.submit("p", false)) {
            ids.push_back(*id);
        } else {
            ++refused;
        }
    }
    CHECK(ids.size() == 5);
    CHECK(refused == 3);
    CHECK(q.pending() == 5);
    CHECK_FALSE(q.wait_idle(50ms));
    CHECK(ran.load() == 0);
    q.resume();
    REQUIRE(q.wait_idle(5s));
    CHECK(ran.load() == 5);
    for (const auto &id : ids) {
        CHECK(q.get(id)->state == JobState::done);
    }
    // room again once drained
    CHECK(q.submit("p", false).has_value());
}

TEST_CASE("destruction drains queued work") {
    std::atomic<int> ran{ 0 };
    {
        JobQueue q(100, 2, [&](const PredictionJob &) {
            std::this_thread::sleep_for(1ms);
            ++ran;
            return std::string("x");
        });
        for (int i = 0; i < 40; ++i) {
            REQUIRE(q.submit("p", false));
        }
    }
    CHECK(ran.load() == 40);
}

TEST_CASE("concurrent submitters never exceed the depth and every accepted job finishes") {
    JobQueue q(50, 3, [](const PredictionJob &job) { return job.patient_id; });
    std::atomic<int> accepted{ 0 };
    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t) {
        threads.emplace_back([&] {
            for (int i = 0; i < 100; ++i) {
                if (q.submit("p", false)) {
                    ++accepted;
                }
                CHECK(q.pending() <= 50);
            }
        });
    }
    for (auto &t : threads) {
        t.join();
    }
    REQUIRE(q.wait_idle(10s));
    const auto jobs = q.jobs();
    CHECK(static_cast<int>(jobs.size()) == accepted.load());
    for (const auto &j : jobs) {
        CHECK(j.state == JobState::done);
        CHECK(j.history.size() == 3);
    }
}
