#include "doctest.h"
#include "support.hpp"

#include "ehrisk/errors.hpp"
#include "ehrisk/store.hpp"

#include <atomic>
#include <csignal>
#include <fstream>
#include <set>
#include <thread>

#include <sys/resource.h>
#include <sys/wait.h>
#include <unistd.h>

using namespace ehrisk;

namespace {

StoredPrediction prediction_for(const std::string &patient, const std::string &id, double p, TimestampMs at = 1000) {
    StoredPrediction s;
    s.prediction_id = id;
    s.patient_id = patient;
    s.created_at = at;
    s.model_version = "abc";
    s.risks.p = { p, p / 2, p / 3 };
    s.horizons.p_by = { 0.1, 0.2, 0.3, 0.4 };
    return s;
}

std::string fingerprint(const FileStore &s) {
    nlohmann::json j = nlohmann::json::array();
    PatientQuery q;
    q.limit = 100000;
    for (const auto &item : s.list_patients(q).items) {
        const auto vp = s.get_patient(item.patient_id);
        nlohmann::json history = nlohmann::json::array();
        for (const auto &p : s.prediction_history(item.patient_id)) {
            history.push_back(to_json(p));
        }
        j.push_back({ { "record", vp.record }, { "version", vp.version }, { "history", history } });
    }
    return j.dump();
}

void append_bytes(const std::filesystem::path &p, const std::string &bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::app);
    out << bytes;
}

}  // namespace

TEST_CASE("timestamps") {
    CHECK(format_timestamp(0) == "1970-01-01T00:00:00.000Z");
    CHECK(format_timestamp(1700000000123) == "2023-11-14T22:13:20.123Z");
    CHECK(now_ms() > 1700000000000);
}

TEST_CASE("alert thresholds are inclusive") {
    AlertThresholds t;
    t.per_disease = { 0.5, 0.5, 0.5 };
    RiskScores r;
    r.p = { 0.5, 0.1, 0.1 };
    CHECK(t.exceeded_by(r));
    r.p = { 0.49, 0.1, 0.1 };
    CHECK_FALSE(t.exceeded_by(r));
}

TEST_CASE("stored prediction JSON round trip") {
    StoredPrediction p = prediction_for("a", "x1", 0.8);
    const StoredPrediction back = stored_prediction_from_json(to_json(p));
    CHECK(to_json(back) == to_json(p));
    CHECK(to_json(p)["created_at"] == "1970-01-01T00:00:01.000Z");
}

TEST_CASE("patients: round trip, versions, not found, validation") {
    test::TempDir dir;
    FileStore s(dir.path());
    const PatientRecord r = test::make_record("p1");
    CHECK(s.put_patient(r) == 1);
    const auto got = s.get_patient("p1");
    CHECK(got.version == 1);
    CHECK(nlohmann::json(got.record) == nlohmann::json(r));
    PatientRecord r2 = r;
    r2.note = "updated";
    CHECK(s.put_patient(r2) == 2);
    CHECK(s.get_patient("p1").record.note == "updated");
    CHECK_THROWS_AS((void)s.get_patient("nobody"), NotFoundError);
    PatientRecord bad = r;
    bad.demo.age = 200;
    CHECK_THROWS_AS(s.put_patient(bad), InvalidInputError);
    CHECK(s.get_patient("p1").version == 2);
}

TEST_CASE("a thousand upserts of one patient") {
    test::TempDir dir;
    {
        FileStore s(dir.path(), { .sync = false, .index_interval = 64 });
        PatientRecord r = test::make_record("same");
        for (int i = 1; i <= 1000; ++i) {
            r.note = "note " + std::to_string(i);
            CHECK(s.put_patient(r) == static_cast<std::uint64_t>(i));
        }
    }
    FileStore s(dir.path());
    CHECK(s.opened_from_index());
    CHECK(s.get_patient("same").version == 1000);
    CHECK(s.get_patient("same").record.note == "note 1000");
}

TEST_CASE("pagination covers every patient exactly once in id order") {
    test::TempDir dir;
    FileStore s(dir.path(), { .sync = false });
    for (int i = 0; i < 25; ++i) {
        char id[8];
        std::snprintf(id, sizeof id, "p%02d", (i * 7) % 25);
        s.put_patient(test::make_record(id));
    }
    std::vector<std::string> seen;
    PatientQuery q;
    q.limit = 10;
    for (q.offset = 0; q.offset < 40; q.offset += 10) {
        const PatientPage page = s.list_patients(q);
        CHECK(page.total == 25);
        CHECK(page.items.size() == (q.offset < 20 ? 10u : q.offset < 30 ? 5u : 0u));
        for (const auto &item : page.items) {
            seen.push_back(item.patient_id);
        }
    }
    CHECK(seen.size() == 25);
    CHECK(std::is_sorted(seen.begin(), seen.end()));
    CHECK(std::set<std::string>(seen.begin(), seen.end()).size() == 25);

    s.put_prediction(prediction_for("p03", "a", 0.95));
    s.put_prediction(prediction_for("p07", "b", 0.10));
    q = {};
    q.alert = true;
    const PatientPage alerts = s.list_patients(q);
    REQUIRE(alerts.total == 1);
    CHECK(alerts.items[0].patient_id == "p03");
    CHECK(alerts.items[0].alert);
    q.alert = false;
    CHECK(s.list_patients(q).total == 24);
    q = {};
    q.offset = 3;
    q.limit = 1;
    const auto one = s.list_patients(q);
    REQUIRE(one.items.size() == 1);
    CHECK(one.items[0].patient_id == "p03");
    CHECK(one.items[0].latest_risks.has_value());
}

TEST_CASE("predictions: referential integrity, history, latest, ordering") {
    test::TempDir dir;
    FileStore s(dir.path(), { .sync = false });
    CHECK_THROWS_AS(s.put_prediction(prediction_for("ghost", "g", 0.5)), ReferentialError);
    s.put_patient(test::make_record("a"));
    CHECK_THROWS_AS((void)s.get_latest_prediction("a"), NotFoundError);
    CHECK(s.prediction_history("a").empty());
    s.put_prediction(prediction_for("a", "1", 0.2, 5000));
    // an earlier timestamp is moved after the latest one
    const StoredPrediction second = s.put_prediction(prediction_for("a", "2", 0.4, 100));
    CHECK(second.created_at == 5001);
    CHECK_THROWS_AS(s.put_prediction(prediction_for("a", "2", 0.4)), InvalidInputError);
    CHECK_THROWS_AS(s.put_prediction(prediction_for("a", "", 0.4)), InvalidInputError);

    const auto history = s.prediction_history("a");
    REQUIRE(history.size() == 2);
    CHECK(history[0].prediction_id == "1");
    CHECK(s.get_latest_prediction("a").prediction_id == "2");
    CHECK(s.find_prediction("1").has_value());
    CHECK_FALSE(s.find_prediction("zzz").has_value());
    CHECK(s.latest_predictions().size() == 1);

    // updating the patient keeps its predictions
    s.put_patient(test::make_record("a", "new note"));
    CHECK(s.prediction_history("a").size() == 2);
}

TEST_CASE("reopen with index, without index, and with a stale index") {
    test::TempDir dir;
    std::string expected;
    {
        FileStore s(dir.path(), { .sync = false, .index_interval = 1000 });
        for (int i = 0; i < 5; ++i) {
            s.put_patient(test::make_record("p" + std::to_string(i)));
            s.put_prediction(prediction_for("p" + std::to_string(i), "x" + std::to_string(i), 0.1 * i));
        }
        s.checkpoint_index();
        std::filesystem::copy_file(dir / "records.idx", dir / "old.idx");
        for (int i = 0; i < 5; ++i) {
            s.put_patient(test::make_record("p" + std::to_string(i), "second version"));
            s.put_patient(test::make_record("q" + std::to_string(i)));
        }
        s.put_prediction(prediction_for("q1", "y", 0.9));
        expected = fingerprint(s);
    }
    {
        FileStore s(dir.path());
        CHECK(s.opened_from_index());
        CHECK(fingerprint(s) == expected);
    }
    std::filesystem::rename(dir / "old.idx", dir / "records.idx");
    {
        FileStore s(dir.path());
        CHECK(s.opened_from_index());
        CHECK(fingerprint(s) == expected);
    }
    std::filesystem::remove(dir / "records.idx");
    {
        FileStore s(dir.path());
        CHECK_FALSE(s.opened_from_index());
        CHECK(fingerprint(s) == expected);
    }
    {
        std::ofstream out(dir / "records.idx", std::ios::trunc);
        out << "garbage\n1\n2\n";
    }
    {
        FileStore s(dir.path());
        CHECK_FALSE(s.opened_from_index());
        CHECK(fingerprint(s) == expected);
    }
}

TEST_CASE("a torn tail is truncated on open") {
    test::TempDir dir;
    std::string expected;
    {
        FileStore s(dir.path());
        s.put_patient(test::make_record("a"));
        s.put_patient(test::make_record("b"));
        expected = fingerprint(s);
    }
    std::filesystem::remove(dir / "records.idx");
    const auto size = std::filesystem::file_size(dir / "records.log");
    // a frame header promising 500 bytes, followed by only a few
    append_bytes(dir / "records.log", std::string("\xf4\x01\x00\x00\x12\x34\x56\x78{\"t\":", 14));
    {
        FileStore s(dir.path());
        CHECK(s.recovered_tail_bytes() == 14);
        CHECK(fingerprint(s) == expected);
        s.put_patient(test::make_record("c"));
    }
    CHECK(std::filesystem::file_size(dir / "records.log") > size);
    {
        FileStore s(dir.path());
        CHECK(s.recovered_tail_bytes() == 0);
        CHECK(s.get_patient("c").version == 1);
    }
    // a complete frame with a bad checksum is also a torn write
    std::filesystem::remove(dir / "records.idx");
    append_bytes(dir / "records.log", std::string("\x02\x00\x00\x00\x00\x00\x00\x00{}", 10));
    FileStore s(dir.path());
    CHECK(s.recovered_tail_bytes() == 10);
}

TEST_CASE("foreign log files are refused") {
    test::TempDir dir;
    { FileStore s(dir.path()); }
    {
        std::fstream f(dir / "records.log", std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(8);
        f.put('\x07');
    }
    CHECK_THROWS_AS(FileStore(dir.path()), VersionError);
    {
        std::ofstream f(dir / "records.log", std::ios::binary | std::ios::trunc);
        f << std::string("NOTALOG!\x01\x00\x00\x00", 12);
    }
    CHECK_THROWS_AS(FileStore(dir.path()), VersionError);
    {
        std::ofstream f(dir / "records.log", std::ios::binary | std::ios::trunc);
        f << "short";
    }
    CHECK_THROWS_AS(FileStore(dir.path()), VersionError);
    {
        // a header write torn after the magic is just an unfinished new log
        std::ofstream f(dir / "records.log", std::ios::binary | std::ios::trunc);
        f << "EHRSLOG\n\x01";
    }
    CHECK(FileStore(dir.path()).recovered_tail_bytes() == 0);
}

TEST_CASE("kill -9 during writes loses no acknowledged write") {
    test::TempDir dir;
    int pipefd[2];
    REQUIRE(::pipe(pipefd) == 0);
    const pid_t child = ::fork();
    REQUIRE(child >= 0);
    if (child == 0) {
        ::close(pipefd[0]);
        try {
            FileStore s(dir.path(), { .sync = true, .index_interval = 16 });
            for (std::uint32_t i = 0;; ++i) {
                s.put_patient(test::make_record("k" + std::to_string(i), std::string(200 + i % 50, 'x')));
                if (::write(pipefd[1], &i, sizeof i) != sizeof i) {
                    ::_exit(2);
                }
            }
        } catch (...) {
            ::_exit(3);
        }
    }
    ::close(pipefd[1]);
    std::uint32_t acked = 0;
    std::uint32_t count = 0;
    while (count < 150 && ::read(pipefd[0], &acked, sizeof acked) == sizeof acked) {
        ++count;
    }
    ::kill(child, SIGKILL);
    // drain anything acknowledged before the kill landed
    std::uint32_t more = 0;
    while (::read(pipefd[0], &more, sizeof more) == sizeof more) {
        acked = more;
    }
    ::close(pipefd[0]);
    int status = 0;
    ::waitpid(child, &status, 0);
    REQUIRE(WIFSIGNALED(status));
    REQUIRE(count == 150);

    FileStore s(dir.path());
    for (std::uint32_t i = 0; i <= acked; ++i) {
        CHECK(s.get_patient("k" + std::to_string(i)).version == 1);
    }
}

TEST_CASE("a full disk surfaces as StorageError and leaves the store consistent") {
    test::TempDir dir;
    int pipefd[2];
    REQUIRE(::pipe(pipefd) == 0);
    const pid_t child = ::fork();
    REQUIRE(child >= 0);
    if (child == 0) {
        ::close(pipefd[0]);
        std::signal(SIGXFSZ, SIG_IGN);
        rlimit lim{ 64 * 1024, 64 * 1024 };
        ::setrlimit(RLIMIT_FSIZE, &lim);
        int code = 1;
        std::uint32_t acked = 0;
        try {
            FileStore s(dir.path(), { .sync = true, .index_interval = 1u << 30 });
            for (std::uint32_t i = 0; i < 100000; ++i) {
                try {
                    s.put_patient(test::make_record("f" + std::to_string(i), std::string(500, 'y')));
                    acked = i + 1;
                } catch (const StorageError &) {
                    // nothing changed: the failed patient is absent and earlier ones remain
                    bool ok = true;
                    try {
                        (void)s.get_patient("f" + std::to_string(i));
                        ok = false;
                    } catch (const NotFoundError &) {
                    }
                    ok = ok && (i == 0 || s.get_patient("f" + std::to_string(i - 1)).version == 1);
                    code = ok ? 0 : 4;
                    break;
                }
            }
        } catch (...) {
            code = 5;
        }
        if (::write(pipefd[1], &acked, sizeof acked) != sizeof acked) {
            code = 6;
        }
        ::_exit(code);
    }
    ::close(pipefd[1]);
    std::uint32_t acked = 0;
    REQUIRE(::read(pipefd[0], &acked, sizeof acked) == sizeof acked);
    ::close(pipefd[0]);
    int status = 0;
    ::waitpid(child, &status, 0);
    REQUIRE(WIFEXITED(status));
    CHECK(WEXITSTATUS(status) == 0);
    CHECK(acked > 10);

    FileStore s(dir.path());
    PatientQuery q;
    q.limit = 100000;
    CHECK(s.list_patients(q).total == acked);
}

TEST_CASE("concurrent readers see consistent versions while a writer appends") {
    test::TempDir dir;
    FileStore s(dir.path(), { .sync = false });
    s.put_patient(test::make_record("shared"));
    std::atomic<bool> stop{ false };
    std::atomic<int> violations{ 0 };
    std::vector<std::thread> readers;
    for (int t = 0; t < 4; ++t) {
        readers.emplace_back([&] {
            std::uint64_t last = 0;
            while (!stop.load()) {
                const auto v = s.get_patient("shared");
                if (v.version < last || (v.version > 1 && v.record.note != "n" + std::to_string(v.version))) {
                    ++violations;
                }
                last = v.version;
                (void)s.list_patients({});
            }
        });
    }
    PatientRecord r = test::make_record("shared");
    for (int i = 2; i <= 300; ++i) {
        r.note = "n" + std::to_string(i);
        s.put_patient(r);
    }
    stop = true;
    for (auto &t : readers) {
        t.join();
    }
    CHECK(violations.load() == 0);
    CHECK(s.get_patient("shared").version == 300);
}
