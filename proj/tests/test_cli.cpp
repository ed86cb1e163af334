#include "doctest.h"
#include "support.hpp"

#include "ehrisk/checkpoint.hpp"
#include "ehrisk/cli.hpp"
#include "ehrisk/cohort_io.hpp"
#include "ehrisk/config.hpp"
#include "ehrisk/errors.hpp"
#include "ehrisk/explain.hpp"
#include "ehrisk/kv_file.hpp"

#include "json.hpp"

#include <fstream>
#include <map>
#include <sstream>

using namespace ehrisk;

namespace {

struct Run {
    int code = -1;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    args.insert(args.begin(), "ehrisk");
    std::vector<const char *> argv;
    for (const auto &a : args) {
        argv.push_back(a.c_str());
    }
    std::ostringstream out, err;
    Run r;
    r.code = dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

void write_file(const std::filesystem::path &p, const std::string &text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

std::string slurp(const std::filesystem::path &p) {
    std::ifstream in(p, std::ios::binary);
    return { std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>() };
}

EnvLookup fake_env(std::map<std::string, std::string> values) {
    return [values](const std::string &name) -> std::optional<std::string> {
        const auto it = values.find(name);
        if (it == values.end()) {
            return std::nullopt;
        }
        return it->second;
    };
}

}  // namespace

TEST_CASE("service configuration from file and environment") {
    const KeyValues kv = KeyValues::parse("listen = 0.0.0.0:9000\npass = s3cret\nworkers = 2\nqueue_depth = 10\n");
    const ServiceConfig c = service_config_from(kv, fake_env({}));
    CHECK(c.host == "0.0.0.0");
    CHECK(c.port == 9000);
    CHECK(c.pass == "s3cret");
    CHECK(c.workers == 2);
    CHECK(c.queue_depth == 10);
    CHECK(c.user == "clinician");

    const ServiceConfig e = service_config_from(kv, fake_env({ { "EHRISK_PASS", "fromenv" }, { "EHRISK_QUEUE_DEPTH", "3" } }));
    CHECK(e.pass == "fromenv");
    CHECK(e.queue_depth == 3);

    CHECK_THROWS_AS(service_config_from(KeyValues::parse("pass = x\ncolour = blue\n"), fake_env({})), ConfigError);
    CHECK_THROWS_AS(service_config_from(KeyValues::parse("listen = nowhere\npass = x\n"), fake_env({})), ConfigError);
    CHECK_THROWS_AS(service_config_from(KeyValues::parse("workers = 0\npass = x\n"), fake_env({})), ConfigError);
    CHECK_THROWS_AS(service_config_from(KeyValues::parse("workers = two\npass = x\n"), fake_env({})), ConfigError);
    CHECK_THROWS_AS(service_config_from(KeyValues{}, fake_env({})), ConfigError);
}

TEST_CASE("help and usage errors") {
    const Run help = run({ "--help" });
    CHECK(help.code == kExitOk);
    CHECK(help.out.find("gen") != std::string::npos);
    CHECK(help.out.find("gradcheck") != std::string::npos);

    const Run sub_help = run({ "train", "--help" });
    CHECK(sub_help.code == kExitOk);
    CHECK(sub_help.out.find("--seed") != std::string::npos);

    CHECK(run({}).code == kExitUsage);
    const Run bad_flag = run({ "gen", "--bogus", "1" });
    CHECK(bad_flag.code == kExitUsage);
    CHECK(bad_flag.err.find("error:") != std::string::npos);
    CHECK(run({ "train", "--cohort", "x" }).code == kExitUsage);
    CHECK(run({ "frobnicate" }).code == kExitUsage);
    CHECK(run({ "eval", "--cohort", "x", "--ckpt", "y", "--ablation", "both" }).code == kExitUsage);
}

TEST_CASE("data problems exit 2") {
    test::TempDir dir;
    const Run missing = run({ "train", "--cohort", (dir / "absent.jsonl").string(), "--out", (dir / "m.ckpt").string(), "--seed", "1" });
    CHECK(missing.code == kExitData);
    CHECK_FALSE(missing.err.empty());

    write_file(dir / "corrupt.ckpt", "EHRCKPT\ngarbage");
    write_file(dir / "gen.cfg", "n_patients = 30\nseed = 1\n");
    REQUIRE(run({ "gen", "--config", (dir / "gen.cfg").string(), "--out", (dir / "c.jsonl").string() }).code == kExitOk);
    const Run corrupt = run({ "eval", "--cohort", (dir / "c.jsonl").string(), "--ckpt", (dir / "corrupt.ckpt").string() });
    CHECK(corrupt.code == kExitData);
    CHECK(corrupt.err.find("error:") != std::string::npos);

    write_file(dir / "bad.cfg", "n_patients = 3\n");
    CHECK(run({ "gen", "--config", (dir / "bad.cfg").string(), "--out", (dir / "d.jsonl").string() }).code == kExitData);
    write_file(dir / "typo.cfg", "n_patients 30\n");
    CHECK(run({ "gen", "--config", (dir / "typo.cfg").string(), "--out", (dir / "d.jsonl").string() }).code == kExitData);
}

TEST_CASE("gen, train twice, eval and explain") {
    test::TempDir dir;
    write_file(dir / "gen.cfg", "n_patients = 200\nseed = 4\nprevalence.heart = 0.2\nprevalence.hypertension = 0.2\n");
    const Run gen = run({ "gen", "--config", (dir / "gen.cfg").string(), "--out", (dir / "c.jsonl").string() });
    REQUIRE(gen.code == kExitOk);
    CHECK(gen.out.find("wrote 200 patients") != std::string::npos);

    std::string digests[2];
    for (int i = 0; i < 2; ++i) {
        const auto ckpt = dir / ("m" + std::to_string(i) + ".ckpt");
        const Run tr = run({ "train", "--cohort", (dir / "c.jsonl").string(), "--out", ckpt.string(), "--seed", "9", "--epochs", "2", "--json" });
        REQUIRE_MESSAGE(tr.code == kExitOk, tr.err);
        const auto doc = nlohmann::json::parse(tr.out);
        digests[i] = doc["model_version"];
        CHECK(digests[i] == checkpoint_digest(ckpt));
        CHECK(doc["epochs"].size() == 2);
    }
    CHECK(digests[0] == digests[1]);
    CHECK(slurp(dir / "m0.ckpt") == slurp(dir / "m1.ckpt"));

    const Run ev = run({ "eval", "--cohort", (dir / "c.jsonl").string(), "--ckpt", (dir / "m0.ckpt").string(), "--csv", (dir / "m.csv").string() });
    REQUIRE_MESSAGE(ev.code == kExitOk, ev.err);
    CHECK(ev.out.find("Diabetes (n=") != std::string::npos);
    CHECK(ev.out.find("labs_only") != std::string::npos);
    CHECK(slurp(dir / "m.csv").rfind("disease,ablation,", 0) == 0);
    const Run ev2 = run({ "eval", "--cohort", (dir / "c.jsonl").string(), "--ckpt", (dir / "m0.ckpt").string(), "--ablation", "text_only", "--json" });
    REQUIRE(ev2.code == kExitOk);
    CHECK(nlohmann::json::parse(ev2.out).size() == 1);

    const Cohort cohort = read_cohort(dir / "c.jsonl");
    const std::string patient = cohort.records[3].patient_id;
    const Run ex = run({ "explain", "--ckpt", (dir / "m0.ckpt").string(), "--cohort", (dir / "c.jsonl").string(), "--patient", patient, "--target", "diabetes", "--mode", "sampled", "--permutations", "32", "--json" });
    REQUIRE_MESSAGE(ex.code == kExitOk, ex.err);
    const Explanation e = explanation_from_json(nlohmann::json::parse(ex.out));
    double sum = 0.0;
    for (const auto &a : e.attributions) {
        sum += a.phi;
    }
    CHECK(std::abs(sum - (e.prediction - e.baseline_value)) <= 1e-6);

    const Run text = run({ "explain", "--ckpt", (dir / "m0.ckpt").string(), "--cohort", (dir / "c.jsonl").string(), "--patient", patient, "--target", "heart" });
    REQUIRE(text.code == kExitOk);
    CHECK(text.out.find("sum(phi)") != std::string::npos);

    CHECK(run({ "explain", "--ckpt", (dir / "m0.ckpt").string(), "--cohort", (dir / "c.jsonl").string(), "--patient", "nobody", "--target", "diabetes" }).code == kExitData);
    CHECK(run({ "explain", "--ckpt", (dir / "m0.ckpt").string(), "--cohort", (dir / "c.jsonl").string(), "--patient", patient, "--target", "liver" }).code == kExitUsage);
}

TEST_CASE("gradcheck command") {
    const Run ok = run({ "gradcheck", "--seed", "3" });
    CHECK(ok.code == kExitOk);
    CHECK(ok.out.find("gradient check passed") != std::string::npos);
    // an impossible tolerance makes the check fail at run time
    const Run strict = run({ "gradcheck", "--seed", "3", "--tolerance", "1e-30" });
    CHECK(strict.code == kExitRuntime);
}
