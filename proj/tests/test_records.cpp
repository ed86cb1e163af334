#include "doctest.h"
#include "support.hpp"

#include "ehrisk/errors.hpp"
#include "ehrisk/kv_file.hpp"
#include "ehrisk/lab_catalog.hpp"
#include "ehrisk/records.hpp"
#include "ehrisk/tokenizer.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>

using namespace ehrisk;
using nlohmann::json;

TEST_CASE("empty note maps to the single [EMPTY] token") {
    const Vocabulary vocab;
    const TokenSequence seq = tokenize("", vocab);
    REQUIRE(seq.size() == 1);
    CHECK(seq.ids[0] == Vocabulary::kEmptyId);
    CHECK(seq.spans[0].length == 0);
    CHECK(tokenize("  ,.;  ", vocab).ids == std::vector<std::int32_t>{ Vocabulary::kEmptyId });
}

TEST_CASE("case folding gives identical ids") {
    const Vocabulary vocab = Vocabulary::build({ "glucose glucose" });
    const TokenSequence seq = tokenize("Glucose glucose GLUCOSE", vocab);
    REQUIRE(seq.size() == 3);
    CHECK(seq.ids[0] == seq.ids[1]);
    CHECK(seq.ids[1] == seq.ids[2]);
    CHECK(seq.ids[0] != Vocabulary::kUnknownId);
}

TEST_CASE("long notes are truncated to exactly the maximum length") {
    std::string note;
    for (int i = 0; i < 500; ++i) {
        note += "word" + std::to_string(i % 7) + " ";
    }
    const Vocabulary vocab = Vocabulary::build({ note });
    CHECK(tokenize(note, vocab).size() == kMaxSequenceLength);
    CHECK(tokenize(note, vocab, 10).size() == 10);
}

TEST_CASE("out-of-vocabulary words map to [UNK] and spans point into the note") {
    const Vocabulary vocab = Vocabulary::build({ "thirst thirst" });
    const std::string note = "Severe, thirst!";
    const TokenSequence seq = tokenize(note, vocab);
    REQUIRE(seq.size() == 2);
    CHECK(seq.ids[0] == Vocabulary::kUnknownId);
    CHECK(note.substr(seq.spans[0].offset, seq.spans[0].length) == "Severe");
    CHECK(note.substr(seq.spans[1].offset, seq.spans[1].length) == "thirst");
    CHECK(vocab.token(seq.ids[1]) == "thirst");
}

TEST_CASE("vocabulary orders by frequency then lexicographically and honours limits") {
    const Vocabulary vocab = Vocabulary::build({ "b a c b a", "b d d x" }, 2, 10);
    // b:3, a:2, d:2, c:1, x:1
    CHECK(vocab.tokens() == std::vector<std::string>{ "[EMPTY]", "[UNK]", "b", "a", "d" });
    const Vocabulary capped = Vocabulary::build({ "b a c b a", "b d d x" }, 1, 4);
    CHECK(capped.tokens() == std::vector<std::string>{ "[EMPTY]", "[UNK]", "b", "a" });
    CHECK(vocab.id("zzz") == Vocabulary::kUnknownId);
}

TEST_CASE("record JSON round-trips") {
    const PatientRecord r = test::make_record("P001", "Thirst, polyuria.");
    const json j = r;
    const PatientRecord back = j.get<PatientRecord>();
    CHECK(back.patient_id == r.patient_id);
    CHECK(back.note == r.note);
    CHECK(back.labs == r.labs);
    CHECK(back.demo == r.demo);
    REQUIRE(back.labels.has_value());
    CHECK(back.labels->diabetes);
    CHECK(back.onset_day == r.onset_day);
    // only measured analytes are written
    CHECK(j.at("labs").size() == 2);
}

TEST_CASE("lab JSON rejects unknown analytes and non-finite values") {
    CHECK_THROWS_AS(json({ { "glucse", 1.0 } }).get<LabPanel>(), InvalidInputError);
    CHECK_THROWS_AS(json({ { "hba1c", "high" } }).get<LabPanel>(), InvalidInputError);
    json inf = json::object();
    inf["hba1c"] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(inf.get<LabPanel>(), InvalidInputError);
}

TEST_CASE("record validation") {
    PatientRecord r = test::make_record("P1");
    CHECK_NOTHROW(validate(r));
    r.patient_id.clear();
    CHECK_THROWS_AS(validate(r), InvalidInputError);
    r = test::make_record("P1");
    r.demo.age = 121;
    CHECK_THROWS_AS(validate(r), InvalidInputError);
    r = test::make_record("P1");
    r.labs.values[0] = std::nan("");
    r.labs.mask[0] = true;
    CHECK_THROWS_AS(validate(r), InvalidInputError);
}

TEST_CASE("analyte catalog has 20 unique analytes with sane ranges") {
    const auto &catalog = analyte_catalog();
    std::set<std::string> names;
    for (const Analyte &a : catalog) {
        names.insert(std::string(a.name));
        CHECK(a.min_value < a.reference_mean);
        CHECK(a.reference_mean < a.max_value);
        CHECK(a.reference_sd > 0.0);
    }
    CHECK(names.size() == kAnalyteCount);
    CHECK(analyte_index("fasting_glucose") == std::optional<std::size_t>{ 0 });
    CHECK_FALSE(analyte_index("glucse").has_value());
}

TEST_CASE("disease and sex names parse back") {
    for (const Disease d : kDiseases) {
        CHECK(parse_disease(disease_name(d)) == d);
    }
    CHECK(parse_disease("heart_disease") == Disease::heart);
    CHECK(parse_sex("male") == Sex::male);
    CHECK_FALSE(parse_sex("other").has_value());
}

TEST_CASE("key-value files: comments, typed access, and errors") {
    const KeyValues kv = KeyValues::parse("# settings\nn = 12\n\nname = model one \nrate=0.5\n");
    CHECK(kv.get_int("n", 0) == 12);
    CHECK(kv.get_string("name", "") == "model one");
    CHECK(kv.get_double("rate", 0.0) == doctest::Approx(0.5));
    CHECK(kv.get_int("missing", 7) == 7);
    CHECK_THROWS_AS(static_cast<void>(kv.get_int("name", 0)), ConfigError);

    try {
        static_cast<void>(KeyValues::parse("a = 1\nbroken line\n"));
        FAIL("expected a parse error");
    } catch (const ParseError &e) {
        CHECK(e.line() == 2);
    }

    test::TempDir dir;
    CHECK_THROWS_AS(static_cast<void>(KeyValues::read(dir / "absent.cfg")), StorageError);
    std::ofstream(dir / "x.cfg") << "seed = 3\n";
    CHECK(KeyValues::read(dir / "x.cfg").get_int("seed", 0) == 3);
}
