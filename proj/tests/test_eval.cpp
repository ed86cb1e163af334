#include "doctest.h"
#include "support.hpp"

#include "ehrisk/errors.hpp"
#include "ehrisk/eval.hpp"

#include <algorithm>
#include <numeric>

using namespace ehrisk;

namespace {

// Independent confusion-matrix recount.
struct Counts {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

Counts recount(const std::vector<double> &p, const std::vector<bool> &y, double t) {
    Counts c;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const bool hat = p[i] >= t;
        if (hat && y[i]) ++c.tp;
        if (hat && !y[i]) ++c.fp;
        if (!hat && y[i]) ++c.fn;
        if (!hat && !y[i]) ++c.tn;
    }
    return c;
}

}  // namespace

TEST_CASE("perfect classifier scores one") {
    const BinaryMetrics m = score_binary({ 0.9, 0.1, 0.7, 0.2 }, { true, false, true, false }, 0.5);
    CHECK(m.precision == 1.0);
    CHECK(m.recall == 1.0);
    CHECK(m.f1 == 1.0);
    CHECK(m.n_positive == 2);
    CHECK_FALSE(m.zero_division);
}

TEST_CASE("all-negative predictor reports zeros with a zero-division flag") {
    const BinaryMetrics m = score_binary({ 0.1, 0.2, 0.3 }, { true, false, true }, 0.5);
    CHECK(m.precision == 0.0);
    CHECK(m.recall == 0.0);
    CHECK(m.f1 == 0.0);
    CHECK(m.zero_division);
}

TEST_CASE("hand-counted confusion matrix") {
    // tp 7, fp 3, fn 3 -> precision 0.7, recall 0.7, F1 0.7
    const BinaryMetrics m = metrics_from_counts(7, 3, 3, 10, 0.5);
    CHECK(m.precision == doctest::Approx(0.7));
    CHECK(m.recall == doctest::Approx(0.7));
    CHECK(m.f1 == doctest::Approx(0.7));
    // tp 2, fp 2, fn 6: precision 0.5, recall 0.25, F1 = 2*.5*.25/.75 = 1/3
    const BinaryMetrics n = metrics_from_counts(2, 2, 6, 0, 0.5);
    CHECK(n.f1 == doctest::Approx(1.0 / 3.0));
    // the threshold is inclusive
    CHECK(score_binary({ 0.5 }, { true }, 0.5).true_positive == 1);
}

TEST_CASE("metrics agree with a recount and do not depend on order") {
    Rng rng(6);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + rng.below(200);
        std::vector<double> p(n);
        std::vector<bool> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = rng.uniform();
            y[i] = rng.bernoulli(0.3);
        }
        const double t = rng.uniform();
        const BinaryMetrics m = score_binary(p, y, t);
        const Counts c = recount(p, y, t);
        CHECK(m.true_positive == c.tp);
        CHECK(m.false_positive == c.fp);
        CHECK(m.false_negative == c.fn);
        CHECK(m.true_negative == c.tn);
        const double prec = c.tp + c.fp == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
        const double rec = c.tp + c.fn == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
        CHECK(m.precision == doctest::Approx(prec));
        CHECK(m.recall == doctest::Approx(rec));
        CHECK(m.f1 == doctest::Approx(prec + rec == 0 ? 0.0 : 2 * prec * rec / (prec + rec)));
        CHECK(m.f1 >= 0.0);
        CHECK(m.f1 <= 1.0);

        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{ 0 });
        rng.shuffle(idx.begin(), idx.end());
        std::vector<double> p2(n);
        std::vector<bool> y2(n);
        for (std::size_t i = 0; i < n; ++i) {
            p2[i] = p[idx[i]];
            y2[i] = y[idx[i]];
        }
        const BinaryMetrics s = score_binary(p2, y2, t);
        CHECK(s.f1 == m.f1);
        CHECK(s.precision == m.precision);
    }
}

TEST_CASE("thousands separators") {
    CHECK(group_thousands(0) == "0");
    CHECK(group_thousands(32) == "32");
    CHECK(group_thousands(999) == "999");
    CHECK(group_thousands(7208) == "7,208");
    CHECK(group_thousands(1234567) == "1,234,567");
}

TEST_CASE("report table layout and rounding") {
    std::vector<MetricsReport> reports(3);
    reports[0].ablation = Ablation::labs_only;
    reports[1].ablation = Ablation::fused;
    reports[2].ablation = Ablation::text_only;
    for (auto &r : reports) {
        r.diseases[0].n_positive = 7208;
        r.diseases[0].precision = 0.704999;
        r.diseases[0].recall = 0.70501;
        r.diseases[0].f1 = 0.5;
    }
    reports[2].diseases[1].zero_division = true;
    const std::string t = report_table(reports);
    CHECK(t.find("Diabetes (n=7,208)") != std::string::npos);
    CHECK(t.find("0.70") != std::string::npos);
    CHECK(t.find("0.71") != std::string::npos);
    CHECK(t.find("0.704") == std::string::npos);
    // blocks in Hypertension, Heart disease, Diabetes order; rows fused, text_only, labs_only
    const auto hyp = t.find("Hypertension (n=");
    const auto heart = t.find("Heart disease (n=");
    const auto dia = t.find("Diabetes (n=");
    CHECK(hyp < heart);
    CHECK(heart < dia);
    const auto fused = t.find("fused", dia);
    const auto text = t.find("text_only", dia);
    const auto labs = t.find("labs_only", dia);
    CHECK(fused < text);
    CHECK(text < labs);
    CHECK(t.find("Onset by 90d") != std::string::npos);
    CHECK(t.find("* zero denominator") != std::string::npos);
}

TEST_CASE("report CSV") {
    std::vector<MetricsReport> reports(1);
    reports[0].diseases[2].n_positive = 5;
    reports[0].diseases[2].f1 = 0.25;
    const std::string csv = report_csv(reports);
    CHECK(csv.rfind("disease,ablation,n_pos,precision,recall,f1,threshold\n", 0) == 0);
    CHECK(csv.find("hypertension,fused,5,0.000000,0.000000,0.250000,0.500000\n") != std::string::npos);
    CHECK(csv.find("onset_360d,fused,") != std::string::npos);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 3 + 4);
}

TEST_CASE("ablations and evaluation of a model") {
    const PatientRecord r = test::make_record("a");
    const PatientRecord text = apply_ablation(r, Ablation::text_only);
    CHECK(text.labs.measured_count() == 0);
    CHECK(text.note == r.note);
    const PatientRecord labs = apply_ablation(r, Ablation::labs_only);
    CHECK(labs.note.empty());
    CHECK(labs.labs.values == r.labs.values);
    CHECK(parse_ablation("text_only") == Ablation::text_only);
    CHECK_FALSE(parse_ablation("both").has_value());

    CohortConfig c;
    c.n_patients = 100;
    c.seed = 77;
    const auto cohort = generate_cohort(c).records;
    const Model &m = test::small_trained().model;
    const MetricsReport rep = evaluate(m, cohort, 0.5, Ablation::fused, "test");
    CHECK(rep.n_records == 100);
    CHECK(rep.split == "test");
    const auto preds = predict_batch(m, cohort);
    std::vector<double> p;
    std::vector<bool> y;
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        p.push_back(preds[i].risks[Disease::heart]);
        y.push_back(cohort[i].labels->heart_disease);
    }
    CHECK(rep.diseases[1].f1 == score_binary(p, y, 0.5).f1);

    auto unlabeled = cohort;
    unlabeled[0].labels.reset();
    CHECK_THROWS_AS(evaluate(m, unlabeled), InvalidInputError);
    CHECK_THROWS_AS(evaluate_predictions(preds, std::vector<PatientRecord>(cohort.begin(), cohort.begin() + 3), 0.5, Ablation::fused), InvalidInputError);
}
