#include "ehrisk/gradcheck.hpp"

#include "ehrisk/errors.hpp"
#include "ehrisk/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ehrisk {

namespace {

double record_loss(const Model &model, const PatientRecord &record, const ClassWeights &weights) {
    const Prediction p = predict(model, record);
    return loss(p.risks, p.horizons, record, weights);
}

std::vector<Matrix *> tensor_list(ModelParams &p) {
    std::vector<Matrix *> out;
    p.for_each([&](std::string_view, Matrix &t) { out.push_back(&t); });
    return out;
}

}  // namespace

bool GradReport::passed() const {
    return std::all_of(tensors.begin(), tensors.end(), [](const auto &t) { return t.passed; });
}

std::vector<std::string> GradReport::flagged() const {
    std::vector<std::string> out;
    for (const auto &t : tensors) {
        if (!t.passed) {
            out.push_back(t.name);
        }
    }
    return out;
}

GradReport grad_check(const Model &model, const PatientRecord &record, double tolerance, const GradCheckOptions &options) {
    if (!record.labels) {
        throw InvalidInputError("gradient check needs a labeled record");
    }
    if (!(tolerance > 0.0)) {
        throw InvalidInputError("tolerance must be positive");
    }

    ModelParams analytic = ModelParams::zeros(model.params.arch);
    {
        const TokenSequence seq = tokenize(record.note, model.vocab, model.params.arch.max_length);
        const ForwardTrace trace = forward(model.params, model.norm, seq, record.labs, record.demo);
        const LossAndGradient lg = loss_with_gradient(trace.logits, *record.labels, record.onset_day, options.weights);
        backward(trace, model.params, lg.d_logits, analytic);
    }
    if (options.tamper_analytic) {
        options.tamper_analytic(analytic);
    }

    Model probe = model;
    const std::vector<Matrix *> probe_tensors = tensor_list(probe.params);
    const std::vector<Matrix *> analytic_tensors = tensor_list(analytic);
    std::vector<std::string> names;
    model.params.for_each([&](std::string_view name, const Matrix &) { names.emplace_back(name); });

    GradReport report;
    report.tolerance = tolerance;
    Rng rng(options.seed);
    for (std::size_t t = 0; t < names.size(); ++t) {
        if (std::find(options.frozen.begin(), options.frozen.end(), names[t]) != options.frozen.end()) {
            continue;
        }
        Matrix &tensor = *probe_tensors[t];
        const auto size = static_cast<std::size_t>(tensor.size());
        std::vector<std::size_t> coords(size);
        std::iota(coords.begin(), coords.end(), std::size_t{ 0 });
        if (size > options.samples_per_tensor) {
            rng.shuffle(coords.begin(), coords.end());
            coords.resize(options.samples_per_tensor);
        }

        TensorGradCheck check;
        check.name = names[t];
        check.coordinates = coords.size();
        for (const std::size_t c : coords) {
            double &x = tensor.data()[c];
            const double saved = x;
            x = saved + options.step;
            const double plus = record_loss(probe, record, options.weights);
            x = saved - options.step;
            const double minus = record_loss(probe, record, options.weights);
            x = saved;
            const double numeric = (plus - minus) / (2.0 * options.step);
            const double exact = analytic_tensors[t]->data()[c];
            const double denom = std::max({ std::abs(exact), std::abs(numeric), 1e-8 });
            check.max_relative_error = std::max(check.max_relative_error, std::abs(exact - numeric) / denom);
        }
        check.passed = check.max_relative_error < tolerance;
        report.max_relative_error = std::max(report.max_relative_error, check.max_relative_error);
        report.tensors.push_back(std::move(check));
    }
    return report;
}

GradCheckFixture tiny_gradcheck_fixture(std::uint64_t seed) {
    Architecture arch;
    arch.embed_dim = 8;
    arch.heads = 2;
    arch.analyte_count = 4;
    arch.max_length = 4;
    arch.ffn_dim = 16;
    arch.lab_hidden = 8;

    GradCheckFixture fx;
    fx.model.vocab = Vocabulary({ "[EMPTY]", "[UNK]", "patient", "reports", "polyuria", "thirst", "stable", "today" });
    arch.vocab_size = fx.model.vocab.size();
    fx.model.params = ModelParams::initialized(arch, seed);

    Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
    fx.model.norm.mean = { 92.0, 5.4, 185.0, 0.9 };
    fx.model.norm.sd = { 10.0, 0.4, 30.0, 0.2 };
    fx.model.norm.age_mean = 55.0;
    // biases start at zero; give them values so their gradients are exercised away from the origin
    fx.model.params.for_each([&](std::string_view name, Matrix &t) {
        if (name.substr(name.rfind('.') + 1, 1) != "b") {
            return;
        }
        for (Eigen::Index i = 0; i < t.size(); ++i) {
            t.data()[i] = rng.uniform(-0.1, 0.1);
        }
    });

    fx.record.patient_id = "gradcheck";
    fx.record.note = "patient reports polyuria today";
    fx.record.labs = LabPanel(4);
    fx.record.labs.set(0, 131.0);
    fx.record.labs.set(1, 6.9);
    fx.record.labs.set(3, 1.1);
    fx.record.demo = Demographics{ 61, Sex::female };
    fx.record.labels = DiseaseLabels{ true, false, true };
    fx.record.onset_day = 200;
    return fx;
}

}  // namespace ehrisk
