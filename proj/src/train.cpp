#include "ehrisk/train.hpp"

#include "ehrisk/errors.hpp"
#include "ehrisk/rng.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace ehrisk {

namespace {

void zero_fill(ModelParams &p) {
    p.for_each([](std::string_view, Matrix &t) { t.setZero(); });
}

double squared_norm(const ModelParams &p) {
    double sum = 0.0;
    p.for_each([&](std::string_view, const Matrix &t) { sum += t.squaredNorm(); });
    return sum;
}

void scale(ModelParams &p, double factor) {
    p.for_each([&](std::string_view, Matrix &t) { t *= factor; });
}

const DiseaseLabels &labels_of(const PatientRecord &r) {
    if (!r.labels) {
        throw InvalidInputError("record " + r.patient_id + " has no labels");
    }
    return *r.labels;
}

struct Example {
    TokenSequence tokens;
    LabPanel labs;
    Demographics demo;
    const PatientRecord *source = nullptr;
};

double accumulate_example(const Model &model, const Example &ex, const ClassWeights &weights, double scale_by, ModelParams &grad) {
    const ForwardTrace trace = forward(model.params, model.norm, ex.tokens, ex.labs, ex.demo);
    LossAndGradient lg = loss_with_gradient(trace.logits, labels_of(*ex.source), ex.source->onset_day, weights);
    for (double &g : lg.d_logits.disease) {
        g *= scale_by;
    }
    for (double &g : lg.d_logits.horizon) {
        g *= scale_by;
    }
    backward(trace, model.params, lg.d_logits, grad);
    return lg.value;
}

void mask_randomly(Example &ex, double rate, const Demographics &masked_demo, Rng &rng) {
    for (std::int32_t &id : ex.tokens.ids) {
        if (rng.bernoulli(rate)) {
            id = Vocabulary::kUnknownId;
        }
    }
    for (std::size_t k = 0; k < ex.labs.size(); ++k) {
        if (ex.labs.mask[k] && rng.bernoulli(rate)) {
            ex.labs.clear(k);
        }
    }
    if (rng.bernoulli(rate)) {
        ex.demo = masked_demo;
    }
}

}  // namespace

AdamOptimizer::AdamOptimizer(const ModelParams &shape) :
    first_(ModelParams::zeros(shape.arch)),
    second_(ModelParams::zeros(shape.arch)) {}

void AdamOptimizer::step(ModelParams &params, const ModelParams &grad, double learning_rate) {
    ++step_;
    const double correction1 = 1.0 - std::pow(kBeta1, static_cast<double>(step_));
    const double correction2 = 1.0 - std::pow(kBeta2, static_cast<double>(step_));

    // parallel walk over the four parameter sets; for_each order is fixed
    std::vector<Matrix *> p_list, m_list, v_list;
    std::vector<const Matrix *> g_list;
    params.for_each([&](std::string_view, Matrix &t) { p_list.push_back(&t); });
    first_.for_each([&](std::string_view, Matrix &t) { m_list.push_back(&t); });
    second_.for_each([&](std::string_view, Matrix &t) { v_list.push_back(&t); });
    grad.for_each([&](std::string_view, const Matrix &t) { g_list.push_back(&t); });

    for (std::size_t i = 0; i < p_list.size(); ++i) {
        auto m = m_list[i]->array();
        auto v = v_list[i]->array();
        const auto g = g_list[i]->array();
        m = kBeta1 * m + (1.0 - kBeta1) * g;
        v = kBeta2 * v + (1.0 - kBeta2) * g.square();
        p_list[i]->array() -= learning_rate * (m / correction1) / ((v / correction2).sqrt() + kEpsilon);
    }
}

double batch_gradient(const Model &model, const std::vector<const PatientRecord *> &records, const ClassWeights &weights, ModelParams &grad) {
    zero_fill(grad);
    if (records.empty()) {
        return 0.0;
    }
    double total = 0.0;
    const double inv = 1.0 / static_cast<double>(records.size());
    for (const PatientRecord *r : records) {
        labels_of(*r);
        const Example ex{ tokenize(r->note, model.vocab, model.params.arch.max_length), r->labs, r->demo, r };
        total += accumulate_example(model, ex, weights, inv, grad);
    }
    return total * inv;
}

double mean_loss(const Model &model, const std::vector<PatientRecord> &records, const ClassWeights &weights) {
    if (records.empty()) {
        return 0.0;
    }
    double total = 0.0;
    for (const auto &r : records) {
        const auto &labels = labels_of(r);
        const Prediction p = predict(model, r);
        total += loss(p.risks, p.horizons, labels, r.onset_day, weights);
    }
    return total / static_cast<double>(records.size());
}

TrainResult train(const std::vector<PatientRecord> &cohort, const TrainConfig &config, std::uint64_t seed) {
    if (config.batch_size == 0) {
        throw ConfigError("batch_size must be positive");
    }
    if (!(config.learning_rate >= 0.0) || !std::isfinite(config.learning_rate)) {
        throw ConfigError("learning_rate must be finite and non-negative");
    }
    if (!(config.mask_augmentation >= 0.0 && config.mask_augmentation <= 1.0)) {
        throw ConfigError("mask_augmentation must lie in [0, 1]");
    }
    if (!(config.validation_fraction >= 0.0 && config.validation_fraction < 1.0)) {
        throw ConfigError("validation_fraction must lie in [0, 1)");
    }
    for (const auto &r : cohort) {
        validate(r);
        labels_of(r);
    }
    // also rejects a disease with no positives (or no negatives) across the whole cohort
    ClassWeights::from_cohort(cohort);

    Rng rng(seed);
    std::vector<std::size_t> order(cohort.size());
    std::iota(order.begin(), order.end(), std::size_t{ 0 });
    rng.shuffle(order.begin(), order.end());

    const auto validation_size = static_cast<std::size_t>(std::floor(config.validation_fraction * static_cast<double>(cohort.size())));
    const std::size_t train_size = cohort.size() - validation_size;
    std::vector<PatientRecord> train_set;
    std::vector<PatientRecord> validation_set;
    for (std::size_t i = 0; i < order.size(); ++i) {
        (i < train_size ? train_set : validation_set).push_back(cohort[order[i]]);
    }
    const ClassWeights weights = ClassWeights::from_cohort(train_set);

    std::vector<std::string> notes;
    notes.reserve(train_set.size());
    for (const auto &r : train_set) {
        notes.push_back(r.note);
    }

    TrainResult result;
    result.model.vocab = Vocabulary::build(notes, config.vocab_min_frequency, config.vocab_max_size);
    Architecture arch = config.arch;
    arch.vocab_size = result.model.vocab.size();
    result.model.norm = NormStats::fit(train_set, arch.analyte_count);
    result.model.params = ModelParams::initialized(arch, rng.below(~std::uint64_t{ 0 }));
    result.log.train_size = train_set.size();
    result.log.validation_size = validation_set.size();

    AdamOptimizer adam(result.model.params);
    ModelParams grad = ModelParams::zeros(arch);
    std::vector<std::size_t> batch_order(train_set.size());
    std::iota(batch_order.begin(), batch_order.end(), std::size_t{ 0 });

    std::vector<TokenSequence> train_tokens;
    train_tokens.reserve(train_set.size());
    for (const auto &r : train_set) {
        train_tokens.push_back(tokenize(r.note, result.model.vocab, arch.max_length));
    }
    const Demographics masked_demo{ static_cast<int>(std::lround(result.model.norm.age_mean)), Sex::unknown };

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        rng.shuffle(batch_order.begin(), batch_order.end());
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < batch_order.size(); start += config.batch_size) {
            const std::size_t end = std::min(start + config.batch_size, batch_order.size());
            const double inv = 1.0 / static_cast<double>(end - start);
            zero_fill(grad);
            double batch_loss = 0.0;
            for (std::size_t i = start; i < end; ++i) {
                const std::size_t idx = batch_order[i];
                Example ex{ train_tokens[idx], train_set[idx].labs, train_set[idx].demo, &train_set[idx] };
                if (config.mask_augmentation > 0.0 && rng.bernoulli(config.mask_augmentation)) {
                    mask_randomly(ex, rng.uniform(), masked_demo, rng);
                }
                batch_loss += accumulate_example(result.model, ex, weights, inv, grad) * inv;
            }
            const std::size_t batch_size = end - start;
            epoch_loss += batch_loss * static_cast<double>(batch_size);
            if (config.clip_norm > 0.0) {
                const double norm = std::sqrt(squared_norm(grad));
                if (norm > config.clip_norm) {
                    scale(grad, config.clip_norm / norm);
                }
            }
            adam.step(result.model.params, grad, config.learning_rate);
        }
        EpochLog entry;
        entry.epoch = epoch;
        entry.train_loss = train_set.empty() ? 0.0 : epoch_loss / static_cast<double>(train_set.size());
        if (!validation_set.empty()) {
            entry.validation_loss = mean_loss(result.model, validation_set, weights);
        }
        result.log.epochs.push_back(entry);
        if (!result.model.params.all_finite()) {
            throw StateError("training diverged at epoch " + std::to_string(epoch));
        }
    }
    return result;
}

}  // namespace ehrisk
