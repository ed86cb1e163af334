#include "ehrisk/model.hpp"

#include "ehrisk/errors.hpp"
#include "ehrisk/rng.hpp"

#include <cmath>
#include <string>

namespace ehrisk {

namespace {

Matrix zeros(std::size_t rows, std::size_t cols) {
    return Matrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

AttentionWeights zero_attention(std::size_t d) {
    return AttentionWeights{ zeros(d, d), zeros(d, d), zeros(d, d), zeros(d, d) };
}

bool is_bias(std::string_view name) {
    const auto dot = name.rfind('.');
    return dot != std::string_view::npos && name.substr(dot + 1, 1) == "b";
}

Matrix tanh_of(const Matrix &m) {
    return m.array().tanh().matrix();
}

// d tanh(x)/dx expressed through y = tanh(x)
Matrix tanh_grad(const Matrix &y) {
    return (1.0 - y.array().square()).matrix();
}

struct TextPass {
    Matrix output;
    Matrix mid;
    Matrix hidden;
};

TextPass run_text(const std::vector<std::int32_t> &ids, const ModelParams &params, AttentionTrace &trace) {
    const auto &arch = params.arch;
    if (ids.empty()) {
        throw InvalidInputError("token sequence is empty");
    }
    if (ids.size() > arch.max_length) {
        throw InvalidInputError("token sequence longer than " + std::to_string(arch.max_length));
    }
    Matrix x = positional_encoding(ids.size(), arch.embed_dim);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= arch.vocab_size) {
            throw InvalidInputError("token id " + std::to_string(ids[i]) + " outside vocabulary of size " + std::to_string(arch.vocab_size));
        }
        x.row(static_cast<Eigen::Index>(i)) += params.embedding.row(ids[i]);
    }
    TextPass pass;
    pass.mid = attention_forward(x, params.text_attention, arch.heads, trace);
    Matrix pre = pass.mid * params.ffn_w1;
    pre.rowwise() += params.ffn_b1.row(0);
    pass.hidden = tanh_of(pre);
    pass.output = pass.mid + pass.hidden * params.ffn_w2;
    pass.output.rowwise() += params.ffn_b2.row(0);
    return pass;
}

struct LabPass {
    RowVector input, h1, h2, token;
};

LabPass run_labs(const RowVector &input, const ModelParams &params) {
    LabPass pass;
    pass.input = input;
    pass.h1 = (input * params.lab_w1 + params.lab_b1).array().tanh().matrix();
    pass.h2 = (pass.h1 * params.lab_w2 + params.lab_b2).array().tanh().matrix();
    pass.token = pass.h2 * params.lab_w3 + params.lab_b3;
    return pass;
}

RowVector run_demo(const RowVector &input, const ModelParams &params) {
    return input * params.demo_w + params.demo_b;
}

HeadLogits run_heads(const RowVector &pooled, const ModelParams &params) {
    HeadLogits logits;
    const RowVector disease = pooled * params.disease_w + params.disease_b;
    const RowVector horizon = pooled * params.horizon_w + params.horizon_b;
    for (std::size_t i = 0; i < kDiseaseCount; ++i) {
        logits.disease[i] = disease(static_cast<Eigen::Index>(i));
    }
    for (std::size_t i = 0; i < kHorizonCount; ++i) {
        logits.horizon[i] = horizon(static_cast<Eigen::Index>(i));
    }
    return logits;
}

Matrix stack_tokens(const Matrix &text, const RowVector &lab, const RowVector &demo, std::size_t d) {
    const auto dim = static_cast<Eigen::Index>(d);
    if (text.cols() != dim || lab.cols() != dim || demo.cols() != dim) {
        throw InvalidInputError("fusion inputs must all have width " + std::to_string(d));
    }
    if (text.rows() == 0) {
        throw InvalidInputError("fusion needs at least one text row");
    }
    Matrix seq(text.rows() + 2, dim);
    seq.topRows(text.rows()) = text;
    seq.row(text.rows()) = lab;
    seq.row(text.rows() + 1) = demo;
    return seq;
}

}  // namespace

void Architecture::validate() const {
    if (embed_dim == 0 || heads == 0 || analyte_count == 0 || max_length == 0 || vocab_size < 2 || ffn_dim == 0 || lab_hidden == 0) {
        throw InvalidInputError("architecture sizes must be positive and the vocabulary must hold the reserved tokens");
    }
    if (embed_dim % heads != 0) {
        throw InvalidInputError("heads (" + std::to_string(heads) + ") must divide embed_dim (" + std::to_string(embed_dim) + ")");
    }
}

ModelParams ModelParams::zeros(const Architecture &arch) {
    arch.validate();
    const std::size_t d = arch.embed_dim;
    const std::size_t k2 = 2 * arch.analyte_count;
    ModelParams p;
    p.arch = arch;
    p.embedding = ehrisk::zeros(arch.vocab_size, d);
    p.text_attention = zero_attention(d);
    p.ffn_w1 = ehrisk::zeros(d, arch.ffn_dim);
    p.ffn_b1 = ehrisk::zeros(1, arch.ffn_dim);
    p.ffn_w2 = ehrisk::zeros(arch.ffn_dim, d);
    p.ffn_b2 = ehrisk::zeros(1, d);
    p.lab_w1 = ehrisk::zeros(k2, arch.lab_hidden);
    p.lab_b1 = ehrisk::zeros(1, arch.lab_hidden);
    p.lab_w2 = ehrisk::zeros(arch.lab_hidden, arch.lab_hidden);
    p.lab_b2 = ehrisk::zeros(1, arch.lab_hidden);
    p.lab_w3 = ehrisk::zeros(arch.lab_hidden, d);
    p.lab_b3 = ehrisk::zeros(1, d);
    p.demo_w = ehrisk::zeros(Architecture::kDemographicInputs, d);
    p.demo_b = ehrisk::zeros(1, d);
    p.fusion_attention = zero_attention(d);
    p.disease_w = ehrisk::zeros(d, kDiseaseCount);
    p.disease_b = ehrisk::zeros(1, kDiseaseCount);
    p.horizon_w = ehrisk::zeros(d, kHorizonCount);
    p.horizon_b = ehrisk::zeros(1, kHorizonCount);
    return p;
}

ModelParams ModelParams::initialized(const Architecture &arch, std::uint64_t seed) {
    ModelParams p = zeros(arch);
    Rng rng(seed);
    p.for_each([&](std::string_view name, Matrix &t) {
        if (is_bias(name)) {
            return;
        }
        const double bound = std::sqrt(6.0 / static_cast<double>(t.rows() + t.cols()));
        for (Eigen::Index i = 0; i < t.size(); ++i) {
            t.data()[i] = rng.uniform(-bound, bound);
        }
    });
    return p;
}

std::size_t ModelParams::parameter_count() const {
    std::size_t n = 0;
    for_each([&](std::string_view, const Matrix &t) { n += static_cast<std::size_t>(t.size()); });
    return n;
}

bool ModelParams::all_finite() const {
    bool finite = true;
    for_each([&](std::string_view, const Matrix &t) { finite = finite && t.allFinite(); });
    return finite;
}

NormStats NormStats::identity(std::size_t analyte_count) {
    NormStats n;
    n.mean.assign(analyte_count, 0.0);
    n.sd.assign(analyte_count, 1.0);
    return n;
}

NormStats NormStats::fit(const std::vector<PatientRecord> &records, std::size_t analyte_count) {
    NormStats n = identity(analyte_count);
    std::vector<double> sum(analyte_count, 0.0);
    std::vector<double> sum_sq(analyte_count, 0.0);
    std::vector<std::size_t> count(analyte_count, 0);
    double age_sum = 0.0;
    for (const auto &r : records) {
        if (r.labs.size() != analyte_count) {
            throw InvalidInputError("record " + r.patient_id + " has a lab panel of the wrong width");
        }
        for (std::size_t i = 0; i < analyte_count; ++i) {
            if (r.labs.mask[i]) {
                sum[i] += r.labs.values[i];
                ++count[i];
            }
        }
        age_sum += r.demo.age;
    }
    for (const auto &r : records) {
        for (std::size_t i = 0; i < analyte_count; ++i) {
            if (r.labs.mask[i]) {
                const double dev = r.labs.values[i] - sum[i] / static_cast<double>(count[i]);
                sum_sq[i] += dev * dev;
            }
        }
    }
    for (std::size_t i = 0; i < analyte_count; ++i) {
        if (count[i] == 0) {
            continue;
        }
        n.mean[i] = sum[i] / static_cast<double>(count[i]);
        const double sd = std::sqrt(sum_sq[i] / static_cast<double>(count[i]));
        n.sd[i] = sd > 1e-12 ? sd : 0.0;
    }
    if (!records.empty()) {
        n.age_mean = age_sum / static_cast<double>(records.size());
    }
    return n;
}

double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Matrix positional_encoding(std::size_t length, std::size_t dim) {
    Matrix pe(static_cast<Eigen::Index>(length), static_cast<Eigen::Index>(dim));
    for (std::size_t pos = 0; pos < length; ++pos) {
        for (std::size_t i = 0; i < dim; ++i) {
            const double rate = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(dim));
            const double angle = static_cast<double>(pos) * rate;
            pe(static_cast<Eigen::Index>(pos), static_cast<Eigen::Index>(i)) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return pe;
}

Matrix encode_text(const TokenSequence &seq, const ModelParams &params) {
    AttentionTrace trace;
    return run_text(seq.ids, params, trace).output;
}

RowVector lab_input(const LabPanel &labs, const NormStats &norm) {
    const std::size_t k = labs.size();
    if (labs.mask.size() != k || norm.mean.size() != k || norm.sd.size() != k) {
        throw InvalidInputError("lab panel width does not match normalization statistics");
    }
    RowVector in = RowVector::Zero(static_cast<Eigen::Index>(2 * k));
    for (std::size_t i = 0; i < k; ++i) {
        if (!labs.mask[i]) {
            continue;
        }
        if (!std::isfinite(labs.values[i])) {
            throw InvalidInputError("non-finite value for measured analyte " + std::to_string(i));
        }
        const auto col = static_cast<Eigen::Index>(i);
        in(col) = norm.sd[i] > 0.0 ? (labs.values[i] - norm.mean[i]) / norm.sd[i] : 0.0;
        in(static_cast<Eigen::Index>(k) + col) = 1.0;
    }
    return in;
}

RowVector demographic_input(const Demographics &demo) {
    RowVector in = RowVector::Zero(Architecture::kDemographicInputs);
    in(static_cast<Eigen::Index>(demo.sex)) = 1.0;
    in(3) = static_cast<double>(demo.age) / 100.0;
    return in;
}

LabTokens encode_labs(const LabPanel &labs, const Demographics &demo, const ModelParams &params, const NormStats &norm) {
    if (labs.size() != params.arch.analyte_count) {
        throw InvalidInputError("lab panel has " + std::to_string(labs.size()) + " analytes, model expects " + std::to_string(params.arch.analyte_count));
    }
    return LabTokens{ run_labs(lab_input(labs, norm), params).token, run_demo(demographic_input(demo), params) };
}

std::pair<Matrix, Matrix> encode_labs_batch(const std::vector<LabPanel> &labs, const std::vector<Demographics> &demos, const ModelParams &params, const NormStats &norm) {
    if (labs.size() != demos.size()) {
        throw InvalidInputError("lab and demographic batches differ in size");
    }
    const auto n = static_cast<Eigen::Index>(labs.size());
    Matrix lab_in(n, static_cast<Eigen::Index>(2 * params.arch.analyte_count));
    Matrix demo_in(n, static_cast<Eigen::Index>(Architecture::kDemographicInputs));
    for (Eigen::Index i = 0; i < n; ++i) {
        if (labs[static_cast<std::size_t>(i)].size() != params.arch.analyte_count) {
            throw InvalidInputError("lab panel width does not match the model");
        }
        lab_in.row(i) = lab_input(labs[static_cast<std::size_t>(i)], norm);
        demo_in.row(i) = demographic_input(demos[static_cast<std::size_t>(i)]);
    }
    Matrix h1 = lab_in * params.lab_w1;
    h1.rowwise() += params.lab_b1.row(0);
    h1 = tanh_of(h1);
    Matrix h2 = h1 * params.lab_w2;
    h2.rowwise() += params.lab_b2.row(0);
    h2 = tanh_of(h2);
    Matrix lab_tokens = h2 * params.lab_w3;
    lab_tokens.rowwise() += params.lab_b3.row(0);
    Matrix demo_tokens = demo_in * params.demo_w;
    demo_tokens.rowwise() += params.demo_b.row(0);
    return { std::move(lab_tokens), std::move(demo_tokens) };
}

FusedRepresentation fuse(const Matrix &text, const RowVector &lab_token, const RowVector &demo_token, const ModelParams &params) {
    const Matrix seq = stack_tokens(text, lab_token, demo_token, params.arch.embed_dim);
    AttentionTrace trace;
    const Matrix out = attention_forward(seq, params.fusion_attention, params.arch.heads, trace);
    return FusedRepresentation{ out.colwise().mean(), std::move(trace.probabilities) };
}

RiskScores predict_risks(const FusedRepresentation &fused, const ModelParams &params) {
    const HeadLogits logits = run_heads(fused.pooled, params);
    RiskScores risks;
    for (std::size_t i = 0; i < kDiseaseCount; ++i) {
        risks.p[i] = sigmoid(logits.disease[i]);
    }
    return risks;
}

HorizonRisks horizons_from_logits(const std::array<double, kHorizonCount> &logits) {
    HorizonRisks out;
    double survival = 1.0;
    for (std::size_t k = 0; k < kHorizonCount; ++k) {
        survival *= sigmoid(-logits[k]);  // 1 - h_k
        out.p_by[k] = 1.0 - survival;
    }
    return out;
}

HorizonRisks predict_horizons(const FusedRepresentation &fused, const ModelParams &params) {
    return horizons_from_logits(run_heads(fused.pooled, params).horizon);
}

Prediction predict(const Model &model, const PatientRecord &record) {
    const TokenSequence seq = tokenize(record.note, model.vocab, model.params.arch.max_length);
    const Matrix text = encode_text(seq, model.params);
    const LabTokens tokens = encode_labs(record.labs, record.demo, model.params, model.norm);
    const FusedRepresentation fused = fuse(text, tokens.lab, tokens.demo, model.params);
    return Prediction{ predict_risks(fused, model.params), predict_horizons(fused, model.params) };
}

std::vector<Prediction> predict_batch(const Model &model, const std::vector<PatientRecord> &records) {
    std::vector<Prediction> out;
    out.reserve(records.size());
    for (const auto &r : records) {
        out.push_back(predict(model, r));
    }
    return out;
}

ForwardTrace forward(const ModelParams &params, const NormStats &norm, const TokenSequence &seq, const LabPanel &labs, const Demographics &demo) {
    if (labs.size() != params.arch.analyte_count) {
        throw InvalidInputError("lab panel width does not match the model");
    }
    ForwardTrace t;
    t.token_ids = seq.ids;
    TextPass text = run_text(seq.ids, params, t.text_attention);
    t.text_mid = std::move(text.mid);
    t.ffn_hidden = std::move(text.hidden);

    LabPass lab = run_labs(lab_input(labs, norm), params);
    t.lab_in = std::move(lab.input);
    t.lab_h1 = std::move(lab.h1);
    t.lab_h2 = std::move(lab.h2);
    t.demo_in = demographic_input(demo);
    const RowVector demo_token = run_demo(t.demo_in, params);

    const Matrix stacked = stack_tokens(text.output, lab.token, demo_token, params.arch.embed_dim);
    const Matrix fused = attention_forward(stacked, params.fusion_attention, params.arch.heads, t.fusion_attention);
    t.pooled = fused.colwise().mean();
    t.logits = run_heads(t.pooled, params);
    return t;
}

void backward(const ForwardTrace &t, const ModelParams &params, const HeadLogits &d_logits, ModelParams &grad) {
    const auto heads = params.arch.heads;
    RowVector d_disease(static_cast<Eigen::Index>(kDiseaseCount));
    RowVector d_horizon(static_cast<Eigen::Index>(kHorizonCount));
    for (std::size_t i = 0; i < kDiseaseCount; ++i) {
        d_disease(static_cast<Eigen::Index>(i)) = d_logits.disease[i];
    }
    for (std::size_t i = 0; i < kHorizonCount; ++i) {
        d_horizon(static_cast<Eigen::Index>(i)) = d_logits.horizon[i];
    }

    grad.disease_w.noalias() += t.pooled.transpose() * d_disease;
    grad.disease_b += d_disease;
    grad.horizon_w.noalias() += t.pooled.transpose() * d_horizon;
    grad.horizon_b += d_horizon;
    const RowVector d_pooled = d_disease * params.disease_w.transpose() + d_horizon * params.horizon_w.transpose();

    // mean pooling spreads the gradient evenly over the fused rows
    const auto rows = t.fusion_attention.input.rows();
    const Matrix d_fused = Matrix::Ones(rows, 1) * (d_pooled / static_cast<double>(rows));
    const Matrix d_stacked = attention_backward(t.fusion_attention, d_fused, params.fusion_attention, heads, grad.fusion_attention);

    const auto text_rows = rows - 2;
    const RowVector d_lab = d_stacked.row(text_rows);
    const RowVector d_demo = d_stacked.row(text_rows + 1);

    grad.demo_w.noalias() += t.demo_in.transpose() * d_demo;
    grad.demo_b += d_demo;

    grad.lab_w3.noalias() += t.lab_h2.transpose() * d_lab;
    grad.lab_b3 += d_lab;
    const RowVector d_pre2 = ((d_lab * params.lab_w3.transpose()).array() * (1.0 - t.lab_h2.array().square())).matrix();
    grad.lab_w2.noalias() += t.lab_h1.transpose() * d_pre2;
    grad.lab_b2 += d_pre2;
    const RowVector d_pre1 = ((d_pre2 * params.lab_w2.transpose()).array() * (1.0 - t.lab_h1.array().square())).matrix();
    grad.lab_w1.noalias() += t.lab_in.transpose() * d_pre1;
    grad.lab_b1 += d_pre1;

    const Matrix d_text = d_stacked.topRows(text_rows);
    grad.ffn_w2.noalias() += t.ffn_hidden.transpose() * d_text;
    grad.ffn_b2 += d_text.colwise().sum();
    const Matrix d_hidden_pre = ((d_text * params.ffn_w2.transpose()).array() * tanh_grad(t.ffn_hidden).array()).matrix();
    grad.ffn_w1.noalias() += t.text_mid.transpose() * d_hidden_pre;
    grad.ffn_b1 += d_hidden_pre.colwise().sum();
    Matrix d_mid = d_text;
    d_mid.noalias() += d_hidden_pre * params.ffn_w1.transpose();

    const Matrix d_embedded = attention_backward(t.text_attention, d_mid, params.text_attention, heads, grad.text_attention);
    for (std::size_t i = 0; i < t.token_ids.size(); ++i) {
        grad.embedding.row(t.token_ids[i]) += d_embedded.row(static_cast<Eigen::Index>(i));
    }
}

}  // namespace ehrisk
