#pragma once

#include "ehrisk/attention.hpp"
#include "ehrisk/records.hpp"
#include "ehrisk/tensor.hpp"
#include "ehrisk/tokenizer.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

namespace ehrisk {

/// Fixed architecture hyperparameters of one model instance.
struct Architecture {
    std::size_t embed_dim = 64;
    std::size_t heads = 4;
    std::size_t analyte_count = kAnalyteCountDefault;
    std::size_t max_length = kMaxSequenceLength;
    std::size_t vocab_size = 2;
    std::size_t ffn_dim = 128;
    std::size_t lab_hidden = 64;

    static constexpr std::size_t kAnalyteCountDefault = 20;
    /// one-hot sex (3) + age / 100
    static constexpr std::size_t kDemographicInputs = 4;

    /// Throws InvalidInputError on zero sizes or when `heads` does not divide `embed_dim`.
    void validate() const;

    friend bool operator==(const Architecture &, const Architecture &) = default;
};

/// All trainable tensors. Biases are 1 x n matrices so every tensor has the same type.
struct ModelParams {
    Architecture arch;

    Matrix embedding;  ///< vocab_size x d
    AttentionWeights text_attention;
    Matrix ffn_w1, ffn_b1, ffn_w2, ffn_b2;

    Matrix lab_w1, lab_b1;  ///< 2K -> lab_hidden
    Matrix lab_w2, lab_b2;  ///< lab_hidden -> lab_hidden
    Matrix lab_w3, lab_b3;  ///< lab_hidden -> d
    Matrix demo_w, demo_b;  ///< 4 -> d

    AttentionWeights fusion_attention;
    Matrix disease_w, disease_b;  ///< d -> 3
    Matrix horizon_w, horizon_b;  ///< d -> 4

    /// Every tensor shaped for `arch` and filled with zeros.
    static ModelParams zeros(const Architecture &arch);
    /// Weights drawn uniformly from +-sqrt(6 / (fan_in + fan_out)), biases zero.
    static ModelParams initialized(const Architecture &arch, std::uint64_t seed);

    /// Visits (name, tensor) in a fixed order shared by checkpoints, optimizers and gradient checks.
    template <typename F>
    void for_each(F &&f) {
        for_each_impl(*this, f);
    }
    template <typename F>
    void for_each(F &&f) const {
        for_each_impl(*this, f);
    }

    [[nodiscard]] std::size_t parameter_count() const;
    [[nodiscard]] bool all_finite() const;

  private:
    template <typename Self, typename F>
    static void for_each_impl(Self &self, F &f) {
        f(std::string_view{ "embedding" }, self.embedding);
        f(std::string_view{ "text.wq" }, self.text_attention.query);
        f(std::string_view{ "text.wk" }, self.text_attention.key);
        f(std::string_view{ "text.wv" }, self.text_attention.value);
        f(std::string_view{ "text.wo" }, self.text_attention.output);
        f(std::string_view{ "ffn.w1" }, self.ffn_w1);
        f(std::string_view{ "ffn.b1" }, self.ffn_b1);
        f(std::string_view{ "ffn.w2" }, self.ffn_w2);
        f(std::string_view{ "ffn.b2" }, self.ffn_b2);
        f(std::string_view{ "lab.w1" }, self.lab_w1);
        f(std::string_view{ "lab.b1" }, self.lab_b1);
        f(std::string_view{ "lab.w2" }, self.lab_w2);
        f(std::string_view{ "lab.b2" }, self.lab_b2);
        f(std::string_view{ "lab.w3" }, self.lab_w3);
        f(std::string_view{ "lab.b3" }, self.lab_b3);
        f(std::string_view{ "demo.w" }, self.demo_w);
        f(std::string_view{ "demo.b" }, self.demo_b);
        f(std::string_view{ "fusion.wq" }, self.fusion_attention.query);
        f(std::string_view{ "fusion.wk" }, self.fusion_attention.key);
        f(std::string_view{ "fusion.wv" }, self.fusion_attention.value);
        f(std::string_view{ "fusion.wo" }, self.fusion_attention.output);
        f(std::string_view{ "disease.w" }, self.disease_w);
        f(std::string_view{ "disease.b" }, self.disease_b);
        f(std::string_view{ "horizon.w" }, self.horizon_w);
        f(std::string_view{ "horizon.b" }, self.horizon_b);
    }
};

/// Per-analyte standardization statistics frozen from the training cohort.
/// An analyte with sd == 0 is constant and always standardizes to 0.
struct NormStats {
    std::vector<double> mean;
    std::vector<double> sd;
    double age_mean = 50.0;

    /// Neutral statistics (mean 0, sd 1) for `analyte_count` analytes.
    static NormStats identity(std::size_t analyte_count);
    /// Mean / population sd over measured values; analytes never measured get mean 0, sd 1.
    static NormStats fit(const std::vector<PatientRecord> &records, std::size_t analyte_count);

    friend bool operator==(const NormStats &, const NormStats &) = default;
};

/// A trained model: immutable once built, safe to share across threads.
struct Model {
    ModelParams params;
    NormStats norm;
    Vocabulary vocab;
};

struct RiskScores {
    std::array<double, kDiseaseCount> p{};

    [[nodiscard]] double operator[](Disease d) const { return p[static_cast<std::size_t>(d)]; }
    friend bool operator==(const RiskScores &, const RiskScores &) = default;
};

/// Cumulative onset probability by 90, 180, 270 and 360 days.
struct HorizonRisks {
    std::array<double, kHorizonCount> p_by{};

    friend bool operator==(const HorizonRisks &, const HorizonRisks &) = default;
};

struct FusedRepresentation {
    RowVector pooled;
    /// Per head, (L+2) x (L+2): text rows, then the lab token, then the demographic token.
    std::vector<Matrix> attention_scores;
};

struct LabTokens {
    RowVector lab;
    RowVector demo;
};

struct Prediction {
    RiskScores risks;
    HorizonRisks horizons;
};

double sigmoid(double x);

/// Sinusoidal position signal, `length` x `dim`.
Matrix positional_encoding(std::size_t length, std::size_t dim);

/// Embedding + position, then one residual self-attention block and one residual
/// tanh feed-forward block. Throws InvalidInputError for ids outside the vocabulary.
Matrix encode_text(const TokenSequence &seq, const ModelParams &params);

/// The 2K-wide lab input: standardized values (0 where unmeasured) followed by mask bits.
RowVector lab_input(const LabPanel &labs, const NormStats &norm);
/// One-hot sex followed by age / 100.
RowVector demographic_input(const Demographics &demo);

/// Throws InvalidInputError for a non-finite measured value or a panel of the wrong width.
LabTokens encode_labs(const LabPanel &labs, const Demographics &demo, const ModelParams &params, const NormStats &norm);
/// Row i of each result equals encode_labs on element i.
std::pair<Matrix, Matrix> encode_labs_batch(const std::vector<LabPanel> &labs, const std::vector<Demographics> &demos, const ModelParams &params, const NormStats &norm);

/// Joint self-attention over [text rows; lab token; demo token], then mean pooling.
FusedRepresentation fuse(const Matrix &text, const RowVector &lab_token, const RowVector &demo_token, const ModelParams &params);

RiskScores predict_risks(const FusedRepresentation &fused, const ModelParams &params);
/// Per-interval hazards composed as p(by j) = 1 - prod_{k<=j} (1 - h_k).
HorizonRisks predict_horizons(const FusedRepresentation &fused, const ModelParams &params);
/// Cumulative risks from per-interval hazard logits.
HorizonRisks horizons_from_logits(const std::array<double, kHorizonCount> &logits);

/// Full inference on one record. Pure: identical inputs give bit-identical outputs.
Prediction predict(const Model &model, const PatientRecord &record);
std::vector<Prediction> predict_batch(const Model &model, const std::vector<PatientRecord> &records);

/// Head logits from a forward pass; the input to the loss.
struct HeadLogits {
    std::array<double, kDiseaseCount> disease{};
    std::array<double, kHorizonCount> horizon{};
};

/// Everything the backward pass needs from one forward pass.
struct ForwardTrace {
    std::vector<std::int32_t> token_ids;
    AttentionTrace text_attention;
    Matrix text_mid;  ///< after the text attention block
    Matrix ffn_hidden;  ///< tanh activations
    RowVector lab_in, lab_h1, lab_h2, demo_in;
    AttentionTrace fusion_attention;
    RowVector pooled;
    HeadLogits logits;
};

ForwardTrace forward(const ModelParams &params, const NormStats &norm, const TokenSequence &seq, const LabPanel &labs, const Demographics &demo);

/// Accumulates dLoss/dparams into `grad` given dLoss/dlogits.
void backward(const ForwardTrace &trace, const ModelParams &params, const HeadLogits &d_logits, ModelParams &grad);

}  // namespace ehrisk
