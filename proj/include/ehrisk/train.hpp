#pragma once

#include "ehrisk/loss.hpp"
#include "ehrisk/model.hpp"
#include "ehrisk/records.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

namespace ehrisk {

struct TrainConfig {
    std::size_t epochs = 8;
    std::size_t batch_size = 32;
    double learning_rate = 2e-3;
    double validation_fraction = 0.1;
    /// Global gradient-norm clip; 0 disables clipping.
    double clip_norm = 5.0;
    /// Probability that a training example is shown partially masked: at a rate
    /// r ~ U(0, 1), tokens become [UNK], analytes unmeasured and demographics
    /// unknown at the mean age, as in explanation coalitions.
    double mask_augmentation = 0.5;
    /// `vocab_size` is ignored; it is set from the vocabulary built over the cohort.
    Architecture arch;
    std::size_t vocab_min_frequency = 2;
    std::size_t vocab_max_size = 20000;
};

struct EpochLog {
    std::size_t epoch = 0;  ///< 1-based
    /// Mean per-record loss over the minibatches of this epoch.
    double train_loss = 0.0;
    /// Mean per-record loss on the held-out split after the epoch; absent without one.
    std::optional<double> validation_loss;
};

struct TrainLog {
    std::vector<EpochLog> epochs;
    std::size_t train_size = 0;
    std::size_t validation_size = 0;
};

struct TrainResult {
    Model model;
    TrainLog log;
};

/// Adam state for one parameter set.
class AdamOptimizer {
  public:
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEpsilon = 1e-8;

    explicit AdamOptimizer(const ModelParams &shape);

    void step(ModelParams &params, const ModelParams &grad, double learning_rate);
    [[nodiscard]] std::size_t steps() const noexcept { return step_; }

  private:
    ModelParams first_;
    ModelParams second_;
    std::size_t step_ = 0;
};

/// Fills `grad` (zeroed first) with the mean loss gradient over `records` and returns the mean loss.
double batch_gradient(const Model &model, const std::vector<const PatientRecord *> &records, const ClassWeights &weights, ModelParams &grad);

/// Mean per-record loss. Throws InvalidInputError for unlabeled records.
double mean_loss(const Model &model, const std::vector<PatientRecord> &records, const ClassWeights &weights);

/// Builds vocabulary and normalization from the cohort, then trains with minibatch Adam.
/// Deterministic for a given seed. Throws ConfigError for a degenerate cohort or config.
TrainResult train(const std::vector<PatientRecord> &cohort, const TrainConfig &config, std::uint64_t seed);

}  // namespace ehrisk
