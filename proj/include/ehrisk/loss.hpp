#pragma once

#include "ehrisk/model.hpp"
#include "ehrisk/records.hpp"

#include <array>
#include <optional>
#include <vector>

namespace ehrisk {

/// Probabilities are clamped to [kProbabilityEpsilon, 1 - kProbabilityEpsilon] before taking logs.
inline constexpr double kProbabilityEpsilon = 1e-7;

/// Positive-class weights applied to the disease cross-entropy terms.
struct ClassWeights {
    std::array<double, kDiseaseCount> positive{ 1.0, 1.0, 1.0 };

    /// negatives / positives per disease over the labeled records.
    /// Throws ConfigError naming the disease when it has no positives or no negatives.
    static ClassWeights from_cohort(const std::vector<PatientRecord> &records);
};

/// Cumulative onset targets (1 iff onset_day <= horizon). Present when the onset day is
/// known or the patient is diabetes-negative; absent for positives without an onset day.
std::optional<std::array<double, kHorizonCount>> horizon_targets(const DiseaseLabels &labels, std::optional<int> onset_day);

/// Weighted binary cross-entropy over the three diseases, plus unweighted binary
/// cross-entropy over the four cumulative horizon risks when targets exist.
double loss(const RiskScores &risks, const HorizonRisks &horizons, const DiseaseLabels &labels, std::optional<int> onset_day, const ClassWeights &weights);

/// As above for a record; throws InvalidInputError when it carries no labels.
double loss(const RiskScores &risks, const HorizonRisks &horizons, const PatientRecord &record, const ClassWeights &weights);

struct LossAndGradient {
    double value = 0.0;
    HeadLogits d_logits;
};

/// Same loss evaluated from head logits, with its gradient with respect to them.
LossAndGradient loss_with_gradient(const HeadLogits &logits, const DiseaseLabels &labels, std::optional<int> onset_day, const ClassWeights &weights);

}  // namespace ehrisk
