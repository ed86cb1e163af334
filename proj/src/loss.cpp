#include "ehrisk/loss.hpp"

#include "ehrisk/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ehrisk {

namespace {

double clamp_probability(double p) {
    return std::clamp(p, kProbabilityEpsilon, 1.0 - kProbabilityEpsilon);
}

bool is_clamped(double p) {
    return p <= kProbabilityEpsilon || p >= 1.0 - kProbabilityEpsilon;
}

double weighted_bce(double p, double target, double positive_weight) {
    const double q = clamp_probability(p);
    return -(positive_weight * target * std::log(q) + (1.0 - target) * std::log(1.0 - q));
}

// dLoss/dp of weighted_bce; zero where the clamp is active
double weighted_bce_grad(double p, double target, double positive_weight) {
    if (is_clamped(p)) {
        return 0.0;
    }
    return -positive_weight * target / p + (1.0 - target) / (1.0 - p);
}

}  // namespace

ClassWeights ClassWeights::from_cohort(const std::vector<PatientRecord> &records) {
    ClassWeights w;
    for (const Disease d : kDiseases) {
        std::size_t positives = 0;
        std::size_t negatives = 0;
        for (const auto &r : records) {
            if (!r.labels) {
                continue;
            }
            (r.labels->has(d) ? positives : negatives) += 1;
        }
        if (positives == 0 || negatives == 0) {
            throw ConfigError("degenerate cohort: disease '" + std::string(disease_name(d)) + "' has " + std::to_string(positives) + " positives and " + std::to_string(negatives) + " negatives");
        }
        w.positive[static_cast<std::size_t>(d)] = static_cast<double>(negatives) / static_cast<double>(positives);
    }
    return w;
}

std::optional<std::array<double, kHorizonCount>> horizon_targets(const DiseaseLabels &labels, std::optional<int> onset_day) {
    std::array<double, kHorizonCount> targets{};
    if (onset_day) {
        for (std::size_t j = 0; j < kHorizonCount; ++j) {
            targets[j] = *onset_day <= kHorizonDays[j] ? 1.0 : 0.0;
        }
        return targets;
    }
    if (!labels.diabetes) {
        return targets;
    }
    return std::nullopt;
}

double loss(const RiskScores &risks, const HorizonRisks &horizons, const DiseaseLabels &labels, std::optional<int> onset_day, const ClassWeights &weights) {
    double total = 0.0;
    for (const Disease d : kDiseases) {
        const auto i = static_cast<std::size_t>(d);
        total += weighted_bce(risks.p[i], labels.has(d) ? 1.0 : 0.0, weights.positive[i]);
    }
    if (const auto targets = horizon_targets(labels, onset_day)) {
        for (std::size_t j = 0; j < kHorizonCount; ++j) {
            total += weighted_bce(horizons.p_by[j], (*targets)[j], 1.0);
        }
    }
    return total;
}

double loss(const RiskScores &risks, const HorizonRisks &horizons, const PatientRecord &record, const ClassWeights &weights) {
    if (!record.labels) {
        throw InvalidInputError("record " + record.patient_id + " has no labels");
    }
    return loss(risks, horizons, *record.labels, record.onset_day, weights);
}

LossAndGradient loss_with_gradient(const HeadLogits &logits, const DiseaseLabels &labels, std::optional<int> onset_day, const ClassWeights &weights) {
    LossAndGradient out;
    RiskScores risks;
    for (const Disease d : kDiseases) {
        const auto i = static_cast<std::size_t>(d);
        const double p = sigmoid(logits.disease[i]);
        risks.p[i] = p;
        const double target = labels.has(d) ? 1.0 : 0.0;
        out.d_logits.disease[i] = weighted_bce_grad(p, target, weights.positive[i]) * p * (1.0 - p);
    }
    const HorizonRisks horizons = horizons_from_logits(logits.horizon);
    out.value = loss(risks, horizons, labels, onset_day, weights);

    if (const auto targets = horizon_targets(labels, onset_day)) {
        // p_j = 1 - S_j with S_j = prod_{k<=j} (1 - h_k); dp_j/du_k = S_j * h_k for k <= j
        std::array<double, kHorizonCount> hazard{};
        std::array<double, kHorizonCount> survival{};
        double s = 1.0;
        for (std::size_t k = 0; k < kHorizonCount; ++k) {
            hazard[k] = sigmoid(logits.horizon[k]);
            s *= sigmoid(-logits.horizon[k]);
            survival[k] = s;
        }
        for (std::size_t j = 0; j < kHorizonCount; ++j) {
            const double d_p = weighted_bce_grad(horizons.p_by[j], (*targets)[j], 1.0);
            for (std::size_t k = 0; k <= j; ++k) {
                out.d_logits.horizon[k] += d_p * survival[j] * hazard[k];
            }
        }
    }
    return out;
}

}  // namespace ehrisk
