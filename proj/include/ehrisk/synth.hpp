#pragma once

#include "ehrisk/records.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace ehrisk {

inline constexpr std::string_view kGeneratorVersion = "ehrisk-synth-1";

struct CohortConfig {
    std::size_t n_patients = 1000;
    /// Target positive rate per disease, indexed by Disease.
    std::array<double, kDiseaseCount> prevalence{ 0.204, 0.2257, 0.033 };
    double signal_strength = 0.9;
    /// Share of the planted signal carried by the note (the rest goes to the labs).
    double modality_split = 0.5;
    std::uint64_t seed = 1;

    /// Throws ConfigError for rates outside (0, 1), fewer than 10 patients, or
    /// strength / split outside [0, 1].
    void validate() const;

    friend bool operator==(const CohortConfig &, const CohortConfig &) = default;
};

struct Cohort {
    std::vector<PatientRecord> records;
    CohortConfig config;
    std::string generator_version{ kGeneratorVersion };
};

/// Probability that a positive patient's note carries a keyword sentence for that disease.
double keyword_probability(const CohortConfig &config);
/// Multiplier on the per-analyte mean shifts (in reference-sd units) of positive patients.
double lab_effect(const CohortConfig &config);

/// Fixed disease keyword lists planted in positive patients' notes.
const std::vector<std::string> &disease_keywords(Disease d);

/// Shift of analyte `index` for a positive patient at full lab effect, in reference sd.
double analyte_shift(Disease d, std::size_t index);

/// Fraction of analytes left unmeasured at random.
inline constexpr double kMissingAnalyteRate = 0.15;
/// Odds ratio between diabetes and hypertension.
inline constexpr double kDiabetesHypertensionOddsRatio = 2.0;

/// Deterministic function of `config`. Throws ConfigError for an invalid config.
Cohort generate_cohort(const CohortConfig &config);

}  // namespace ehrisk
