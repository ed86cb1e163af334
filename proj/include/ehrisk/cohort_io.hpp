#pragma once

#include "ehrisk/kv_file.hpp"
#include "ehrisk/synth.hpp"

#include "json.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>

namespace ehrisk {

inline constexpr int kCohortVersion = 1;

nlohmann::json cohort_config_to_json(const CohortConfig &config);
CohortConfig cohort_config_from_json(const nlohmann::json &j);
/// Keys: n_patients, seed, signal_strength, modality_split, prevalence.diabetes,
/// prevalence.heart, prevalence.hypertension. Missing keys keep their defaults.
CohortConfig cohort_config_from(const KeyValues &kv);

/// Line-delimited form: a header line {"cohort_version":1,"config":{...},"generator_version":...}
/// followed by one patient record per line. Byte-identical for equal cohorts.
std::string serialize_cohort(const Cohort &cohort);

/// Throws StorageError when the file cannot be written.
void write_cohort(const Cohort &cohort, const std::filesystem::path &path);

struct CohortHeader {
    int version = kCohortVersion;
    std::optional<CohortConfig> config;
    std::string generator_version;
};

/// Streams records one line at a time without holding the cohort in memory.
/// Throws VersionError for a missing or foreign header and ParseError (with the
/// 1-based line number) for a malformed record line.
CohortHeader read_cohort_stream(const std::filesystem::path &path, const std::function<void(PatientRecord &&)> &on_record);

/// Reads a whole cohort; additionally rejects duplicate patient ids.
Cohort read_cohort(const std::filesystem::path &path);

}  // namespace ehrisk
