#pragma once

#include "ehrisk/model.hpp"
#include "ehrisk/records.hpp"

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ehrisk {

/// Which modalities the model sees at inference; ablations mask the other one.
enum class Ablation { fused = 0, text_only = 1, labs_only = 2 };

inline constexpr std::array<Ablation, 3> kAblations{ Ablation::fused, Ablation::text_only, Ablation::labs_only };

std::string_view ablation_name(Ablation a);
std::optional<Ablation> parse_ablation(std::string_view name);

/// Copy of `record` with the other modality removed: text_only drops every lab
/// measurement, labs_only empties the note.
PatientRecord apply_ablation(const PatientRecord &record, Ablation ablation);

struct BinaryMetrics {
    std::size_t n_positive = 0;
    std::size_t true_positive = 0;
    std::size_t false_positive = 0;
    std::size_t false_negative = 0;
    std::size_t true_negative = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double threshold = 0.5;
    /// Precision or recall had a zero denominator and was reported as 0.
    bool zero_division = false;
};

/// Precision, recall and F1 from confusion counts; 0 for any zero denominator.
BinaryMetrics metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn, double threshold);

/// Predicted positive iff probability >= threshold.
BinaryMetrics score_binary(const std::vector<double> &probabilities, const std::vector<bool> &labels, double threshold);

struct MetricsReport {
    Ablation ablation = Ablation::fused;
    std::string split;
    std::size_t n_records = 0;
    std::array<BinaryMetrics, kDiseaseCount> diseases{};
    /// Positives are diabetes onsets within each horizon.
    std::array<BinaryMetrics, kHorizonCount> horizons{};
};

/// Scores precomputed predictions against the records' labels.
/// Throws InvalidInputError for unlabeled records or mismatched lengths.
MetricsReport evaluate_predictions(const std::vector<Prediction> &predictions, const std::vector<PatientRecord> &records, double threshold, Ablation ablation, std::string split = {});

/// Runs the model on every record (with the ablation applied) and scores the results.
MetricsReport evaluate(const Model &model, const std::vector<PatientRecord> &records, double threshold = 0.5, Ablation ablation = Ablation::fused, std::string split = {});

/// "7208" -> "7,208".
std::string group_thousands(std::size_t n);

/// Fixed-width table: one block per disease headed "Disease (n=...)", one row per
/// report in fused / text_only / labs_only order, values to 2 decimals. A '*'
/// marks a zero-denominator value and adds a footnote.
std::string report_table(const std::vector<MetricsReport> &reports);

/// disease,ablation,n_pos,precision,recall,f1,threshold; horizon rows use "onset_<days>d".
std::string report_csv(const std::vector<MetricsReport> &reports);

}  // namespace ehrisk
