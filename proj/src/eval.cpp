#include "ehrisk/eval.hpp"

#include "ehrisk/errors.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace ehrisk {

namespace {

// Table order follows the conventional reporting order: rarest class first.
constexpr std::array<Disease, kDiseaseCount> kTableOrder{ Disease::hypertension, Disease::heart, Disease::diabetes };

std::string fixed2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string fixed_full(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string pad(std::string s, std::size_t width) {
    if (s.size() < width) {
        s.append(width - s.size(), ' ');
    }
    return s;
}

}  // namespace

std::string_view ablation_name(Ablation a) {
    switch (a) {
        case Ablation::fused: return "fused";
        case Ablation::text_only: return "text_only";
        case Ablation::labs_only: return "labs_only";
    }
    return "unknown";
}

std::optional<Ablation> parse_ablation(std::string_view name) {
    for (const Ablation a : kAblations) {
        if (ablation_name(a) == name) {
            return a;
        }
    }
    return std::nullopt;
}

PatientRecord apply_ablation(const PatientRecord &record, Ablation ablation) {
    PatientRecord out = record;
    if (ablation == Ablation::text_only) {
        out.labs = LabPanel(record.labs.size());
    } else if (ablation == Ablation::labs_only) {
        out.note.clear();
    }
    return out;
}

BinaryMetrics metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn, double threshold) {
    BinaryMetrics m;
    m.true_positive = tp;
    m.false_positive = fp;
    m.false_negative = fn;
    m.true_negative = tn;
    m.n_positive = tp + fn;
    m.threshold = threshold;
    if (tp + fp > 0) {
        m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    } else {
        m.zero_division = true;
    }
    if (tp + fn > 0) {
        m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    } else {
        m.zero_division = true;
    }
    if (m.precision + m.recall > 0.0) {
        m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    }
    return m;
}

BinaryMetrics score_binary(const std::vector<double> &probabilities, const std::vector<bool> &labels, double threshold) {
    if (probabilities.size() != labels.size()) {
        throw InvalidInputError("probabilities and labels differ in length");
    }
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool predicted = probabilities[i] >= threshold;
        if (predicted) {
            (labels[i] ? tp : fp) += 1;
        } else {
            (labels[i] ? fn : tn) += 1;
        }
    }
    return metrics_from_counts(tp, fp, fn, tn, threshold);
}

MetricsReport evaluate_predictions(const std::vector<Prediction> &predictions, const std::vector<PatientRecord> &records, double threshold, Ablation ablation, std::string split) {
    if (predictions.size() != records.size()) {
        throw InvalidInputError("predictions and records differ in length");
    }
    MetricsReport report;
    report.ablation = ablation;
    report.split = std::move(split);
    report.n_records = records.size();
    for (const auto &r : records) {
        if (!r.labels) {
            throw InvalidInputError("record " + r.patient_id + " has no labels; evaluation needs a labeled cohort");
        }
    }
    for (const Disease d : kDiseases) {
        const auto i = static_cast<std::size_t>(d);
        std::vector<double> p(records.size());
        std::vector<bool> y(records.size());
        for (std::size_t n = 0; n < records.size(); ++n) {
            p[n] = predictions[n].risks.p[i];
            y[n] = records[n].labels->has(d);
        }
        report.diseases[i] = score_binary(p, y, threshold);
    }
    for (std::size_t h = 0; h < kHorizonCount; ++h) {
        std::vector<double> p(records.size());
        std::vector<bool> y(records.size());
        for (std::size_t n = 0; n < records.size(); ++n) {
            p[n] = predictions[n].horizons.p_by[h];
            y[n] = records[n].onset_day && *records[n].onset_day <= kHorizonDays[h];
        }
        report.horizons[h] = score_binary(p, y, threshold);
    }
    return report;
}

MetricsReport evaluate(const Model &model, const std::vector<PatientRecord> &records, double threshold, Ablation ablation, std::string split) {
    std::vector<Prediction> predictions;
    predictions.reserve(records.size());
    for (const auto &r : records) {
        if (!r.labels) {
            throw InvalidInputError("record " + r.patient_id + " has no labels; evaluation needs a labeled cohort");
        }
        predictions.push_back(predict(model, apply_ablation(r, ablation)));
    }
    return evaluate_predictions(predictions, records, threshold, ablation, std::move(split));
}

std::string group_thousands(std::size_t n) {
    std::string digits = std::to_string(n);
    std::string out;
    for (std::size_t i = 0; i < digits.size(); ++i) {
        if (i > 0 && (digits.size() - i) % 3 == 0) {
            out.push_back(',');
        }
        out.push_back(digits[i]);
    }
    return out;
}

std::string report_table(const std::vector<MetricsReport> &reports) {
    std::vector<const MetricsReport *> ordered;
    for (const auto &r : reports) {
        ordered.push_back(&r);
    }
    std::stable_sort(ordered.begin(), ordered.end(), [](const MetricsReport *a, const MetricsReport *b) { return a->ablation < b->ablation; });

    struct Block {
        std::string header;
        std::vector<const BinaryMetrics *> rows;
    };
    std::vector<Block> blocks;
    for (const Disease d : kTableOrder) {
        const auto i = static_cast<std::size_t>(d);
        Block b;
        b.header = std::string(disease_display_name(d)) + " (n=" + group_thousands(ordered.empty() ? 0 : ordered.front()->diseases[i].n_positive) + ")";
        for (const auto *r : ordered) {
            b.rows.push_back(&r->diseases[i]);
        }
        blocks.push_back(std::move(b));
    }
    for (std::size_t h = 0; h < kHorizonCount; ++h) {
        Block b;
        b.header = "Onset by " + std::to_string(kHorizonDays[h]) + "d (n=" + group_thousands(ordered.empty() ? 0 : ordered.front()->horizons[h].n_positive) + ")";
        for (const auto *r : ordered) {
            b.rows.push_back(&r->horizons[h]);
        }
        blocks.push_back(std::move(b));
    }

    std::size_t first_width = std::string("Disease type").size();
    for (const auto &b : blocks) {
        first_width = std::max(first_width, b.header.size());
    }
    first_width += 2;
    constexpr std::size_t model_width = 11;
    constexpr std::size_t metric_width = 11;

    bool footnote = false;
    std::ostringstream out;
    out << pad("Disease type", first_width) << pad("Model", model_width) << pad("Precision", metric_width) << pad("Recall", metric_width) << "F1\n";
    const std::string rule(first_width + model_width + 2 * metric_width + 5, '-');
    out << rule << '\n';
    for (const auto &b : blocks) {
        for (std::size_t row = 0; row < b.rows.size(); ++row) {
            const BinaryMetrics &m = *b.rows[row];
            const std::string mark = m.zero_division ? "*" : "";
            footnote = footnote || m.zero_division;
            out << pad(row == 0 ? b.header : std::string{}, first_width) << pad(std::string(ablation_name(ordered[row]->ablation)), model_width)
                << pad(fixed2(m.precision) + mark, metric_width) << pad(fixed2(m.recall) + mark, metric_width) << fixed2(m.f1) << '\n';
        }
        out << rule << '\n';
    }
    if (footnote) {
        out << "* zero denominator (no predicted or no actual positives); reported as 0\n";
    }
    return out.str();
}

std::string report_csv(const std::vector<MetricsReport> &reports) {
    std::ostringstream out;
    out << "disease,ablation,n_pos,precision,recall,f1,threshold\n";
    for (const auto &r : reports) {
        auto row = [&](std::string_view name, const BinaryMetrics &m) {
            out << name << ',' << ablation_name(r.ablation) << ',' << m.n_positive << ',' << fixed_full(m.precision) << ',' << fixed_full(m.recall) << ',' << fixed_full(m.f1) << ',' << fixed_full(m.threshold) << '\n';
        };
        for (const Disease d : kDiseases) {
            row(disease_name(d), r.diseases[static_cast<std::size_t>(d)]);
        }
        for (std::size_t h = 0; h < kHorizonCount; ++h) {
            row("onset_" + std::to_string(kHorizonDays[h]) + "d", r.horizons[h]);
        }
    }
    return out.str();
}

}  // namespace ehrisk
