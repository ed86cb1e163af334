#include "ehrisk/synth.hpp"

#include "ehrisk/errors.hpp"
#include "ehrisk/lab_catalog.hpp"
#include "ehrisk/rng.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ehrisk {

namespace {

// A split of 0.5 gives each modality the full signal at strength 1.
constexpr double kModalityScale = 2.0;

const std::vector<std::string> kBenignSentences{
    "Patient presents for routine follow up.",
    "Vital signs reviewed and stable.",
    "No acute distress noted during examination.",
    "Medication list reconciled with patient.",
    "Patient denies recent travel.",
    "Diet and exercise habits discussed.",
    "Sleep quality reported as adequate.",
    "Lungs clear to auscultation bilaterally.",
    "Abdomen soft and non tender.",
    "Follow up scheduled in three months.",
    "Patient works as a teacher and lives with family.",
    "Reports occasional mild back pain.",
    "Immunizations are up to date.",
    "Skin warm and dry without rash.",
    "Patient advised to continue current regimen.",
    "Laboratory tests ordered for annual review.",
    // share the keyword templates' wording so only the keyword itself is informative
    "Patient reports good energy over the past few weeks.",
    "Complains of mild seasonal allergies since the last visit.",
    "Notable weight stability documented at intake.",
};

const std::vector<std::string> kKeywordTemplates{
    "Patient reports {} over the past few weeks.",
    "Complains of {} since the last visit.",
    "Notable {} documented at intake.",
};

std::string fill(const std::string &tmpl, const std::string &word) {
    std::string out = tmpl;
    out.replace(out.find("{}"), 2, word);
    return out;
}

// P(H | not D) such that P(H) = prevalence and odds(H | D) / odds(H | not D) = ratio
double conditional_rate_without(double p_d, double p_h, double ratio) {
    double lo = 0.0;
    double hi = 1.0;
    for (int i = 0; i < 200; ++i) {
        const double p0 = 0.5 * (lo + hi);
        const double odds1 = ratio * p0 / (1.0 - p0);
        const double p1 = odds1 / (1.0 + odds1);
        const double marginal = p_d * p1 + (1.0 - p_d) * p0;
        (marginal < p_h ? lo : hi) = p0;
    }
    return 0.5 * (lo + hi);
}

std::string patient_id(std::size_t index, std::size_t n) {
    std::size_t width = 3;
    for (std::size_t m = n > 0 ? n - 1 : 0; m >= 1000; m /= 10) {
        ++width;
    }
    std::string digits = std::to_string(index);
    return "P" + std::string(width > digits.size() ? width - digits.size() : 0, '0') + digits;
}

}  // namespace

void CohortConfig::validate() const {
    if (n_patients < 10) {
        throw ConfigError("n_patients must be at least 10");
    }
    for (const Disease d : kDiseases) {
        const double p = prevalence[static_cast<std::size_t>(d)];
        if (!(p > 0.0 && p < 1.0)) {
            throw ConfigError("prevalence of " + std::string(disease_name(d)) + " must lie in (0, 1)");
        }
    }
    if (!(signal_strength >= 0.0 && signal_strength <= 1.0)) {
        throw ConfigError("signal_strength must lie in [0, 1]");
    }
    if (!(modality_split >= 0.0 && modality_split <= 1.0)) {
        throw ConfigError("modality_split must lie in [0, 1]");
    }
}

double keyword_probability(const CohortConfig &config) {
    return std::min(1.0, kModalityScale * config.signal_strength * config.modality_split);
}

double lab_effect(const CohortConfig &config) {
    return std::min(1.0, kModalityScale * config.signal_strength * (1.0 - config.modality_split));
}

const std::vector<std::string> &disease_keywords(Disease d) {
    static const std::vector<std::string> diabetes{ "polyuria", "polydipsia", "hyperglycemia", "glycosuria" };
    static const std::vector<std::string> heart{ "angina", "orthopnea", "palpitations", "dyspnea" };
    static const std::vector<std::string> hypertension{ "epistaxis", "tinnitus", "hypertensive", "vertigo" };
    switch (d) {
        case Disease::diabetes: return diabetes;
        case Disease::heart: return heart;
        case Disease::hypertension: return hypertension;
    }
    return diabetes;
}

double analyte_shift(Disease d, std::size_t index) {
    const auto name = analyte_catalog().at(index).name;
    switch (d) {
        case Disease::diabetes:
            if (name == "fasting_glucose" || name == "hba1c") return 3.0;
            if (name == "triglycerides") return 1.0;
            break;
        case Disease::heart:
            if (name == "nt_probnp") return 3.0;
            if (name == "ldl" || name == "crp") return 2.0;
            break;
        case Disease::hypertension:
            if (name == "creatinine" || name == "uric_acid") return 2.0;
            if (name == "sodium") return 1.5;
            break;
    }
    return 0.0;
}

Cohort generate_cohort(const CohortConfig &config) {
    config.validate();
    Rng rng(config.seed);
    const auto &catalog = analyte_catalog();
    const double p_diabetes = config.prevalence[0];
    const double p_heart = config.prevalence[1];
    const double p_hyper = config.prevalence[2];
    const double hyper_without = conditional_rate_without(p_diabetes, p_hyper, kDiabetesHypertensionOddsRatio);
    const double hyper_odds_with = kDiabetesHypertensionOddsRatio * hyper_without / (1.0 - hyper_without);
    const double hyper_with = hyper_odds_with / (1.0 + hyper_odds_with);
    const double p_keyword = keyword_probability(config);
    const double effect = lab_effect(config);

    Cohort cohort;
    cohort.config = config;
    cohort.records.reserve(config.n_patients);
    for (std::size_t n = 0; n < config.n_patients; ++n) {
        PatientRecord r;
        r.patient_id = patient_id(n, config.n_patients);

        DiseaseLabels labels;
        labels.diabetes = rng.bernoulli(p_diabetes);
        labels.hypertension = rng.bernoulli(labels.diabetes ? hyper_with : hyper_without);
        labels.heart_disease = rng.bernoulli(p_heart);
        r.labels = labels;

        r.demo.age = static_cast<int>(std::lround(std::clamp(rng.normal(55.0, 15.0), 18.0, 95.0)));
        const double u = rng.uniform();
        r.demo.sex = u < 0.48 ? Sex::female : (u < 0.96 ? Sex::male : Sex::unknown);

        // note: 3-6 distinct benign sentences with keyword sentences inserted at random positions
        std::vector<std::size_t> pool(kBenignSentences.size());
        for (std::size_t i = 0; i < pool.size(); ++i) {
            pool[i] = i;
        }
        rng.shuffle(pool.begin(), pool.end());
        const std::size_t n_benign = 3 + rng.below(4);
        std::vector<std::string> sentences;
        for (std::size_t i = 0; i < n_benign; ++i) {
            sentences.push_back(kBenignSentences[pool[i]]);
        }
        for (const Disease d : kDiseases) {
            if (!labels.has(d) || !rng.bernoulli(p_keyword)) {
                continue;
            }
            const auto &keywords = disease_keywords(d);
            const std::string &keyword = keywords[rng.below(keywords.size())];
            const std::string &tmpl = kKeywordTemplates[rng.below(kKeywordTemplates.size())];
            const auto at = static_cast<std::ptrdiff_t>(rng.below(sentences.size() + 1));
            sentences.insert(sentences.begin() + at, fill(tmpl, keyword));
        }
        for (std::size_t i = 0; i < sentences.size(); ++i) {
            r.note += (i ? " " : "") + sentences[i];
        }

        r.labs = LabPanel(kAnalyteCount);
        for (std::size_t a = 0; a < kAnalyteCount; ++a) {
            const Analyte &analyte = catalog[a];
            double shift = 0.0;
            for (const Disease d : kDiseases) {
                if (labels.has(d)) {
                    shift += analyte_shift(d, a) * effect;
                }
            }
            const double raw = rng.normal(analyte.reference_mean + shift * analyte.reference_sd, analyte.reference_sd);
            const double value = std::round(std::clamp(raw, analyte.min_value, analyte.max_value) * 100.0) / 100.0;
            if (!rng.bernoulli(kMissingAnalyteRate)) {
                r.labs.set(a, value);
            }
        }

        if (labels.diabetes) {
            r.onset_day = 1 + static_cast<int>(rng.below(360));
        }
        cohort.records.push_back(std::move(r));
    }
    return cohort;
}

}  // namespace ehrisk
