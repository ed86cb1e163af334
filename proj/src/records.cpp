#include "ehrisk/records.hpp"

#include "ehrisk/errors.hpp"
#include "ehrisk/lab_catalog.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>

namespace ehrisk {

using nlohmann::json;

std::string_view disease_name(Disease d) {
    switch (d) {
        case Disease::diabetes: return "diabetes";
        case Disease::heart: return "heart";
        case Disease::hypertension: return "hypertension";
    }
    return "unknown";
}

std::string_view disease_display_name(Disease d) {
    switch (d) {
        case Disease::diabetes: return "Diabetes";
        case Disease::heart: return "Heart disease";
        case Disease::hypertension: return "Hypertension";
    }
    return "Unknown";
}

std::optional<Disease> parse_disease(std::string_view name) {
    for (const Disease d : kDiseases) {
        if (disease_name(d) == name) {
            return d;
        }
    }
    if (name == "heart_disease") {
        return Disease::heart;
    }
    return std::nullopt;
}

std::size_t LabPanel::measured_count() const noexcept {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
}

std::string_view sex_name(Sex s) {
    switch (s) {
        case Sex::female: return "female";
        case Sex::male: return "male";
        case Sex::unknown: return "unknown";
    }
    return "unknown";
}

std::optional<Sex> parse_sex(std::string_view name) {
    for (const Sex s : { Sex::female, Sex::male, Sex::unknown }) {
        if (sex_name(s) == name) {
            return s;
        }
    }
    return std::nullopt;
}

bool DiseaseLabels::has(Disease d) const noexcept {
    switch (d) {
        case Disease::diabetes: return diabetes;
        case Disease::heart: return heart_disease;
        case Disease::hypertension: return hypertension;
    }
    return false;
}

void DiseaseLabels::set(Disease d, bool value) noexcept {
    switch (d) {
        case Disease::diabetes: diabetes = value; break;
        case Disease::heart: heart_disease = value; break;
        case Disease::hypertension: hypertension = value; break;
    }
}

void validate(const PatientRecord &record) {
    if (record.patient_id.empty()) {
        throw InvalidInputError("patient_id must be non-empty");
    }
    if (record.demo.age < 0 || record.demo.age > 120) {
        throw InvalidInputError("age " + std::to_string(record.demo.age) + " outside 0-120");
    }
    if (record.labs.values.size() != record.labs.mask.size()) {
        throw InvalidInputError("lab values and mask differ in length");
    }
    for (std::size_t i = 0; i < record.labs.size(); ++i) {
        if (record.labs.mask[i] && !std::isfinite(record.labs.values[i])) {
            throw InvalidInputError("non-finite value for analyte " + std::to_string(i));
        }
    }
}

void to_json(json &j, const LabPanel &panel) {
    const auto &catalog = analyte_catalog();
    if (panel.size() != catalog.size()) {
        throw InvalidInputError("lab panel has " + std::to_string(panel.size()) + " entries, catalog has " + std::to_string(catalog.size()));
    }
    j = json::object();
    for (std::size_t i = 0; i < panel.size(); ++i) {
        if (panel.mask[i]) {
            j[std::string(catalog[i].name)] = panel.values[i];
        }
    }
}

void from_json(const json &j, LabPanel &panel) {
    if (!j.is_object()) {
        throw InvalidInputError("labs must be an object of analyte -> value");
    }
    panel = LabPanel(kAnalyteCount);
    for (const auto &[name, value] : j.items()) {
        const auto index = analyte_index(name);
        if (!index) {
            throw InvalidInputError("unknown analyte '" + name + "'");
        }
        if (!value.is_number() || !std::isfinite(value.get<double>())) {
            throw InvalidInputError("non-finite value for analyte '" + name + "'");
        }
        panel.set(*index, value.get<double>());
    }
}

void to_json(json &j, const Demographics &demo) {
    j = json{ { "age", demo.age }, { "sex", sex_name(demo.sex) } };
}

void from_json(const json &j, Demographics &demo) {
    demo.age = j.at("age").get<int>();
    const auto sex = parse_sex(j.at("sex").get<std::string>());
    if (!sex) {
        throw InvalidInputError("sex must be female, male or unknown");
    }
    demo.sex = *sex;
}

void to_json(json &j, const DiseaseLabels &labels) {
    j = json{ { "diabetes", labels.diabetes }, { "heart_disease", labels.heart_disease }, { "hypertension", labels.hypertension } };
}

void from_json(const json &j, DiseaseLabels &labels) {
    labels.diabetes = j.at("diabetes").get<bool>();
    labels.heart_disease = j.at("heart_disease").get<bool>();
    labels.hypertension = j.at("hypertension").get<bool>();
}

void to_json(json &j, const PatientRecord &record) {
    j = json{ { "patient_id", record.patient_id }, { "note", record.note }, { "labs", record.labs }, { "demographics", record.demo } };
    if (record.labels) {
        j["labels"] = *record.labels;
    }
    if (record.onset_day) {
        j["onset_day"] = *record.onset_day;
    }
}

void from_json(const json &j, PatientRecord &record) {
    record.patient_id = j.at("patient_id").get<std::string>();
    record.note = j.value("note", std::string{});
    record.labs = j.contains("labs") ? j.at("labs").get<LabPanel>() : LabPanel(kAnalyteCount);
    record.demo = j.contains("demographics") ? j.at("demographics").get<Demographics>() : Demographics{};
    record.labels.reset();
    if (j.contains("labels") && !j.at("labels").is_null()) {
        record.labels = j.at("labels").get<DiseaseLabels>();
    }
    record.onset_day.reset();
    if (j.contains("onset_day") && !j.at("onset_day").is_null()) {
        record.onset_day = j.at("onset_day").get<int>();
    }
}

}  // namespace ehrisk
