#pragma once

#include "json.hpp"

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ehrisk {

enum class Disease { diabetes = 0, heart = 1, hypertension = 2 };

inline constexpr std::size_t kDiseaseCount = 3;
inline constexpr std::array<Disease, kDiseaseCount> kDiseases{ Disease::diabetes, Disease::heart, Disease::hypertension };

/// Machine name: "diabetes", "heart", "hypertension".
std::string_view disease_name(Disease d);
/// Report name: "Diabetes", "Heart disease", "Hypertension".
std::string_view disease_display_name(Disease d);
std::optional<Disease> parse_disease(std::string_view name);

inline constexpr std::size_t kHorizonCount = 4;
inline constexpr std::array<int, kHorizonCount> kHorizonDays{ 90, 180, 270, 360 };

/// Lab measurements in panel order; `mask[i]` is true when analyte i was measured.
struct LabPanel {
    std::vector<double> values;
    std::vector<bool> mask;

    LabPanel() = default;
    /// Fully unmeasured panel of `analyte_count` entries.
    explicit LabPanel(std::size_t analyte_count) : values(analyte_count, 0.0), mask(analyte_count, false) {}

    [[nodiscard]] std::size_t size() const noexcept { return values.size(); }
    [[nodiscard]] std::size_t measured_count() const noexcept;
    void set(std::size_t index, double value) {
        values[index] = value;
        mask[index] = true;
    }
    void clear(std::size_t index) {
        values[index] = 0.0;
        mask[index] = false;
    }

    friend bool operator==(const LabPanel &, const LabPanel &) = default;
};

enum class Sex { female = 0, male = 1, unknown = 2 };

std::string_view sex_name(Sex s);
std::optional<Sex> parse_sex(std::string_view name);

struct Demographics {
    int age = 0;
    Sex sex = Sex::unknown;

    friend bool operator==(const Demographics &, const Demographics &) = default;
};

struct DiseaseLabels {
    bool diabetes = false;
    bool heart_disease = false;
    bool hypertension = false;

    [[nodiscard]] bool has(Disease d) const noexcept;
    void set(Disease d, bool value) noexcept;

    friend bool operator==(const DiseaseLabels &, const DiseaseLabels &) = default;
};

struct PatientRecord {
    std::string patient_id;
    std::string note;
    LabPanel labs{ 0 };
    Demographics demo;
    std::optional<DiseaseLabels> labels;
    /// Days until diabetes onset, when known.
    std::optional<int> onset_day;

    friend bool operator==(const PatientRecord &, const PatientRecord &) = default;
};

/// Throws InvalidInputError when a field violates its domain constraints.
void validate(const PatientRecord &record);

// Structured-document forms. Labs are written as {analyte_name: value} over
// measured analytes only, so they require panels sized to the analyte catalog.
void to_json(nlohmann::json &j, const LabPanel &panel);
void from_json(const nlohmann::json &j, LabPanel &panel);
void to_json(nlohmann::json &j, const Demographics &demo);
void from_json(const nlohmann::json &j, Demographics &demo);
void to_json(nlohmann::json &j, const DiseaseLabels &labels);
void from_json(const nlohmann::json &j, DiseaseLabels &labels);
void to_json(nlohmann::json &j, const PatientRecord &record);
void from_json(const nlohmann::json &j, PatientRecord &record);

}  // namespace ehrisk
