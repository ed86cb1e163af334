#include "ehrisk/lab_catalog.hpp"

namespace ehrisk {

const std::array<Analyte, kAnalyteCount> &analyte_catalog() {
    static constexpr std::array<Analyte, kAnalyteCount> catalog{ {
        { "fasting_glucose", "mg/dL", 92.0, 10.0, 40.0, 600.0 },
        { "hba1c", "%", 5.4, 0.4, 3.0, 18.0 },
        { "total_cholesterol", "mg/dL", 185.0, 30.0, 80.0, 400.0 },
        { "ldl", "mg/dL", 110.0, 25.0, 30.0, 300.0 },
        { "hdl", "mg/dL", 52.0, 12.0, 15.0, 120.0 },
        { "triglycerides", "mg/dL", 130.0, 40.0, 30.0, 1000.0 },
        { "creatinine", "mg/dL", 0.9, 0.2, 0.3, 10.0 },
        { "bun", "mg/dL", 14.0, 4.0, 3.0, 100.0 },
        { "sodium", "mmol/L", 140.0, 2.5, 115.0, 165.0 },
        { "potassium", "mmol/L", 4.2, 0.35, 2.5, 7.0 },
        { "alt", "U/L", 25.0, 9.0, 5.0, 500.0 },
        { "ast", "U/L", 23.0, 7.0, 5.0, 500.0 },
        { "hemoglobin", "g/dL", 14.0, 1.3, 6.0, 20.0 },
        { "wbc", "10^3/uL", 7.0, 1.8, 1.0, 30.0 },
        { "platelets", "10^3/uL", 250.0, 55.0, 20.0, 800.0 },
        { "crp", "mg/L", 2.0, 1.5, 0.1, 200.0 },
        { "uric_acid", "mg/dL", 5.5, 1.2, 1.0, 15.0 },
        { "albumin", "g/dL", 4.2, 0.35, 1.5, 6.0 },
        { "tsh", "mIU/L", 2.0, 0.8, 0.05, 20.0 },
        { "nt_probnp", "pg/mL", 80.0, 40.0, 5.0, 5000.0 },
    } };
    return catalog;
}

std::optional<std::size_t> analyte_index(std::string_view name) {
    const auto &catalog = analyte_catalog();
    for (std::size_t i = 0; i < catalog.size(); ++i) {
        if (catalog[i].name == name) {
            return i;
        }
    }
    return std::nullopt;
}

}  // namespace ehrisk
