#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string_view>

namespace ehrisk {

/// One blood-test analyte of the fixed panel.
struct Analyte {
    std::string_view name;
    std::string_view unit;
    double reference_mean;  ///< healthy-population mean in `unit`
    double reference_sd;
    double min_value;  ///< physiological clip bounds
    double max_value;
};

inline constexpr std::size_t kAnalyteCount = 20;

/// The fixed analyte catalog, in panel order.
const std::array<Analyte, kAnalyteCount> &analyte_catalog();

/// Panel position of `name`, or nullopt for names outside the catalog.
std::optional<std::size_t> analyte_index(std::string_view name);

}  // namespace ehrisk
