#pragma once

#include "ehrisk/loss.hpp"
#include "ehrisk/model.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace ehrisk {

struct TensorGradCheck {
    std::string name;
    std::size_t coordinates = 0;
    double max_relative_error = 0.0;
    bool passed = true;
};

struct GradReport {
    std::vector<TensorGradCheck> tensors;
    double tolerance = 0.0;
    double max_relative_error = 0.0;

    [[nodiscard]] bool passed() const;
    /// Names of tensors whose error exceeded the tolerance.
    [[nodiscard]] std::vector<std::string> flagged() const;
};

struct GradCheckOptions {
    std::size_t samples_per_tensor = 20;
    double step = 1e-4;
    std::uint64_t seed = 0;
    ClassWeights weights;
    /// Tensors excluded from the check.
    std::vector<std::string> frozen;
    /// Applied to the analytic gradient before comparison; lets tests inject faults.
    std::function<void(ModelParams &)> tamper_analytic;
};

/// Compares the backpropagated loss gradient with central finite differences on
/// sampled coordinates of every non-frozen tensor (all coordinates when a tensor
/// has fewer than `samples_per_tensor`). Relative error is
/// |g_a - g_n| / max(|g_a|, |g_n|, 1e-8).
GradReport grad_check(const Model &model, const PatientRecord &record, double tolerance, const GradCheckOptions &options = {});

/// Seeded tiny model (d=8, 2 heads, K=4 analytes, 4-token notes) and a labeled record for it.
struct GradCheckFixture {
    Model model;
    PatientRecord record;
};
GradCheckFixture tiny_gradcheck_fixture(std::uint64_t seed);

}  // namespace ehrisk
