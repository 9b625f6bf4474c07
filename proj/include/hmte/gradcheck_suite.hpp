#pragma once

#include "hmte/grad_check.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace hmte {

struct GradCheckSuiteOptions {
    /// Input resolution of the full-model check.
    Index size = 16;
    std::uint64_t seed = 0;
    double tolerance = 1e-4;
    /// Sampled coordinates per parameter tensor in the block and model checks.
    Index coords_per_tensor = 8;
};

struct GradCheckEntry {
    std::string component;
    GradCheckReport report;
    bool pass = false;
    double seconds = 0.0;
};

/// Every differentiable op, each block type, both losses and the full model.
std::vector<GradCheckEntry> run_gradcheck_suite(const GradCheckSuiteOptions& options);

std::string format_gradcheck_table(const std::vector<GradCheckEntry>& entries, double tolerance);

}  // namespace hmte
