#pragma once

#include "hmte/params.hpp"

#include <cstdint>
#include <vector>

namespace hmte {

struct AdamOptions {
    double lr = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second moments per registered parameter, zero-initialized on the first step.
struct AdamState {
    AdamOptions options;
    std::int64_t step = 0;
    std::vector<Buffer> m;
    std::vector<Buffer> v;

    AdamState() = default;
    explicit AdamState(AdamOptions opts) : options(opts) {}
};

/// One bias-corrected Adam update over every parameter in `params`.
/// Throws std::logic_error naming the first parameter without a gradient.
void adam_step(ParamStore& params, AdamState& state);

}  // namespace hmte
