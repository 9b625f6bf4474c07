#pragma once

#include "hmte/tensor.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace hmte {

struct GradCheckOptions {
    Real step = Real(1e-4);
    /// 0 checks every coordinate; otherwise a seeded random subset per tensor.
    Index max_coords_per_tensor = 0;
    std::uint64_t seed = 0;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    Index coords_checked = 0;
    /// Coordinates whose perturbation changed a max-pool winner or clamp boundary;
    /// they are excluded from max_rel_error.
    Index kinks_skipped = 0;
    bool finite = true;
    /// "<tensor index>[<flat index>]" of the worst coordinate.
    std::string worst;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

/// |a - n| / max(|a|, |n|, 1e-8).
double relative_error(double analytic, double numeric);

/// Compares reverse-mode gradients of the scalar `f()` with respect to every tensor in
/// `wrt` against central differences (f(x+h e_i) - f(x-h e_i)) / 2h. `f` must be
/// deterministic; it is re-evaluated with recording disabled for the numeric side.
/// A coordinate whose +h or -h evaluation takes a different branch through a
/// non-smooth op than the unperturbed point is counted in kinks_skipped instead.
GradCheckReport grad_check_params(const std::function<Tensor()>& f, const std::vector<Tensor>& wrt,
                                  const GradCheckOptions& options = {});

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, Real h = Real(1e-4));

}  // namespace hmte
