#include "hmte/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace hmte {

double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check_params(const std::function<Tensor()>& f, const std::vector<Tensor>& wrt,
                                  const GradCheckOptions& options) {
    std::vector<Tensor> params = wrt;
    std::vector<bool> saved_flags;
    for (Tensor& p : params) {
        saved_flags.push_back(p.requires_grad());
        p.set_requires_grad(true);
        p.clear_grad();
    }

    std::vector<Buffer> analytic;
    {
        Tape tape;
        const Tensor y = f();
        if (y.size() != 1) throw ShapeError("grad_check: function must be scalar-valued, got " + to_string(y.shape()));
        if (y.requires_grad()) tape.backward(y);
        for (const Tensor& p : params) analytic.push_back(p.has_grad() ? p.grad() : Buffer::Zero(p.size()));
    }

    GradCheckReport report;
    std::mt19937_64 rng(options.seed);
    const double h = options.step;
    {
        NoGradGuard no_grad;
        auto evaluate = [&f](std::uint64_t& fingerprint) {
            BranchRecorder recorder;
            const double value = f().item();
            fingerprint = recorder.fingerprint();
            return value;
        };
        std::uint64_t base = 0, fp_plus = 0, fp_minus = 0;
        evaluate(base);
        for (std::size_t t = 0; t < params.size(); ++t) {
            Tensor& p = params[t];
            std::vector<Index> coords(static_cast<std::size_t>(p.size()));
            std::iota(coords.begin(), coords.end(), Index(0));
            if (options.max_coords_per_tensor > 0 && p.size() > options.max_coords_per_tensor) {
                std::shuffle(coords.begin(), coords.end(), rng);
                coords.resize(static_cast<std::size_t>(options.max_coords_per_tensor));
                std::sort(coords.begin(), coords.end());
            }
            for (Index i : coords) {
                Buffer& data = p.mutable_data();
                const Real original = data[i];
                data[i] = original + static_cast<Real>(h);
                const double plus = evaluate(fp_plus);
                p.mutable_data()[i] = original - static_cast<Real>(h);
                const double minus = evaluate(fp_minus);
                p.mutable_data()[i] = original;
                if (std::isfinite(plus) && std::isfinite(minus) && (fp_plus != base || fp_minus != base)) {
                    ++report.kinks_skipped;
                    continue;
                }
                ++report.coords_checked;
                if (!std::isfinite(plus) || !std::isfinite(minus)) {
                    report.finite = false;
                    report.max_rel_error = std::numeric_limits<double>::infinity();
                    report.worst = std::to_string(t) + "[" + std::to_string(i) + "]";
                    continue;
                }
                const double numeric = (plus - minus) / (2.0 * h);
                const double err = relative_error(analytic[t][i], numeric);
                if (err > report.max_rel_error) {
                    report.max_rel_error = err;
                    report.worst_analytic = analytic[t][i];
                    report.worst_numeric = numeric;
                    report.worst = std::to_string(t) + "[" + std::to_string(i) + "]";
                }
            }
        }
    }

    for (std::size_t t = 0; t < params.size(); ++t) {
        params[t].clear_grad();
        params[t].set_requires_grad(saved_flags[t]);
    }
    return report;
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, Real h) {
    GradCheckOptions options;
    options.step = h;
    return grad_check_params([&] { return f(x); }, {x}, options);
}

}  // namespace hmte
