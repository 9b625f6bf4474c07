#include "hmte/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace hmte {

void adam_step(ParamStore& params, AdamState& state) {
    const auto& entries = params.entries();
    for (const auto& e : entries) {
        if (!e.value.has_grad()) throw std::logic_error("adam_step: parameter '" + e.name + "' has no gradient");
    }
    if (state.m.empty()) {
        for (const auto& e : entries) {
            state.m.push_back(Buffer::Zero(e.value.size()));
            state.v.push_back(Buffer::Zero(e.value.size()));
        }
    }
    if (state.m.size() != entries.size()) throw std::logic_error("adam_step: optimizer state does not match parameters");

    const AdamOptions& o = state.options;
    ++state.step;
    const double t = static_cast<double>(state.step);
    const Real c1 = static_cast<Real>(1.0 - std::pow(o.beta1, t));
    const Real c2 = static_cast<Real>(1.0 - std::pow(o.beta2, t));
    const auto b1 = static_cast<Real>(o.beta1);
    const auto b2 = static_cast<Real>(o.beta2);
    for (std::size_t i = 0; i < entries.size(); ++i) {
        Tensor p = entries[i].value;
        const Buffer& g = p.grad();
        state.m[i] = b1 * state.m[i] + (Real(1) - b1) * g;
        state.v[i] = b2 * state.v[i] + (Real(1) - b2) * g.square();
        p.mutable_data() -= static_cast<Real>(o.lr) * (state.m[i] / c1) /
                            ((state.v[i] / c2).sqrt() + static_cast<Real>(o.eps));
    }
}

}  // namespace hmte
