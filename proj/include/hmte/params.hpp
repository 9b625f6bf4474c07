#pragma once

#include "hmte/ops.hpp"
#include "hmte/tensor.hpp"

#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace hmte {

struct NamedParam {
    std::string name;
    Tensor value;
};

/// Named, ordered collection of trainable tensors. Registration order is the
/// serialization and optimizer order.
class ParamStore {
public:
    /// Registers `init` as trainable; duplicate names are rejected.
    Tensor add(const std::string& name, Tensor init);

    const std::vector<NamedParam>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    Index element_count() const;
    const Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const;
    std::vector<Tensor> tensors() const;
    /// Tensors whose names start with `prefix`.
    std::vector<Tensor> tensors_with_prefix(const std::string& prefix) const;

    /// Drops gradient buffers so the next backward repopulates them.
    void clear_grads();

private:
    std::vector<NamedParam> entries_;
};

Tensor normal_tensor(const Shape& shape, double stddev, std::mt19937_64& rng);
Tensor uniform_tensor(const Shape& shape, double lo, double hi, std::mt19937_64& rng);

struct Conv2dParams {
    Tensor weight;  // [C_out, C_in, kh, kw]
    Tensor bias;    // [C_out]
};

struct LinearParams {
    Tensor weight;  // [out, in]
    Tensor bias;    // [out]
};

struct LayerNormParams {
    Tensor gamma;
    Tensor beta;
};

/// Second-moment-preserving gain for a conv followed by GELU: 1 / sqrt(E[gelu(z)^2]), z ~ N(0, 1).
inline constexpr double kGeluGain = 1.5335304411955353;

/// A batch of maps pushed through the network once at construction to set weight scales.
using ProbeBatch = std::vector<Tensor>;

/// Bound on the calibration rescale. Nearly dead layers on tiny maps would otherwise get
/// blown up by large factors and make the network hypersensitive.
inline constexpr double kCalibrationCap = 2.0;

/// Rescales the weights toward unit RMS of the conv outputs over the whole batch (factor
/// clamped to [1/cap, cap]) and returns the outputs. An all-zero output leaves the conv untouched.
ProbeBatch calibrate_conv(Conv2dParams& p, const ProbeBatch& inputs);

/// f applied to every map of the batch.
template <class F>
ProbeBatch map_probe(const ProbeBatch& batch, F&& f) {
    ProbeBatch out;
    out.reserve(batch.size());
    for (const auto& t : batch) out.push_back(f(t));
    return out;
}

/// Normal(0, gain / sqrt(fan_in)) weights, zero bias.
Conv2dParams make_conv2d(ParamStore& store, const std::string& name, Index c_in, Index c_out, Index kh, Index kw,
                         std::mt19937_64& rng, double gain = 1.4142135623730951);
/// Normal(0, stddev) weights, zero bias; stddev <= 0 selects He scaling sqrt(2/in).
LinearParams make_linear(ParamStore& store, const std::string& name, Index in, Index out, std::mt19937_64& rng,
                         double stddev = 0.0);
LayerNormParams make_layer_norm(ParamStore& store, const std::string& name, Index channels);

inline Tensor conv2d(const Tensor& x, const Conv2dParams& p, Padding padding = Padding::Same) {
    return conv2d(x, p.weight, p.bias, padding);
}
inline Tensor linear(const Tensor& x, const LinearParams& p) { return linear(x, p.weight, p.bias); }
inline Tensor layer_norm(const Tensor& x, const LayerNormParams& p) { return layer_norm(x, p.gamma, p.beta); }

}  // namespace hmte
