#include "hmte/params.hpp"
#include <algorithm>


#include "hmte/ops.hpp"

#include <cmath>
#include <stdexcept>

namespace hmte {

Tensor ParamStore::add(const std::string& name, Tensor init) {
    if (contains(name)) throw std::invalid_argument("parameter registered twice: " + name);
    init.set_requires_grad(true);
    entries_.push_back({name, init});
    return init;
}

Index ParamStore::element_count() const {
    Index n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
}

const Tensor& ParamStore::get(const std::string& name) const {
    for (const auto& e : entries_) {
        if (e.name == name) return e.value;
    }
    throw std::out_of_range("unknown parameter: " + name);
}

bool ParamStore::contains(const std::string& name) const {
    for (const auto& e : entries_) {
        if (e.name == name) return true;
    }
    return false;
}

std::vector<Tensor> ParamStore::tensors() const {
    std::vector<Tensor> out;
    for (const auto& e : entries_) out.push_back(e.value);
    return out;
}

std::vector<Tensor> ParamStore::tensors_with_prefix(const std::string& prefix) const {
    std::vector<Tensor> out;
    for (const auto& e : entries_) {
        if (e.name.rfind(prefix, 0) == 0) out.push_back(e.value);
    }
    return out;
}

void ParamStore::clear_grads() {
    for (auto& e : entries_) e.value.clear_grad();
}

Tensor normal_tensor(const Shape& shape, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    Buffer b(numel(shape));
    for (Index i = 0; i < b.size(); ++i) b[i] = static_cast<Real>(dist(rng));
    return Tensor(shape, std::move(b));
}

Tensor uniform_tensor(const Shape& shape, double lo, double hi, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Buffer b(numel(shape));
    for (Index i = 0; i < b.size(); ++i) b[i] = static_cast<Real>(dist(rng));
    return Tensor(shape, std::move(b));
}

ProbeBatch calibrate_conv(Conv2dParams& p, const ProbeBatch& inputs) {
    NoGradGuard no_grad;
    auto run = [&] { return map_probe(inputs, [&](const Tensor& x) { return conv2d(x, p); }); };
    ProbeBatch out = run();
    double sq = 0.0;
    Index n = 0;
    for (const auto& t : out) {
        sq += t.data().square().sum();
        n += t.data().size();
    }
    const double rms = n > 0 ? std::sqrt(sq / static_cast<double>(n)) : 0.0;
    if (!(rms > 0) || !std::isfinite(rms)) return out;
    p.weight.mutable_data() *= std::clamp(1.0 / rms, 1.0 / kCalibrationCap, kCalibrationCap);
    return run();
}

Conv2dParams make_conv2d(ParamStore& store, const std::string& name, Index c_in, Index c_out, Index kh, Index kw,
                         std::mt19937_64& rng, double gain) {
    const double fan_in = static_cast<double>(c_in * kh * kw);
    Conv2dParams p;
    p.weight = store.add(name + ".weight", normal_tensor({c_out, c_in, kh, kw}, gain / std::sqrt(fan_in), rng));
    p.bias = store.add(name + ".bias", Tensor::zeros({c_out}));
    return p;
}

LinearParams make_linear(ParamStore& store, const std::string& name, Index in, Index out, std::mt19937_64& rng,
                         double stddev) {
    if (stddev <= 0.0) stddev = std::sqrt(2.0 / static_cast<double>(in));
    LinearParams p;
    p.weight = store.add(name + ".weight", normal_tensor({out, in}, stddev, rng));
    p.bias = store.add(name + ".bias", Tensor::zeros({out}));
    return p;
}

LayerNormParams make_layer_norm(ParamStore& store, const std::string& name, Index channels) {
    LayerNormParams p;
    p.gamma = store.add(name + ".gamma", Tensor::ones({channels}));
    p.beta = store.add(name + ".beta", Tensor::zeros({channels}));
    return p;
}

}  // namespace hmte
