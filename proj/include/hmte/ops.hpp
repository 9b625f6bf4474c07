#pragma once

#include "hmte/tensor.hpp"

#include <random>
#include <vector>

namespace hmte {

// Elementwise. Binary ops require identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, Real s);
Tensor add_scalar(const Tensor& x, Real s);
Tensor neg(const Tensor& x);
Tensor log(const Tensor& x);
/// x^e for x > 0.
Tensor pow_scalar(const Tensor& x, Real e);
/// Gradient passes where lo <= x <= hi, zero outside.
Tensor clamp(const Tensor& x, Real lo, Real hi);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& x, Real s) { return scale(x, s); }
inline Tensor operator*(Real s, const Tensor& x) { return scale(x, s); }
inline Tensor operator+(const Tensor& x, Real s) { return add_scalar(x, s); }
inline Tensor operator+(Real s, const Tensor& x) { return add_scalar(x, s); }
inline Tensor operator-(Real s, const Tensor& x) { return add_scalar(neg(x), s); }
inline Tensor operator-(const Tensor& x) { return neg(x); }

// Activations.
/// Exact GELU, x * Phi(x).
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// Max-subtracted softmax over the last dimension.
Tensor softmax(const Tensor& x);

// Reductions.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Removes `axis`.
Tensor sum_axis(const Tensor& x, Index axis);
Tensor mean_axis(const Tensor& x, Index axis);

// Layout. All of these are pure copies and round-trip bit-exactly.
Tensor reshape(const Tensor& x, Shape shape);
/// out.flat[i] = x.flat[index[i]]; the backward pass scatter-adds.
Tensor gather(const Tensor& x, std::vector<Index> index, Shape out_shape);
Tensor permute(const Tensor& x, const std::vector<Index>& order);
Tensor transpose_last2(const Tensor& x);
Tensor concat(const std::vector<Tensor>& parts, Index axis);
Tensor slice(const Tensor& x, Index axis, Index start, Index length);

// Linear algebra.
/// Batched product: [..., m, k] x [..., k, n] -> [..., m, n], batch dims equal.
Tensor matmul(const Tensor& a, const Tensor& b);
/// x[..., in] * weight[out, in]^T + bias[out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
/// weight[m, n] * input[n] + bias[m].
Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias);

/// Per-token normalization over the last dimension with population variance.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps = Real(1e-5));

// Spatial ops on [C, H, W] maps.
enum class Padding { Same, Valid };

struct Stride {
    Index h = 1;
    Index w = 1;
};

/// Cross-correlation with kernel [C_out, C_in, kh, kw]. 'Same' zero-pads with the
/// extra row/column on the bottom/right for even kernels.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, Padding padding = Padding::Same,
              Stride stride = {});

enum class PoolMode { Max, Avg };

/// 2x2 window, stride 2. Odd extents are padded on the bottom/right with zeros (avg)
/// or -infinity (max).
Tensor pool2d(const Tensor& input, PoolMode mode);
Tensor max_pool2d(const Tensor& input);
Tensor avg_pool2d(const Tensor& input);

/// Replicates every pixel into a 2x2 block.
Tensor upsample_nearest(const Tensor& input);

/// Inverted dropout: survivors are scaled by 1/(1-rate) during training; identity otherwise.
Tensor dropout(const Tensor& x, Real rate, bool training, std::mt19937_64& rng);

}  // namespace hmte
