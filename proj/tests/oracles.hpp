#pragma once

// Plain-loop reference implementations used as test oracles.

#include "hmte/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace oracle {

using hmte::Index;
using hmte::Real;
using hmte::Tensor;

inline Tensor random_tensor(const hmte::Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = false) {
    std::uniform_real_distribution<double> u(lo, hi);
    hmte::Buffer b(hmte::numel(shape));
    for (Index i = 0; i < b.size(); ++i) b[i] = u(rng);
    return Tensor(shape, b, requires_grad);
}

inline Index pick(std::mt19937_64& rng, Index lo, Index hi) {
    return std::uniform_int_distribution<Index>(lo, hi)(rng);
}

inline Real at3(const Tensor& t, Index c, Index h, Index w) {
    return t[(c * t.dim(1) + h) * t.dim(2) + w];
}

/// Direct cross-correlation; same padding puts the extra row/column bottom/right.
inline Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor& b, bool same, Index sh = 1, Index sw = 1) {
    const Index C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const Index O = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    Index oh, ow, pt = 0, pl = 0;
    if (same) {
        oh = (H + sh - 1) / sh;
        ow = (W + sw - 1) / sw;
        pt = std::max<Index>((oh - 1) * sh + kh - H, 0) / 2;
        pl = std::max<Index>((ow - 1) * sw + kw - W, 0) / 2;
    } else {
        oh = (H - kh) / sh + 1;
        ow = (W - kw) / sw + 1;
    }
    hmte::Buffer out(O * oh * ow);
    for (Index o = 0; o < O; ++o)
        for (Index i = 0; i < oh; ++i)
            for (Index j = 0; j < ow; ++j) {
                Real acc = b[o];
                for (Index c = 0; c < C; ++c)
                    for (Index u = 0; u < kh; ++u)
                        for (Index v = 0; v < kw; ++v) {
                            const Index r = i * sh + u - pt, q = j * sw + v - pl;
                            if (r < 0 || r >= H || q < 0 || q >= W) continue;
                            acc += k[((o * C + c) * kh + u) * kw + v] * at3(x, c, r, q);
                        }
                out[(o * oh + i) * ow + j] = acc;
            }
    return Tensor({O, oh, ow}, out);
}

inline Tensor pool2d(const Tensor& x, bool is_max) {
    const Index C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const Index oh = (H + 1) / 2, ow = (W + 1) / 2;
    hmte::Buffer out(C * oh * ow);
    for (Index c = 0; c < C; ++c)
        for (Index i = 0; i < oh; ++i)
            for (Index j = 0; j < ow; ++j) {
                Real best = -std::numeric_limits<Real>::infinity(), total = 0;
                for (Index u = 0; u < 2; ++u)
                    for (Index v = 0; v < 2; ++v) {
                        const Index r = 2 * i + u, q = 2 * j + v;
                        const bool inside = r < H && q < W;
                        const Real val = inside ? at3(x, c, r, q) : Real(0);
                        if (inside) best = std::max(best, val);
                        total += val;
                    }
                out[(c * oh + i) * ow + j] = is_max ? best : total / 4;
            }
    return Tensor({C, oh, ow}, out);
}

inline Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
    const Index m = w.dim(0), n = w.dim(1);
    hmte::Buffer out(m);
    for (Index i = 0; i < m; ++i) {
        Real acc = b[i];
        for (Index j = 0; j < n; ++j) acc += w[i * n + j] * x[j];
        out[i] = acc;
    }
    return Tensor({m}, out);
}

/// Two positions of a grid rolled by -shift were neighbors before the roll iff undoing
/// the roll leaves their displacement unchanged.
inline bool contiguous_after_roll(Index ri, Index rj, Index n, Index shift) {
    const Index oi = (ri + shift) % n, oj = (rj + shift) % n;
    return oi - oj == ri - rj;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
    return (a.data() - b.data()).abs().maxCoeff();
}

}  // namespace oracle
