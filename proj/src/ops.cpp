#include "hmte/ops.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

namespace hmte {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    }
}

Index normalize_axis(Index axis, Index ndim, const char* op) {
    if (axis < 0) axis += ndim;
    if (axis < 0 || axis >= ndim) throw ShapeError(std::string(op) + ": axis out of range");
    return axis;
}

Index product(const Shape& s, std::size_t begin, std::size_t end) {
    Index n = 1;
    for (std::size_t i = begin; i < end; ++i) n *= s[i];
    return n;
}

constexpr Real kInvSqrt2 = Real(0.70710678118654752440);
constexpr Real kInvSqrt2Pi = Real(0.39894228040143267794);

Buffer normal_cdf(const Buffer& v) {
    return v.unaryExpr([](Real x) { return Real(0.5) * (Real(1) + std::erf(x * kInvSqrt2)); });
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    return make_op_result(a.shape(), a.data() + b.data(), {a, b}, [a, b](const Buffer& g) {
        accumulate_grad(a, g);
        accumulate_grad(b, g);
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    return make_op_result(a.shape(), a.data() - b.data(), {a, b}, [a, b](const Buffer& g) {
        accumulate_grad(a, g);
        accumulate_grad_expr(b, -g);
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    return make_op_result(a.shape(), a.data() * b.data(), {a, b}, [a, b](const Buffer& g) {
        accumulate_grad_expr(a, g * b.data());
        accumulate_grad_expr(b, g * a.data());
    });
}

Tensor div(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "div");
    return make_op_result(a.shape(), a.data() / b.data(), {a, b}, [a, b](const Buffer& g) {
        accumulate_grad_expr(a, g / b.data());
        accumulate_grad_expr(b, -g * a.data() / b.data().square());
    });
}

Tensor scale(const Tensor& x, Real s) {
    return make_op_result(x.shape(), x.data() * s, {x}, [x, s](const Buffer& g) { accumulate_grad_expr(x, g * s); });
}

Tensor add_scalar(const Tensor& x, Real s) {
    return make_op_result(x.shape(), x.data() + s, {x}, [x](const Buffer& g) { accumulate_grad(x, g); });
}

Tensor neg(const Tensor& x) { return scale(x, Real(-1)); }

Tensor log(const Tensor& x) {
    return make_op_result(x.shape(), x.data().log(), {x},
                          [x](const Buffer& g) { accumulate_grad_expr(x, g / x.data()); });
}

Tensor pow_scalar(const Tensor& x, Real e) {
    return make_op_result(x.shape(), x.data().pow(e), {x}, [x, e](const Buffer& g) {
        if (e == Real(0)) {
            accumulate_grad_expr(x, Buffer::Zero(g.size()));
        } else {
            accumulate_grad_expr(x, g * e * x.data().pow(e - Real(1)));
        }
    });
}

Tensor clamp(const Tensor& x, Real lo, Real hi) {
    if (BranchRecorder::active()) {
        const Buffer& v = x.data();
        for (Index i = 0; i < v.size(); ++i) {
            if (v[i] < lo || v[i] > hi) BranchRecorder::note(static_cast<std::uint64_t>(2 * i + (v[i] > hi)));
        }
    }
    return make_op_result(x.shape(), x.data().max(lo).min(hi), {x}, [x, lo, hi](const Buffer& g) {
        const Buffer& v = x.data();
        accumulate_grad_expr(x, ((v >= lo) && (v <= hi)).select(g, Real(0)));
    });
}

// ---------------------------------------------------------------------------
// Activations

Tensor gelu(const Tensor& x) {
    const Buffer& v = x.data();
    Buffer out = v * normal_cdf(v);
    return make_op_result(x.shape(), std::move(out), {x}, [x](const Buffer& g) {
        const Buffer& v = x.data();
        const Buffer cdf = normal_cdf(v);
        const Buffer pdf = kInvSqrt2Pi * (Real(-0.5) * v.square()).exp();
        accumulate_grad_expr(x, g * (cdf + v * pdf));
    });
}

Tensor sigmoid(const Tensor& x) {
    const Buffer& v = x.data();
    Buffer out(v.size());
    for (Index i = 0; i < v.size(); ++i) {
        // Split by sign so exp never overflows.
        if (v[i] >= 0) {
            out[i] = Real(1) / (Real(1) + std::exp(-v[i]));
        } else {
            const Real e = std::exp(v[i]);
            out[i] = e / (Real(1) + e);
        }
    }
    auto y = std::make_shared<Buffer>(out);
    return make_op_result(x.shape(), std::move(out), {x},
                          [x, y](const Buffer& g) { accumulate_grad_expr(x, g * *y * (Real(1) - *y)); });
}

Tensor softmax(const Tensor& x) {
    const Index cols = x.shape().back();
    const Index rows = x.size() / cols;
    RowMatrix<Real> y(rows, cols);
    const ConstMatrixMap in = x.matrix();
    for (Index r = 0; r < rows; ++r) {
        const Real m = in.row(r).maxCoeff();
        y.row(r) = (in.row(r).array() - m).exp().matrix();
        y.row(r) /= y.row(r).sum();
    }
    auto saved = std::make_shared<RowMatrix<Real>>(y);
    Buffer out = Eigen::Map<const Buffer>(y.data(), y.size());
    return make_op_result(x.shape(), std::move(out), {x}, [x, saved, rows, cols](const Buffer& g) {
        const ConstMatrixMap gm(g.data(), rows, cols);
        const RowMatrix<Real>& ym = *saved;
        RowMatrix<Real> gx = ym.cwiseProduct(gm);
        const Eigen::Matrix<Real, Eigen::Dynamic, 1> dots = gx.rowwise().sum();
        gx -= ym.cwiseProduct(dots.replicate(1, cols));
        accumulate_grad(x, Eigen::Map<const Buffer>(gx.data(), gx.size()));
    });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
    Buffer out(1);
    out[0] = x.data().sum();
    return make_op_result({1}, std::move(out), {x},
                          [x](const Buffer& g) { accumulate_grad_expr(x, Buffer::Constant(x.size(), g[0])); });
}

Tensor mean(const Tensor& x) { return scale(sum(x), Real(1) / static_cast<Real>(x.size())); }

Tensor sum_axis(const Tensor& x, Index axis) {
    const Shape& s = x.shape();
    axis = normalize_axis(axis, x.ndim(), "sum_axis");
    const auto ax = static_cast<std::size_t>(axis);
    const Index outer = product(s, 0, ax);
    const Index n = s[ax];
    const Index inner = product(s, ax + 1, s.size());
    Shape out_shape;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i != ax) out_shape.push_back(s[i]);
    }
    if (out_shape.empty()) out_shape.push_back(1);
    Buffer out = Buffer::Zero(outer * inner);
    const Buffer& v = x.data();
    for (Index o = 0; o < outer; ++o) {
        for (Index k = 0; k < n; ++k) {
            out.segment(o * inner, inner) += v.segment((o * n + k) * inner, inner);
        }
    }
    return make_op_result(std::move(out_shape), std::move(out), {x}, [x, outer, n, inner](const Buffer& g) {
        Buffer gx(x.size());
        for (Index o = 0; o < outer; ++o) {
            for (Index k = 0; k < n; ++k) gx.segment((o * n + k) * inner, inner) = g.segment(o * inner, inner);
        }
        accumulate_grad(x, gx);
    });
}

Tensor mean_axis(const Tensor& x, Index axis) {
    const Index n = x.dim(axis);
    return scale(sum_axis(x, axis), Real(1) / static_cast<Real>(n));
}

// ---------------------------------------------------------------------------
// Layout

Tensor reshape(const Tensor& x, Shape shape) {
    if (numel(shape) != x.size()) {
        throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
    }
    return make_op_result(std::move(shape), x.data(), {x}, [x](const Buffer& g) { accumulate_grad(x, g); });
}

Tensor gather(const Tensor& x, std::vector<Index> index, Shape out_shape) {
    if (numel(out_shape) != static_cast<Index>(index.size())) {
        throw ShapeError("gather: index count does not match output shape " + to_string(out_shape));
    }
    const Buffer& v = x.data();
    Buffer out(static_cast<Index>(index.size()));
    for (std::size_t i = 0; i < index.size(); ++i) {
        const Index src = index[i];
        if (src < 0 || src >= v.size()) throw ShapeError("gather: index out of range");
        out[static_cast<Index>(i)] = v[src];
    }
    auto idx = std::make_shared<const std::vector<Index>>(std::move(index));
    return make_op_result(std::move(out_shape), std::move(out), {x}, [x, idx](const Buffer& g) {
        if (!x.requires_grad()) return;
        Buffer gx = Buffer::Zero(x.size());
        for (std::size_t i = 0; i < idx->size(); ++i) gx[(*idx)[i]] += g[static_cast<Index>(i)];
        accumulate_grad(x, gx);
    });
}

Tensor permute(const Tensor& x, const std::vector<Index>& order) {
    const Shape& s = x.shape();
    const std::size_t n = s.size();
    if (order.size() != n) throw ShapeError("permute: order length does not match rank");
    std::vector<bool> seen(n, false);
    Shape out_shape(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto o = static_cast<std::size_t>(order[i]);
        if (o >= n || seen[o]) throw ShapeError("permute: invalid axis order");
        seen[o] = true;
        out_shape[i] = s[o];
    }
    std::vector<Index> in_stride(n, 1);
    for (std::size_t i = n - 1; i > 0; --i) in_stride[i - 1] = in_stride[i] * s[i];
    std::vector<Index> index(static_cast<std::size_t>(x.size()));
    std::vector<Index> counter(n, 0);
    for (auto& dst : index) {
        Index src = 0;
        for (std::size_t i = 0; i < n; ++i) src += counter[i] * in_stride[static_cast<std::size_t>(order[i])];
        dst = src;
        for (std::size_t i = n; i-- > 0;) {
            if (++counter[i] < out_shape[i]) break;
            counter[i] = 0;
        }
    }
    return gather(x, std::move(index), std::move(out_shape));
}

Tensor transpose_last2(const Tensor& x) {
    const auto n = static_cast<Index>(x.ndim());
    if (n < 2) throw ShapeError("transpose_last2: rank must be >= 2");
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index(0));
    std::swap(order[static_cast<std::size_t>(n - 1)], order[static_cast<std::size_t>(n - 2)]);
    return permute(x, order);
}

Tensor concat(const std::vector<Tensor>& parts, Index axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& s0 = parts.front().shape();
    axis = normalize_axis(axis, static_cast<Index>(s0.size()), "concat");
    const auto ax = static_cast<std::size_t>(axis);
    const Index outer = product(s0, 0, ax);
    const Index inner = product(s0, ax + 1, s0.size());
    Shape out_shape = s0;
    out_shape[ax] = 0;
    std::vector<Index> extents;
    for (const Tensor& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == s0.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == ax) || s[i] == s0[i];
        if (!ok) throw ShapeError("concat: incompatible shapes " + to_string(s0) + " and " + to_string(s));
        extents.push_back(s[ax]);
        out_shape[ax] += s[ax];
    }
    const Index total = out_shape[ax];
    Buffer out(numel(out_shape));
    Index offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Index len = extents[k] * inner;
        for (Index o = 0; o < outer; ++o) {
            out.segment(o * total * inner + offset, len) = parts[k].data().segment(o * len, len);
        }
        offset += len;
    }
    return make_op_result(std::move(out_shape), std::move(out), std::span<const Tensor>(parts),
                          [parts, extents, outer, inner, total](const Buffer& g) {
                              Index off = 0;
                              for (std::size_t k = 0; k < parts.size(); ++k) {
                                  const Index len = extents[k] * inner;
                                  if (parts[k].requires_grad()) {
                                      Buffer gp(outer * len);
                                      for (Index o = 0; o < outer; ++o) {
                                          gp.segment(o * len, len) = g.segment(o * total * inner + off, len);
                                      }
                                      accumulate_grad(parts[k], gp);
                                  }
                                  off += len;
                              }
                          });
}

Tensor slice(const Tensor& x, Index axis, Index start, Index length) {
    const Shape& s = x.shape();
    axis = normalize_axis(axis, x.ndim(), "slice");
    const auto ax = static_cast<std::size_t>(axis);
    if (start < 0 || length <= 0 || start + length > s[ax]) throw ShapeError("slice: range out of bounds");
    const Index outer = product(s, 0, ax);
    const Index inner = product(s, ax + 1, s.size());
    Shape out_shape = s;
    out_shape[ax] = length;
    std::vector<Index> index;
    index.reserve(static_cast<std::size_t>(outer * length * inner));
    for (Index o = 0; o < outer; ++o) {
        for (Index k = 0; k < length; ++k) {
            for (Index i = 0; i < inner; ++i) index.push_back((o * s[ax] + start + k) * inner + i);
        }
    }
    return gather(x, std::move(index), std::move(out_shape));
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sa.size() != sb.size() ||
        !std::equal(sa.begin(), sa.end() - 2, sb.begin()) || sa[sa.size() - 1] != sb[sb.size() - 2]) {
        throw ShapeError("matmul: incompatible shapes " + to_string(sa) + " and " + to_string(sb));
    }
    const Index m = sa[sa.size() - 2];
    const Index k = sa.back();
    const Index n = sb.back();
    const Index batch = a.size() / (m * k);
    Shape out_shape = sa;
    out_shape.back() = n;
    Buffer out(batch * m * n);
    for (Index i = 0; i < batch; ++i) {
        MatrixMap(out.data() + i * m * n, m, n).noalias() =
            ConstMatrixMap(a.data().data() + i * m * k, m, k) * ConstMatrixMap(b.data().data() + i * k * n, k, n);
    }
    return make_op_result(std::move(out_shape), std::move(out), {a, b}, [a, b, batch, m, k, n](const Buffer& g) {
        if (a.requires_grad()) {
            Buffer ga(batch * m * k);
            for (Index i = 0; i < batch; ++i) {
                MatrixMap(ga.data() + i * m * k, m, k).noalias() =
                    ConstMatrixMap(g.data() + i * m * n, m, n) *
                    ConstMatrixMap(b.data().data() + i * k * n, k, n).transpose();
            }
            accumulate_grad(a, ga);
        }
        if (b.requires_grad()) {
            Buffer gb(batch * k * n);
            for (Index i = 0; i < batch; ++i) {
                MatrixMap(gb.data() + i * k * n, k, n).noalias() =
                    ConstMatrixMap(a.data().data() + i * m * k, m, k).transpose() *
                    ConstMatrixMap(g.data() + i * m * n, m, n);
            }
            accumulate_grad(b, gb);
        }
    });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (weight.ndim() != 2 || bias.ndim() != 1 || bias.dim(0) != weight.dim(0) ||
        x.shape().back() != weight.dim(1)) {
        throw ShapeError("linear: input " + to_string(x.shape()) + " incompatible with weight " +
                         to_string(weight.shape()) + " and bias " + to_string(bias.shape()));
    }
    const Index in = weight.dim(1);
    const Index outf = weight.dim(0);
    const Index rows = x.size() / in;
    Shape out_shape = x.shape();
    out_shape.back() = outf;
    Buffer out(rows * outf);
    MatrixMap y(out.data(), rows, outf);
    y.noalias() = x.matrix() * weight.matrix().transpose();
    y.rowwise() += bias.data().matrix().transpose();
    return make_op_result(std::move(out_shape), std::move(out), {x, weight, bias},
                          [x, weight, bias, rows, in, outf](const Buffer& g) {
                              const ConstMatrixMap gy(g.data(), rows, outf);
                              if (x.requires_grad()) {
                                  Buffer gx(rows * in);
                                  MatrixMap(gx.data(), rows, in).noalias() = gy * weight.matrix();
                                  accumulate_grad(x, gx);
                              }
                              if (weight.requires_grad()) {
                                  Buffer gw(outf * in);
                                  MatrixMap(gw.data(), outf, in).noalias() = gy.transpose() * x.matrix();
                                  accumulate_grad(weight, gw);
                              }
                              if (bias.requires_grad()) {
                                  accumulate_grad(bias, gy.colwise().sum().transpose().array());
                              }
                          });
}

Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    if (input.ndim() != 1 || weight.ndim() != 2 || input.dim(0) != weight.dim(1)) {
        throw ShapeError("dense: input " + to_string(input.shape()) + " incompatible with weight " +
                         to_string(weight.shape()));
    }
    return linear(input, weight, bias);
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps) {
    const Index c = x.shape().back();
    if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
        throw ShapeError("layer_norm: affine params must have shape (" + std::to_string(c) + ")");
    }
    const Index rows = x.size() / c;
    auto xhat = std::make_shared<RowMatrix<Real>>(rows, c);
    auto inv_std = std::make_shared<Eigen::Matrix<Real, Eigen::Dynamic, 1>>(rows);
    const ConstMatrixMap in = x.matrix();
    for (Index r = 0; r < rows; ++r) {
        const Real mu = in.row(r).mean();
        const auto centered = (in.row(r).array() - mu).eval();
        const Real var = centered.square().mean();
        (*inv_std)[r] = Real(1) / std::sqrt(var + eps);
        xhat->row(r) = (centered * (*inv_std)[r]).matrix();
    }
    Buffer out(rows * c);
    MatrixMap y(out.data(), rows, c);
    y = (xhat->array().rowwise() * gamma.data().transpose()).rowwise() + beta.data().transpose();
    return make_op_result(x.shape(), std::move(out), {x, gamma, beta},
                          [x, gamma, beta, xhat, inv_std, rows, c](const Buffer& g) {
                              const ConstMatrixMap gy(g.data(), rows, c);
                              if (gamma.requires_grad()) {
                                  accumulate_grad(gamma, gy.cwiseProduct(*xhat).colwise().sum().transpose().array());
                              }
                              if (beta.requires_grad()) accumulate_grad(beta, gy.colwise().sum().transpose().array());
                              if (x.requires_grad()) {
                                  const RowMatrix<Real> gxhat = gy.array().rowwise() * gamma.data().transpose();
                                  const auto m1 = gxhat.rowwise().mean();
                                  const auto m2 = gxhat.cwiseProduct(*xhat).rowwise().mean();
                                  Buffer gx(rows * c);
                                  MatrixMap gxm(gx.data(), rows, c);
                                  for (Index r = 0; r < rows; ++r) {
                                      gxm.row(r) = (gxhat.row(r).array() - m1(r) - xhat->row(r).array() * m2(r)) *
                                                   (*inv_std)[r];
                                  }
                                  accumulate_grad(x, gx);
                              }
                          });
}

// ---------------------------------------------------------------------------
// Spatial

namespace {

struct ConvGeometry {
    Index c_in, h, w;
    Index c_out, kh, kw;
    Index sh, sw;
    Index pad_top, pad_left;
    Index out_h, out_w;
};

void im2col(const Real* in, const ConvGeometry& g, RowMatrix<Real>& cols) {
    const Index p = g.out_h * g.out_w;
    cols.resize(g.c_in * g.kh * g.kw, p);
    for (Index ci = 0; ci < g.c_in; ++ci) {
        const Real* plane = in + ci * g.h * g.w;
        for (Index ki = 0; ki < g.kh; ++ki) {
            for (Index kj = 0; kj < g.kw; ++kj) {
                Real* row = cols.data() + ((ci * g.kh + ki) * g.kw + kj) * p;
                for (Index oh = 0; oh < g.out_h; ++oh) {
                    const Index ih = oh * g.sh + ki - g.pad_top;
                    Real* dst = row + oh * g.out_w;
                    if (ih < 0 || ih >= g.h) {
                        std::fill(dst, dst + g.out_w, Real(0));
                        continue;
                    }
                    const Real* src = plane + ih * g.w;
                    for (Index ow = 0; ow < g.out_w; ++ow) {
                        const Index iw = ow * g.sw + kj - g.pad_left;
                        dst[ow] = (iw >= 0 && iw < g.w) ? src[iw] : Real(0);
                    }
                }
            }
        }
    }
}

void col2im(const RowMatrix<Real>& cols, const ConvGeometry& g, Real* out) {
    const Index p = g.out_h * g.out_w;
    for (Index ci = 0; ci < g.c_in; ++ci) {
        Real* plane = out + ci * g.h * g.w;
        for (Index ki = 0; ki < g.kh; ++ki) {
            for (Index kj = 0; kj < g.kw; ++kj) {
                const Real* row = cols.data() + ((ci * g.kh + ki) * g.kw + kj) * p;
                for (Index oh = 0; oh < g.out_h; ++oh) {
                    const Index ih = oh * g.sh + ki - g.pad_top;
                    if (ih < 0 || ih >= g.h) continue;
                    const Real* src = row + oh * g.out_w;
                    Real* dst = plane + ih * g.w;
                    for (Index ow = 0; ow < g.out_w; ++ow) {
                        const Index iw = ow * g.sw + kj - g.pad_left;
                        if (iw >= 0 && iw < g.w) dst[iw] += src[ow];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, Padding padding, Stride stride) {
    if (input.ndim() != 3 || kernel.ndim() != 4) {
        throw ShapeError("conv2d: expected input (C,H,W) and kernel (C_out,C_in,kh,kw), got " +
                         to_string(input.shape()) + " and " + to_string(kernel.shape()));
    }
    if (input.dim(0) != kernel.dim(1)) {
        throw ShapeError("conv2d: input channels of " + to_string(input.shape()) + " do not match kernel " +
                         to_string(kernel.shape()));
    }
    if (bias.shape() != Shape{kernel.dim(0)}) {
        throw ShapeError("conv2d: bias " + to_string(bias.shape()) + " does not match kernel " +
                         to_string(kernel.shape()));
    }
    if (stride.h < 1 || stride.w < 1) throw ShapeError("conv2d: stride must be >= 1");

    ConvGeometry geo{input.dim(0), input.dim(1), input.dim(2), kernel.dim(0), kernel.dim(2), kernel.dim(3),
                     stride.h,     stride.w,     0,            0,             0,             0};
    if (padding == Padding::Same) {
        geo.out_h = (geo.h + geo.sh - 1) / geo.sh;
        geo.out_w = (geo.w + geo.sw - 1) / geo.sw;
        const Index total_h = std::max<Index>((geo.out_h - 1) * geo.sh + geo.kh - geo.h, 0);
        const Index total_w = std::max<Index>((geo.out_w - 1) * geo.sw + geo.kw - geo.w, 0);
        geo.pad_top = total_h / 2;
        geo.pad_left = total_w / 2;
    } else {
        if (geo.kh > geo.h || geo.kw > geo.w) {
            throw ShapeError("conv2d: kernel " + to_string(kernel.shape()) + " larger than unpadded input " +
                             to_string(input.shape()));
        }
        geo.out_h = (geo.h - geo.kh) / geo.sh + 1;
        geo.out_w = (geo.w - geo.kw) / geo.sw + 1;
    }

    auto cols = std::make_shared<RowMatrix<Real>>();
    im2col(input.data().data(), geo, *cols);
    const Index p = geo.out_h * geo.out_w;
    const Index k = geo.c_in * geo.kh * geo.kw;
    const ConstMatrixMap wmat(kernel.data().data(), geo.c_out, k);
    Buffer out(geo.c_out * p);
    MatrixMap y(out.data(), geo.c_out, p);
    y.noalias() = wmat * *cols;
    y.colwise() += bias.data().matrix();

    return make_op_result({geo.c_out, geo.out_h, geo.out_w}, std::move(out), {input, kernel, bias},
                          [input, kernel, bias, cols, geo, p, k](const Buffer& g) {
                              const ConstMatrixMap gy(g.data(), geo.c_out, p);
                              if (kernel.requires_grad()) {
                                  Buffer gk(geo.c_out * k);
                                  MatrixMap(gk.data(), geo.c_out, k).noalias() = gy * cols->transpose();
                                  accumulate_grad(kernel, gk);
                              }
                              if (bias.requires_grad()) accumulate_grad(bias, gy.rowwise().sum().array());
                              if (input.requires_grad()) {
                                  const ConstMatrixMap wmat(kernel.data().data(), geo.c_out, k);
                                  const RowMatrix<Real> gcols = wmat.transpose() * gy;
                                  Buffer gx = Buffer::Zero(input.size());
                                  col2im(gcols, geo, gx.data());
                                  accumulate_grad(input, gx);
                              }
                          });
}

Tensor pool2d(const Tensor& input, PoolMode mode) {
    if (input.ndim() != 3) throw ShapeError("pool2d: expected (C,H,W), got " + to_string(input.shape()));
    const Index c = input.dim(0), h = input.dim(1), w = input.dim(2);
    const Index oh = (h + 1) / 2, ow = (w + 1) / 2;
    const Buffer& v = input.data();
    Buffer out(c * oh * ow);
    auto argmax = std::make_shared<std::vector<Index>>();
    if (mode == PoolMode::Max) argmax->resize(static_cast<std::size_t>(out.size()));
    for (Index ch = 0; ch < c; ++ch) {
        for (Index i = 0; i < oh; ++i) {
            for (Index j = 0; j < ow; ++j) {
                const Index o = (ch * oh + i) * ow + j;
                Real best = -std::numeric_limits<Real>::infinity();
                Index best_idx = -1;
                Real acc = 0;
                for (Index di = 0; di < 2; ++di) {
                    for (Index dj = 0; dj < 2; ++dj) {
                        const Index r = 2 * i + di, col = 2 * j + dj;
                        if (r >= h || col >= w) continue;  // zero / -inf padding
                        const Index src = (ch * h + r) * w + col;
                        acc += v[src];
                        if (v[src] > best) {
                            best = v[src];
                            best_idx = src;
                        }
                    }
                }
                if (mode == PoolMode::Max) {
                    out[o] = best;
                    (*argmax)[static_cast<std::size_t>(o)] = best_idx;
                } else {
                    out[o] = acc / Real(4);
                }
            }
        }
    }
    if (mode == PoolMode::Max && BranchRecorder::active()) {
        for (Index winner : *argmax) BranchRecorder::note(static_cast<std::uint64_t>(winner));
    }
    return make_op_result({c, oh, ow}, std::move(out), {input}, [input, mode, argmax, c, h, w, oh, ow](const Buffer& g) {
        if (!input.requires_grad()) return;
        Buffer gx = Buffer::Zero(input.size());
        if (mode == PoolMode::Max) {
            for (Index o = 0; o < g.size(); ++o) gx[(*argmax)[static_cast<std::size_t>(o)]] += g[o];
        } else {
            for (Index ch = 0; ch < c; ++ch) {
                for (Index r = 0; r < h; ++r) {
                    for (Index col = 0; col < w; ++col) {
                        gx[(ch * h + r) * w + col] = g[(ch * oh + r / 2) * ow + col / 2] / Real(4);
                    }
                }
            }
        }
        accumulate_grad(input, gx);
    });
}

Tensor max_pool2d(const Tensor& input) { return pool2d(input, PoolMode::Max); }

Tensor avg_pool2d(const Tensor& input) { return pool2d(input, PoolMode::Avg); }

Tensor upsample_nearest(const Tensor& input) {
    if (input.ndim() != 3) throw ShapeError("upsample_nearest: expected (C,H,W), got " + to_string(input.shape()));
    const Index c = input.dim(0), h = input.dim(1), w = input.dim(2);
    const Buffer& v = input.data();
    Buffer out(c * 4 * h * w);
    for (Index ch = 0; ch < c; ++ch) {
        for (Index r = 0; r < 2 * h; ++r) {
            for (Index col = 0; col < 2 * w; ++col) {
                out[(ch * 2 * h + r) * 2 * w + col] = v[(ch * h + r / 2) * w + col / 2];
            }
        }
    }
    return make_op_result({c, 2 * h, 2 * w}, std::move(out), {input}, [input, c, h, w](const Buffer& g) {
        if (!input.requires_grad()) return;
        Buffer gx = Buffer::Zero(input.size());
        for (Index ch = 0; ch < c; ++ch) {
            for (Index r = 0; r < 2 * h; ++r) {
                for (Index col = 0; col < 2 * w; ++col) {
                    gx[(ch * h + r / 2) * w + col / 2] += g[(ch * 2 * h + r) * 2 * w + col];
                }
            }
        }
        accumulate_grad(input, gx);
    });
}

Tensor dropout(const Tensor& x, Real rate, bool training, std::mt19937_64& rng) {
    if (!(rate >= 0 && rate < 1)) throw std::invalid_argument("dropout: rate must be in [0, 1)");
    if (!training || rate == Real(0)) return x;
    std::bernoulli_distribution keep(1.0 - static_cast<double>(rate));
    auto mask = std::make_shared<Buffer>(x.size());
    const Real survivor = Real(1) / (Real(1) - rate);
    for (Index i = 0; i < x.size(); ++i) (*mask)[i] = keep(rng) ? survivor : Real(0);
    return make_op_result(x.shape(), x.data() * *mask, {x},
                          [x, mask](const Buffer& g) { accumulate_grad_expr(x, g * *mask); });
}

}  // namespace hmte
