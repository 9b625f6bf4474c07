#include "hmte/aaa.hpp"

#include "hmte/ops.hpp"

namespace hmte {

AaaParams make_aaa(ParamStore& store, const std::string& prefix, Index channels, Index extent, std::mt19937_64& rng,
                   bool frozen) {
    AaaParams p;
    p.extent = extent;
    p.frozen = frozen;
    // A frozen gate still draws its kernels (into a scratch store) so every later layer
    // gets the same initialization as in the gated model.
    ParamStore scratch;
    ParamStore& target = frozen ? scratch : store;
    const Conv2dParams row = make_conv2d(target, prefix + ".row", channels, channels, 1, extent, rng);
    const Conv2dParams col = make_conv2d(target, prefix + ".col", channels, channels, extent, 1, rng);
    if (!frozen) {
        p.row = row;
        p.col = col;
    }
    return p;
}

Tensor merge_patches(const TokenGrid& grid) {
    grid.validate();
    return reshape(permute(grid.tokens, {1, 0}), {grid.channels(), grid.grid_h, grid.grid_w});
}

TokenGrid split_patches(const Tensor& map, Index patch_size) {
    if (map.ndim() != 3) throw ShapeError("split_patches: expected (C,H,W), got " + to_string(map.shape()));
    const Index c = map.dim(0), h = map.dim(1), w = map.dim(2);
    return TokenGrid{permute(reshape(map, {c, h * w}), {1, 0}), h, w, patch_size};
}

Tensor pooled_context(const Tensor& y) {
    if (y.ndim() != 3 || y.dim(1) < 2 || y.dim(2) < 2 || y.dim(1) % 2 != 0 || y.dim(2) % 2 != 0) {
        throw ShapeError("pooled_context: expected (C,h,w) with even h,w >= 2, got " + to_string(y.shape()));
    }
    return upsample_nearest(add(max_pool2d(y), avg_pool2d(y)));
}

Tensor anatomy_gate(const Tensor& pooled, const AaaParams& params) {
    if (params.frozen) return Tensor::full(pooled.shape(), Real(0.5));
    return sigmoid(add(conv2d(pooled, params.row), conv2d(pooled, params.col)));
}

AaaTrace aaa_trace(const TokenGrid& input, const AaaParams& params) {
    if (input.grid_h % 2 != 0 || input.grid_w % 2 != 0) {
        throw ShapeError("aaa_forward: token grid must have even dims, got " + std::to_string(input.grid_h) + "x" +
                         std::to_string(input.grid_w));
    }
    AaaTrace t;
    t.y = merge_patches(input);
    t.b = pooled_context(t.y);
    t.gate = anatomy_gate(t.b, params);
    t.o = mul(t.y, t.gate);
    return t;
}

TokenGrid aaa_forward(const TokenGrid& input, const AaaParams& params) {
    return split_patches(aaa_trace(input, params).o, input.patch_size);
}

}  // namespace hmte
