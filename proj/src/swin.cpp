#include "hmte/swin.hpp"

#include "hmte/ops.hpp"

#include <algorithm>
#include <cmath>

namespace hmte {

void TokenGrid::validate() const {
    if (!tokens.defined() || tokens.ndim() != 2) throw ShapeError("TokenGrid: tokens must be [L, C]");
    if (tokens.dim(0) != grid_h * grid_w) {
        throw ShapeError("TokenGrid: " + std::to_string(tokens.dim(0)) + " tokens for a " + std::to_string(grid_h) +
                         "x" + std::to_string(grid_w) + " grid");
    }
}

TokenGrid patch_embed(const Tensor& image, const LinearParams& proj, Index patch_size) {
    if (image.ndim() != 3 || image.dim(0) != 1) {
        throw ShapeError("patch_embed: expected a (1,H,W) image, got " + to_string(image.shape()));
    }
    const Index h = image.dim(1), w = image.dim(2);
    if (h % patch_size != 0 || w % patch_size != 0) {
        throw ShapeError("patch_embed: image " + to_string(image.shape()) + " not divisible by patch size " +
                         std::to_string(patch_size));
    }
    const Index gh = h / patch_size, gw = w / patch_size;
    const Index pp = patch_size * patch_size;
    std::vector<Index> index;
    index.reserve(static_cast<std::size_t>(gh * gw * pp));
    for (Index r = 0; r < gh; ++r) {
        for (Index c = 0; c < gw; ++c) {
            for (Index pr = 0; pr < patch_size; ++pr) {
                for (Index pc = 0; pc < patch_size; ++pc) {
                    index.push_back((r * patch_size + pr) * w + c * patch_size + pc);
                }
            }
        }
    }
    Tensor patches = gather(image, std::move(index), {gh * gw, pp});
    return TokenGrid{linear(patches, proj), gh, gw, patch_size};
}

Tensor window_partition(const TokenGrid& grid, Index window) {
    grid.validate();
    if (window <= 0 || grid.grid_h % window != 0 || grid.grid_w % window != 0) {
        throw ShapeError("window_partition: grid " + std::to_string(grid.grid_h) + "x" + std::to_string(grid.grid_w) +
                         " not divisible by window " + std::to_string(window));
    }
    const Index c = grid.channels();
    const Index nwh = grid.grid_h / window, nww = grid.grid_w / window;
    std::vector<Index> index;
    index.reserve(static_cast<std::size_t>(grid.tokens.size()));
    for (Index wr = 0; wr < nwh; ++wr) {
        for (Index wc = 0; wc < nww; ++wc) {
            for (Index sr = 0; sr < window; ++sr) {
                for (Index sc = 0; sc < window; ++sc) {
                    const Index token = (wr * window + sr) * grid.grid_w + wc * window + sc;
                    for (Index ch = 0; ch < c; ++ch) index.push_back(token * c + ch);
                }
            }
        }
    }
    return gather(grid.tokens, std::move(index), {nwh * nww, window * window, c});
}

TokenGrid window_merge(const Tensor& windows, Index grid_h, Index grid_w, Index window, Index patch_size) {
    if (windows.ndim() != 3 || windows.dim(1) != window * window || grid_h % window != 0 || grid_w % window != 0 ||
        windows.dim(0) != (grid_h / window) * (grid_w / window)) {
        throw ShapeError("window_merge: windows " + to_string(windows.shape()) + " do not tile a " +
                         std::to_string(grid_h) + "x" + std::to_string(grid_w) + " grid");
    }
    const Index c = windows.dim(2);
    const Index nww = grid_w / window;
    std::vector<Index> index;
    index.reserve(static_cast<std::size_t>(windows.size()));
    for (Index r = 0; r < grid_h; ++r) {
        for (Index col = 0; col < grid_w; ++col) {
            const Index win = (r / window) * nww + col / window;
            const Index slot = (r % window) * window + col % window;
            for (Index ch = 0; ch < c; ++ch) index.push_back((win * window * window + slot) * c + ch);
        }
    }
    return TokenGrid{gather(windows, std::move(index), {grid_h * grid_w, c}), grid_h, grid_w, patch_size};
}

namespace {
Index wrap(Index v, Index n) { return ((v % n) + n) % n; }
}  // namespace

TokenGrid cyclic_shift(const TokenGrid& grid, Index shift_h, Index shift_w) {
    grid.validate();
    const Index h = grid.grid_h, w = grid.grid_w, c = grid.channels();
    std::vector<Index> index;
    index.reserve(static_cast<std::size_t>(grid.tokens.size()));
    for (Index r = 0; r < h; ++r) {
        for (Index col = 0; col < w; ++col) {
            const Index src = wrap(r - shift_h, h) * w + wrap(col - shift_w, w);
            for (Index ch = 0; ch < c; ++ch) index.push_back(src * c + ch);
        }
    }
    return TokenGrid{gather(grid.tokens, std::move(index), {h * w, c}), h, w, grid.patch_size};
}

TokenGrid inverse_cyclic_shift(const TokenGrid& grid, Index shift_h, Index shift_w) {
    return cyclic_shift(grid, -shift_h, -shift_w);
}

Index effective_window(Index grid_h, Index grid_w, Index window) { return std::min({window, grid_h, grid_w}); }

AttentionMask build_shift_mask(Index grid_h, Index grid_w, Index window, Index shift) {
    if (window <= 0 || grid_h % window != 0 || grid_w % window != 0) {
        throw ShapeError("build_shift_mask: grid not divisible by window");
    }
    const Index nwh = grid_h / window, nww = grid_w / window;
    const Index t = window * window;
    Buffer values = Buffer::Zero(nwh * nww * t * t);
    if (shift != 0) {
        // Region ids over the rolled grid: [0, n-M), [n-M, n-s), [n-s, n) per axis.
        auto region = [&](Index v, Index n) { return v < n - window ? 0 : (v < n - shift ? 1 : 2); };
        std::vector<Index> ids(static_cast<std::size_t>(grid_h * grid_w));
        for (Index r = 0; r < grid_h; ++r) {
            for (Index c = 0; c < grid_w; ++c) {
                ids[static_cast<std::size_t>(r * grid_w + c)] = region(r, grid_h) * 3 + region(c, grid_w);
            }
        }
        for (Index wr = 0; wr < nwh; ++wr) {
            for (Index wc = 0; wc < nww; ++wc) {
                const Index win = wr * nww + wc;
                for (Index i = 0; i < t; ++i) {
                    const Index ri = (wr * window + i / window) * grid_w + wc * window + i % window;
                    for (Index j = 0; j < t; ++j) {
                        const Index rj = (wr * window + j / window) * grid_w + wc * window + j % window;
                        if (ids[static_cast<std::size_t>(ri)] != ids[static_cast<std::size_t>(rj)]) {
                            values[(win * t + i) * t + j] = kMaskValue;
                        }
                    }
                }
            }
        }
    }
    return AttentionMask{Tensor({nwh * nww, t, t}, std::move(values))};
}

MsaResult msa_with_weights(const Tensor& windows, const MsaParams& params, const AttentionMask* mask) {
    if (windows.ndim() != 3) throw ShapeError("msa: expected [nW, T, C], got " + to_string(windows.shape()));
    const Index nw = windows.dim(0), t = windows.dim(1), c = windows.dim(2);
    const Index heads = params.heads;
    if (heads <= 0 || c % heads != 0) {
        throw ShapeError("msa: channels " + std::to_string(c) + " not divisible by heads " + std::to_string(heads));
    }
    const Index d = c / heads;
    const Tensor bias = concat({params.q_bias, Tensor::zeros({c}), params.v_bias}, 0);
    Tensor qkv = reshape(linear(windows, params.qkv_weight, bias), {nw, t, 3, heads, d});
    qkv = permute(qkv, {2, 0, 3, 1, 4});  // [3, nW, heads, T, d]
    auto part = [&](Index i) { return reshape(slice(qkv, 0, i, 1), {nw, heads, t, d}); };
    const Tensor q = part(0), k = part(1), v = part(2);

    Tensor scores = scale(matmul(q, transpose_last2(k)), Real(1) / std::sqrt(static_cast<Real>(d)));
    if (mask != nullptr) {
        const Tensor& m = mask->values;
        if (m.shape() != Shape{nw, t, t}) {
            throw ShapeError("msa: mask " + to_string(m.shape()) + " does not match windows " +
                             to_string(windows.shape()));
        }
        Buffer expanded(nw * heads * t * t);
        for (Index w = 0; w < nw; ++w) {
            for (Index h = 0; h < heads; ++h) {
                expanded.segment((w * heads + h) * t * t, t * t) = m.data().segment(w * t * t, t * t);
            }
        }
        scores = add(scores, Tensor({nw, heads, t, t}, std::move(expanded)));
    }
    Tensor weights = softmax(scores);
    Tensor out = permute(matmul(weights, v), {0, 2, 1, 3});  // [nW, T, heads, d]
    out = linear(reshape(out, {nw, t, c}), params.proj);
    return {out, weights};
}

Tensor msa(const Tensor& windows, const MsaParams& params, const AttentionMask* mask) {
    return msa_with_weights(windows, params, mask).output;
}

MsaParams make_msa(ParamStore& store, const std::string& prefix, Index channels, Index heads, std::mt19937_64& rng) {
    const double std_attn = 1.0 / std::sqrt(static_cast<double>(channels));
    MsaParams p;
    p.qkv_weight = store.add(prefix + ".qkv.weight", normal_tensor({3 * channels, channels}, std_attn, rng));
    p.q_bias = store.add(prefix + ".q_bias", Tensor::zeros({channels}));
    p.v_bias = store.add(prefix + ".v_bias", Tensor::zeros({channels}));
    p.proj = make_linear(store, prefix + ".proj", channels, channels, rng, std_attn);
    p.heads = heads;
    return p;
}

SwinBlockParams make_swin_block(ParamStore& store, const std::string& prefix, Index channels, Index heads,
                                std::mt19937_64& rng) {
    if (heads <= 0 || channels % heads != 0) {
        throw std::invalid_argument("swin block: channels " + std::to_string(channels) + " not divisible by heads " +
                                    std::to_string(heads));
    }
    SwinBlockParams p;
    p.ln1 = make_layer_norm(store, prefix + ".ln1", channels);
    p.attn = make_msa(store, prefix + ".attn", channels, heads, rng);
    p.ln2 = make_layer_norm(store, prefix + ".ln2", channels);
    p.mlp_in = make_linear(store, prefix + ".mlp_in", channels, 4 * channels, rng);
    p.mlp_out = make_linear(store, prefix + ".mlp_out", 4 * channels, channels, rng,
                            1.0 / std::sqrt(static_cast<double>(4 * channels)));
    return p;
}

Tensor mlp(const Tensor& tokens, const SwinBlockParams& params) {
    return linear(gelu(linear(tokens, params.mlp_in)), params.mlp_out);
}

TokenGrid swin_block(const TokenGrid& input, const SwinBlockParams& params, Index window, bool shifted) {
    input.validate();
    const Index m = effective_window(input.grid_h, input.grid_w, window);
    const Index shift = shifted ? m / 2 : 0;

    TokenGrid normed{layer_norm(input.tokens, params.ln1), input.grid_h, input.grid_w, input.patch_size};
    if (shift != 0) normed = cyclic_shift(normed, -shift, -shift);
    const Tensor windows = window_partition(normed, m);
    Tensor attended;
    if (shift != 0) {
        const AttentionMask mask = build_shift_mask(input.grid_h, input.grid_w, m, shift);
        attended = msa(windows, params.attn, &mask);
    } else {
        attended = msa(windows, params.attn);
    }
    TokenGrid merged = window_merge(attended, input.grid_h, input.grid_w, m, input.patch_size);
    if (shift != 0) merged = inverse_cyclic_shift(merged, -shift, -shift);

    const Tensor hidden = add(merged.tokens, input.tokens);
    const Tensor out = add(mlp(layer_norm(hidden, params.ln2), params), hidden);
    return TokenGrid{out, input.grid_h, input.grid_w, input.patch_size};
}

TokenGrid swin_block_pair(const TokenGrid& input, const SwinBlockParams& regular, const SwinBlockParams& shifted,
                          Index window) {
    return swin_block(swin_block(input, regular, window, false), shifted, window, true);
}

TokenGrid patch_merging(const TokenGrid& input, const LinearParams& proj) {
    input.validate();
    if (input.grid_h % 2 != 0 || input.grid_w % 2 != 0) throw ShapeError("patch_merging: grid dims must be even");
    const Index c = input.channels();
    const Index oh = input.grid_h / 2, ow = input.grid_w / 2;
    std::vector<Index> index;
    index.reserve(static_cast<std::size_t>(input.tokens.size()));
    // Neighbor order (0,0), (1,0), (0,1), (1,1).
    const Index dr[4] = {0, 1, 0, 1};
    const Index dc[4] = {0, 0, 1, 1};
    for (Index r = 0; r < oh; ++r) {
        for (Index col = 0; col < ow; ++col) {
            for (int n = 0; n < 4; ++n) {
                const Index token = (2 * r + dr[n]) * input.grid_w + 2 * col + dc[n];
                for (Index ch = 0; ch < c; ++ch) index.push_back(token * c + ch);
            }
        }
    }
    const Tensor merged = gather(input.tokens, std::move(index), {oh * ow, 4 * c});
    return TokenGrid{linear(merged, proj), oh, ow, input.patch_size * 2};
}

}  // namespace hmte
