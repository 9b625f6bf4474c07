#pragma once

#include "hmte/params.hpp"

#include <optional>
#include <random>
#include <string>

namespace hmte {

/// Patch tokens in raster order together with the grid they came from.
struct TokenGrid {
    Tensor tokens;  // [L, C], L = grid_h * grid_w
    Index grid_h = 0;
    Index grid_w = 0;
    Index patch_size = 4;

    Index length() const { return grid_h * grid_w; }
    Index channels() const { return tokens.dim(1); }
    void validate() const;
};

/// Additive attention bias per window: 0 for same-region pairs, kMaskValue otherwise.
struct AttentionMask {
    Tensor values;  // [num_windows, M*M, M*M]
};

inline constexpr Real kMaskValue = Real(-1e9);

/// Flattens every non-overlapping patch x patch block (raster order inside the patch)
/// and projects it with `proj` ([C, patch*patch]).
TokenGrid patch_embed(const Tensor& image, const LinearParams& proj, Index patch_size = 4);

/// [L, C] -> [num_windows, M*M, C]; windows and slots in raster order.
Tensor window_partition(const TokenGrid& grid, Index window);
TokenGrid window_merge(const Tensor& windows, Index grid_h, Index grid_w, Index window, Index patch_size = 4);

/// Toroidal roll: out(r, c) = in((r - shift_h) mod H, (c - shift_w) mod W).
TokenGrid cyclic_shift(const TokenGrid& grid, Index shift_h, Index shift_w);
TokenGrid inverse_cyclic_shift(const TokenGrid& grid, Index shift_h, Index shift_w);

/// Mask for attention over a grid rolled by (-shift, -shift). shift == 0 gives all zeros.
AttentionMask build_shift_mask(Index grid_h, Index grid_w, Index window, Index shift);

/// Largest usable window: min(M, grid_h, grid_w).
Index effective_window(Index grid_h, Index grid_w, Index window);

/// The key projection has no bias: it shifts every logit of a query row equally,
/// so softmax cancels it and its gradient is identically zero.
struct MsaParams {
    Tensor qkv_weight;  // [3C, C], rows ordered q, k, v
    Tensor q_bias;      // [C]
    Tensor v_bias;      // [C]
    LinearParams proj;  // C -> C
    Index heads = 1;
};

struct MsaResult {
    Tensor output;   // [nW, T, C]
    Tensor weights;  // [nW, heads, T, T], post-softmax
};

MsaResult msa_with_weights(const Tensor& windows, const MsaParams& params, const AttentionMask* mask = nullptr);
Tensor msa(const Tensor& windows, const MsaParams& params, const AttentionMask* mask = nullptr);

struct SwinBlockParams {
    LayerNormParams ln1;
    MsaParams attn;
    LayerNormParams ln2;
    LinearParams mlp_in;   // C -> 4C
    LinearParams mlp_out;  // 4C -> C
};

MsaParams make_msa(ParamStore& store, const std::string& prefix, Index channels, Index heads, std::mt19937_64& rng);
SwinBlockParams make_swin_block(ParamStore& store, const std::string& prefix, Index channels, Index heads,
                                std::mt19937_64& rng);

/// dense(C->4C), GELU, dense(4C->C) applied per token.
Tensor mlp(const Tensor& tokens, const SwinBlockParams& params);

/// Pre-norm residual attention then pre-norm residual MLP. With `shifted`, attention
/// runs on the grid rolled by -M/2 under the shift mask and is rolled back.
TokenGrid swin_block(const TokenGrid& input, const SwinBlockParams& params, Index window, bool shifted);

/// Regular-window block followed by shifted-window block.
TokenGrid swin_block_pair(const TokenGrid& input, const SwinBlockParams& regular, const SwinBlockParams& shifted,
                          Index window);

/// Concatenates each 2x2 token neighborhood (4C) and projects it to 2C.
TokenGrid patch_merging(const TokenGrid& input, const LinearParams& proj);

}  // namespace hmte
