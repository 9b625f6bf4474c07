#pragma once

#include "hmte/params.hpp"
#include "hmte/swin.hpp"

#include <random>
#include <string>

namespace hmte {

/// Row (1,k) and column (k,1) convolutions producing the anatomy gate. A frozen gate
/// has no kernels and evaluates to 0.5 everywhere.
struct AaaParams {
    Conv2dParams row;
    Conv2dParams col;
    Index extent = 9;
    bool frozen = false;
};

AaaParams make_aaa(ParamStore& store, const std::string& prefix, Index channels, Index extent, std::mt19937_64& rng,
                   bool frozen = false);

/// Token at raster index r*W + c lands at spatial (r, c): [L, C] -> [C, H, W].
Tensor merge_patches(const TokenGrid& grid);
/// Exact inverse of merge_patches.
TokenGrid split_patches(const Tensor& map, Index patch_size = 4);

/// upsample(maxpool(y) + avgpool(y)).
Tensor pooled_context(const Tensor& y);

/// sigmoid(row(B) + col(B)), both same-padded.
Tensor anatomy_gate(const Tensor& pooled, const AaaParams& params);

struct AaaTrace {
    Tensor y;     // merged map
    Tensor b;     // pooled context
    Tensor gate;  // in (0, 1)
    Tensor o;     // y * gate
};

AaaTrace aaa_trace(const TokenGrid& input, const AaaParams& params);
TokenGrid aaa_forward(const TokenGrid& input, const AaaParams& params);

}  // namespace hmte
