#pragma once

#include "hmte/aaa.hpp"
#include "hmte/cnn_encoder.hpp"
#include "hmte/params.hpp"
#include "hmte/swin.hpp"

#include <array>
#include <random>
#include <string>

namespace hmte {

struct HybridConfig {
    Index image_size = 64;
    std::array<Index, 5> cnn_channels{16, 32, 64, 128, 128};
    Index rowcol_extent = 9;
    /// Output widths of the four Up Blocks, deepest first.
    std::array<Index, 4> decoder_channels{128, 64, 32, 16};
    Index patch_size = 4;
    /// Token width of the first transformer stage; the second stage doubles it.
    Index embed_dim = 32;
    Index window = 4;
    /// Heads of the first stage; the second stage doubles it.
    Index heads = 2;
    std::array<Index, 3> classifier_widths{256, 128, 64};
    Real dropout = Real(0.5);
    /// Replaces every anatomy gate by the constant 0.5 (ablation).
    bool aaa_frozen = false;

    void validate() const;
};

struct UpBlockParams {
    std::array<Conv2dParams, 3> convs;
};

UpBlockParams make_up_block(ParamStore& store, const std::string& prefix, Index in_channels, Index skip_channels,
                            Index out_channels, std::mt19937_64& rng);
/// Unit-RMS calibration of the block's convs on probe pairs; returns the block outputs.
ProbeBatch calibrate_up_block(UpBlockParams& params, const ProbeBatch& x, const ProbeBatch& skip);

/// Concatenates `skip` (same resolution as x) on channels, applies three 3x3
/// convolutions with GELU, then upsamples 2x. `block_index` only labels diagnostics.
Tensor up_block(const Tensor& x, const Tensor& skip, const UpBlockParams& params, int block_index = 0);

/// Global average of the deepest CNN map ([C5]) followed by the token mean ([C_t]).
Tensor fuse_features(const Tensor& cnn_deep, const TokenGrid& tokens);

struct MultitaskOutput {
    Tensor class_prob;  // [1]
    Tensor mask_prob;   // [1, H, W]
};

struct AaaStage {
    SwinBlockParams regular;
    SwinBlockParams shifted;
    AaaParams gate;
};

/// Dual-encoder multitask network: MT-ESTAN CNN encoder feeding a four-Up-Block
/// decoder through skips, and a transformer encoder with anatomy-aware gating that
/// joins the CNN bottleneck in the classification head.
class HybridModel {
public:
    HybridModel(const HybridConfig& config, ParamStore& store, std::mt19937_64& rng);

    const HybridConfig& config() const { return config_; }

    MultitaskOutput forward(const Tensor& image, bool training, std::mt19937_64& rng) const;

    EncoderFeatures encode_cnn(const Tensor& image) const;
    TokenGrid encode_aaa(const Tensor& image) const;
    /// Decoder output probabilities [1, H, W] from the CNN features.
    Tensor decode(const EncoderFeatures& features) const;
    /// Probability [1] from the fused encoders.
    Tensor classify(const Tensor& cnn_deep, const TokenGrid& tokens, bool training, std::mt19937_64& rng) const;

private:
    void check_input(const Tensor& image) const;

    HybridConfig config_;
    CnnEncoderParams cnn_;
    LinearParams embed_;
    std::array<AaaStage, 2> stages_;
    LinearParams merge_;
    std::array<UpBlockParams, 4> up_;
    Conv2dParams head_;
    std::array<LinearParams, 3> hidden_;
    LinearParams out_;
};

}  // namespace hmte
