#pragma once

#include "hmte/params.hpp"

#include <array>
#include <random>
#include <string>
#include <vector>

namespace hmte {

struct MTEstanBlockConfig {
    Index in_channels = 1;
    /// Split evenly between the square and row-column branches before fusion.
    Index out_channels = 16;
    Index square_kernel = 3;
    Index rowcol_extent = 9;
    bool pool = true;

    void validate() const;
};

struct MTEstanBlockParams {
    MTEstanBlockConfig config;
    std::array<Conv2dParams, 4> square;  // four k x k convs
    std::array<Conv2dParams, 4> rowcol;  // (1,k), (k,1), (1,k), (k,1)
    Conv2dParams fuse;                   // 1x1 over the concatenated branches
};

MTEstanBlockParams make_mt_estan_block(ParamStore& store, const std::string& prefix, const MTEstanBlockConfig& config,
                                       std::mt19937_64& rng);

/// Square branch and row-column branch in parallel (GELU after every conv), channel
/// concat, 1x1 fusion, then 2x2 max pooling when configured.
Tensor mt_estan_block(const Tensor& x, const MTEstanBlockParams& params);

/// Exposed for tests: the row-column branch alone.
Tensor rowcol_branch(const Tensor& x, const MTEstanBlockParams& params);
Tensor square_branch(const Tensor& x, const MTEstanBlockParams& params);

struct CnnEncoderConfig {
    Index in_channels = 1;
    std::array<Index, 5> channels{16, 32, 64, 128, 128};
    Index rowcol_extent = 9;
    /// When positive, a fixed batch of random probe images of this side calibrates every
    /// conv to unit output RMS after the random draw. 0 keeps the plain fan-in scaling.
    Index input_size = 0;

    void validate() const;
};

struct CnnEncoderParams {
    CnnEncoderConfig config;
    std::array<MTEstanBlockParams, 5> blocks;
};

/// Per-block outputs; blocks 1-4 are pooled, block 5 keeps the block-4 resolution.
struct EncoderFeatures {
    std::array<Tensor, 5> blocks;
};

/// Probe images used for calibration.
inline constexpr std::size_t kProbeCount = 8;

/// `probe_features` receives the calibrated encoder's features of each probe (when calibrating).
CnnEncoderParams make_cnn_encoder(ParamStore& store, const std::string& prefix, const CnnEncoderConfig& config,
                                  std::mt19937_64& rng, std::vector<EncoderFeatures>* probe_features = nullptr);

/// Unit-RMS calibration of every conv in the block, in forward order; returns the block outputs.
ProbeBatch calibrate_mt_estan_block(MTEstanBlockParams& params, const ProbeBatch& probe);

/// Rejects non-square input; padding to square is the data pipeline's job.
EncoderFeatures cnn_encode(const Tensor& image, const CnnEncoderParams& params);

}  // namespace hmte
