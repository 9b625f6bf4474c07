#include "hmte/cnn_encoder.hpp"

#include "hmte/ops.hpp"

namespace hmte {

void MTEstanBlockConfig::validate() const {
    if (in_channels <= 0 || out_channels <= 0) throw std::invalid_argument("MT-ESTAN block: channels must be positive");
    if (out_channels % 2 != 0) {
        throw std::invalid_argument("MT-ESTAN block: out_channels must be even, got " + std::to_string(out_channels));
    }
    if (rowcol_extent % 2 == 0 || rowcol_extent < 1) {
        throw std::invalid_argument("MT-ESTAN block: rowcol_extent must be odd, got " + std::to_string(rowcol_extent));
    }
    if (square_kernel < 1) throw std::invalid_argument("MT-ESTAN block: square_kernel must be positive");
}

MTEstanBlockParams make_mt_estan_block(ParamStore& store, const std::string& prefix, const MTEstanBlockConfig& config,
                                       std::mt19937_64& rng) {
    config.validate();
    const Index half = config.out_channels / 2;
    const Index k = config.square_kernel;
    const Index r = config.rowcol_extent;
    MTEstanBlockParams p;
    p.config = config;
    for (std::size_t i = 0; i < 4; ++i) {
        const Index cin = i == 0 ? config.in_channels : half;
        p.square[i] = make_conv2d(store, prefix + ".square" + std::to_string(i), cin, half, k, k, rng, kGeluGain);
    }
    for (std::size_t i = 0; i < 4; ++i) {
        const Index cin = i == 0 ? config.in_channels : half;
        const bool row = i % 2 == 0;
        p.rowcol[i] = make_conv2d(store, prefix + (row ? ".row" : ".col") + std::to_string(i / 2), cin, half,
                                  row ? 1 : r, row ? r : 1, rng, kGeluGain);
    }
    p.fuse = make_conv2d(store, prefix + ".fuse", config.out_channels, config.out_channels, 1, 1, rng, 1.0);
    return p;
}

Tensor square_branch(const Tensor& x, const MTEstanBlockParams& params) {
    Tensor a = x;
    for (const auto& conv : params.square) a = gelu(conv2d(a, conv));
    return a;
}

Tensor rowcol_branch(const Tensor& x, const MTEstanBlockParams& params) {
    Tensor b = x;
    for (const auto& conv : params.rowcol) b = gelu(conv2d(b, conv));
    return b;
}

Tensor mt_estan_block(const Tensor& x, const MTEstanBlockParams& params) {
    if (x.ndim() != 3 || x.dim(0) != params.config.in_channels) {
        throw ShapeError("MT-ESTAN block: input " + to_string(x.shape()) + " does not have " +
                         std::to_string(params.config.in_channels) + " channels");
    }
    Tensor fused = conv2d(concat({square_branch(x, params), rowcol_branch(x, params)}, 0), params.fuse);
    return params.config.pool ? max_pool2d(fused) : fused;
}

void CnnEncoderConfig::validate() const {
    for (std::size_t i = 1; i < channels.size(); ++i) {
        if (channels[i] < channels[i - 1]) throw std::invalid_argument("CNN encoder: channel plan must be nondecreasing");
    }
}

ProbeBatch calibrate_mt_estan_block(MTEstanBlockParams& params, const ProbeBatch& probe) {
    NoGradGuard no_grad;
    const auto act = [](const Tensor& t) { return gelu(t); };
    ProbeBatch a = probe;
    for (auto& conv : params.square) a = map_probe(calibrate_conv(conv, a), act);
    ProbeBatch b = probe;
    for (auto& conv : params.rowcol) b = map_probe(calibrate_conv(conv, b), act);
    ProbeBatch cat;
    for (std::size_t i = 0; i < probe.size(); ++i) cat.push_back(concat({a[i], b[i]}, 0));
    ProbeBatch fused = calibrate_conv(params.fuse, cat);
    if (!params.config.pool) return fused;
    return map_probe(fused, [](const Tensor& t) { return max_pool2d(t); });
}

CnnEncoderParams make_cnn_encoder(ParamStore& store, const std::string& prefix, const CnnEncoderConfig& config,
                                  std::mt19937_64& rng, std::vector<EncoderFeatures>* probe_features) {
    config.validate();
    CnnEncoderParams p;
    p.config = config;
    Index in = config.in_channels;
    for (std::size_t b = 0; b < 5; ++b) {
        MTEstanBlockConfig bc;
        bc.in_channels = in;
        bc.out_channels = config.channels[b];
        bc.rowcol_extent = config.rowcol_extent;
        bc.pool = b < 4;
        p.blocks[b] = make_mt_estan_block(store, prefix + ".block" + std::to_string(b + 1), bc, rng);
        in = config.channels[b];
    }
    if (config.input_size > 0) {
        std::mt19937_64 probe_rng(rng());
        ProbeBatch x;
        for (std::size_t i = 0; i < kProbeCount; ++i) {
            x.push_back(uniform_tensor({config.in_channels, config.input_size, config.input_size}, 0.0, 1.0, probe_rng));
        }
        std::vector<EncoderFeatures> f(kProbeCount);
        for (std::size_t b = 0; b < 5; ++b) {
            x = calibrate_mt_estan_block(p.blocks[b], x);
            for (std::size_t i = 0; i < kProbeCount; ++i) f[i].blocks[b] = x[i];
        }
        if (probe_features != nullptr) *probe_features = std::move(f);
    }
    return p;
}

EncoderFeatures cnn_encode(const Tensor& image, const CnnEncoderParams& params) {
    if (image.ndim() != 3 || image.dim(1) != image.dim(2)) {
        throw ShapeError("cnn_encode: expected a square (C,H,W) image, got " + to_string(image.shape()));
    }
    EncoderFeatures f;
    Tensor x = image;
    for (std::size_t b = 0; b < 5; ++b) {
        x = mt_estan_block(x, params.blocks[b]);
        f.blocks[b] = x;
    }
    return f;
}

}  // namespace hmte
