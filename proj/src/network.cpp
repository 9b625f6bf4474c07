#include "hmte/network.hpp"

#include "hmte/ops.hpp"

#include <cmath>

namespace hmte {

void HybridConfig::validate() const {
    if (image_size % 16 != 0 || image_size % (patch_size * window) != 0) {
        throw std::invalid_argument("image_size must be divisible by 16 and by patch_size*window, got " +
                                    std::to_string(image_size));
    }
    if (embed_dim % heads != 0) throw std::invalid_argument("embed_dim must be divisible by heads");
    if (!(dropout >= 0 && dropout < 1)) throw std::invalid_argument("dropout must be in [0, 1)");
    for (Index c : cnn_channels) {
        if (c <= 0 || c % 2 != 0) throw std::invalid_argument("cnn channels must be positive and even");
    }
}

UpBlockParams make_up_block(ParamStore& store, const std::string& prefix, Index in_channels, Index skip_channels,
                            Index out_channels, std::mt19937_64& rng) {
    UpBlockParams p;
    for (std::size_t i = 0; i < 3; ++i) {
        const Index cin = i == 0 ? in_channels + skip_channels : out_channels;
        p.convs[i] = make_conv2d(store, prefix + ".conv" + std::to_string(i), cin, out_channels, 3, 3, rng, kGeluGain);
    }
    return p;
}

Tensor up_block(const Tensor& x, const Tensor& skip, const UpBlockParams& params, int block_index) {
    if (x.ndim() != 3 || skip.ndim() != 3 || skip.dim(1) != x.dim(1) || skip.dim(2) != x.dim(2)) {
        throw ShapeError("up block " + std::to_string(block_index) + ": skip " + to_string(skip.shape()) +
                         " does not match input " + to_string(x.shape()));
    }
    Tensor h = concat({x, skip}, 0);
    for (const auto& conv : params.convs) h = gelu(conv2d(h, conv));
    return upsample_nearest(h);
}

ProbeBatch calibrate_up_block(UpBlockParams& params, const ProbeBatch& x, const ProbeBatch& skip) {
    NoGradGuard no_grad;
    ProbeBatch h;
    for (std::size_t i = 0; i < x.size(); ++i) h.push_back(concat({x[i], skip[i]}, 0));
    for (auto& conv : params.convs) h = map_probe(calibrate_conv(conv, h), [](const Tensor& t) { return gelu(t); });
    return map_probe(h, [](const Tensor& t) { return upsample_nearest(t); });
}

Tensor fuse_features(const Tensor& cnn_deep, const TokenGrid& tokens) {
    const Tensor pooled = mean_axis(reshape(cnn_deep, {cnn_deep.dim(0), cnn_deep.dim(1) * cnn_deep.dim(2)}), 1);
    return concat({pooled, mean_axis(tokens.tokens, 0)}, 0);
}

HybridModel::HybridModel(const HybridConfig& config, ParamStore& store, std::mt19937_64& rng) : config_(config) {
    config_.validate();

    CnnEncoderConfig cc;
    cc.channels = config_.cnn_channels;
    cc.rowcol_extent = config_.rowcol_extent;
    cc.input_size = config_.image_size;
    std::vector<EncoderFeatures> probe;
    cnn_ = make_cnn_encoder(store, "cnn", cc, rng, &probe);

    const Index pp = config_.patch_size * config_.patch_size;
    embed_ = make_linear(store, "aaa.embed", pp, config_.embed_dim, rng, 1.0 / std::sqrt(static_cast<double>(pp)));
    Index dim = config_.embed_dim;
    Index heads = config_.heads;
    for (std::size_t s = 0; s < 2; ++s) {
        const std::string prefix = "aaa.stage" + std::to_string(s + 1);
        stages_[s].regular = make_swin_block(store, prefix + ".wmsa", dim, heads, rng);
        stages_[s].shifted = make_swin_block(store, prefix + ".swmsa", dim, heads, rng);
        stages_[s].gate = make_aaa(store, prefix + ".gate", dim, config_.rowcol_extent, rng, config_.aaa_frozen);
        if (s == 0) {
            merge_ = make_linear(store, "aaa.merge", 4 * dim, 2 * dim, rng,
                                 1.0 / std::sqrt(static_cast<double>(4 * dim)));
            dim *= 2;
            heads *= 2;
        }
    }

    // Up Block k consumes CNN block (5-k) as its skip.
    Index in = config_.cnn_channels[4];
    for (std::size_t k = 0; k < 4; ++k) {
        const Index skip = config_.cnn_channels[3 - k];
        up_[k] = make_up_block(store, "dec.up" + std::to_string(k + 1), in, skip, config_.decoder_channels[k], rng);
        in = config_.decoder_channels[k];
    }
    {
        const auto level = [&](std::size_t b) {
            ProbeBatch out;
            for (const auto& f : probe) out.push_back(f.blocks[b]);
            return out;
        };
        ProbeBatch x = level(4);
        for (std::size_t k = 0; k < 4; ++k) x = calibrate_up_block(up_[k], x, level(3 - k));
    }
    head_ = make_conv2d(store, "dec.head", in, 1, 1, 1, rng);

    Index width = config_.cnn_channels[4] + dim;
    for (std::size_t i = 0; i < 3; ++i) {
        hidden_[i] = make_linear(store, "cls.dense" + std::to_string(i + 1), width, config_.classifier_widths[i], rng);
        width = config_.classifier_widths[i];
    }
    out_ = make_linear(store, "cls.out", width, 1, rng, 1.0 / std::sqrt(static_cast<double>(width)));
}

void HybridModel::check_input(const Tensor& image) const {
    if (image.ndim() != 3 || image.dim(0) != 1 || image.dim(1) != image.dim(2)) {
        throw ShapeError("model input must be a square (1,H,W) image, got " + to_string(image.shape()));
    }
    if (image.dim(1) % 16 != 0 || image.dim(1) % (config_.patch_size * config_.window) != 0) {
        throw ShapeError("model input size " + std::to_string(image.dim(1)) +
                         " must be divisible by 16 and by patch_size*window");
    }
}

EncoderFeatures HybridModel::encode_cnn(const Tensor& image) const { return cnn_encode(image, cnn_); }

TokenGrid HybridModel::encode_aaa(const Tensor& image) const {
    TokenGrid t = patch_embed(image, embed_, config_.patch_size);
    for (std::size_t s = 0; s < 2; ++s) {
        t = swin_block_pair(t, stages_[s].regular, stages_[s].shifted, config_.window);
        t = aaa_forward(t, stages_[s].gate);
        if (s == 0) t = patch_merging(t, merge_);
    }
    return t;
}

Tensor HybridModel::decode(const EncoderFeatures& features) const {
    Tensor x = features.blocks[4];
    for (std::size_t k = 0; k < 4; ++k) x = up_block(x, features.blocks[3 - k], up_[k], static_cast<int>(k + 1));
    return sigmoid(conv2d(x, head_));
}

Tensor HybridModel::classify(const Tensor& cnn_deep, const TokenGrid& tokens, bool training,
                             std::mt19937_64& rng) const {
    Tensor h = fuse_features(cnn_deep, tokens);
    for (const auto& layer : hidden_) h = gelu(linear(h, layer));
    h = dropout(h, config_.dropout, training, rng);
    return sigmoid(linear(h, out_));
}

MultitaskOutput HybridModel::forward(const Tensor& image, bool training, std::mt19937_64& rng) const {
    check_input(image);
    const EncoderFeatures features = encode_cnn(image);
    const TokenGrid tokens = encode_aaa(image);
    return {classify(features.blocks[4], tokens, training, rng), decode(features)};
}

}  // namespace hmte
