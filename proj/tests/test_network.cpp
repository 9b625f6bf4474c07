#include "hmte/network.hpp"
#include "hmte/objective.hpp"
#include "hmte/ops.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace hmte;

namespace {

HybridConfig small_config() {
    HybridConfig c;
    c.image_size = 32;
    c.cnn_channels = {4, 8, 8, 8, 8};
    c.decoder_channels = {8, 8, 4, 4};
    c.embed_dim = 8;
    c.heads = 2;
    c.classifier_widths = {16, 8, 8};
    return c;
}

struct Built {
    ParamStore store;
    std::unique_ptr<HybridModel> model;
};

std::unique_ptr<Built> build(const HybridConfig& cfg, std::uint64_t seed) {
    auto b = std::make_unique<Built>();
    std::mt19937_64 rng(seed);
    b->model = std::make_unique<HybridModel>(cfg, b->store, rng);
    return b;
}

}  // namespace

TEST(Network, OutputShapesAndRanges) {
    const auto b = build(small_config(), 90);
    std::mt19937_64 rng(91);
    const Tensor x = oracle::random_tensor({1, 32, 32}, rng, 0, 1);
    const MultitaskOutput out = b->model->forward(x, false, rng);
    EXPECT_EQ(out.class_prob.shape(), (Shape{1}));
    EXPECT_EQ(out.mask_prob.shape(), (Shape{1, 32, 32}));
    EXPECT_TRUE((out.mask_prob.data() >= 0).all() && (out.mask_prob.data() <= 1).all());
    EXPECT_GE(out.class_prob.item(), 0.0);
    EXPECT_LE(out.class_prob.item(), 1.0);
    EXPECT_THROW(b->model->forward(Tensor::zeros({1, 32, 16}), false, rng), ShapeError);
    EXPECT_THROW(b->model->forward(Tensor::zeros({1, 24, 24}), false, rng), ShapeError);
}

TEST(Network, DefaultWidthsAt64) {
    HybridConfig cfg;
    const auto b = build(cfg, 92);
    std::mt19937_64 rng(93);
    const MultitaskOutput out = b->model->forward(oracle::random_tensor({1, 64, 64}, rng, 0, 1), false, rng);
    EXPECT_EQ(out.mask_prob.shape(), (Shape{1, 64, 64}));
    EXPECT_TRUE(out.mask_prob.data().allFinite());
}

TEST(Network, InferenceIsDeterministicAndParamCountStable) {
    const auto a = build(small_config(), 94);
    const auto b = build(small_config(), 94);
    EXPECT_EQ(a->store.size(), b->store.size());
    EXPECT_EQ(a->store.element_count(), b->store.element_count());
    for (std::size_t i = 0; i < a->store.size(); ++i) {
        EXPECT_EQ(a->store.entries()[i].name, b->store.entries()[i].name);
        EXPECT_TRUE((a->store.entries()[i].value.data() == b->store.entries()[i].value.data()).all());
    }
    std::mt19937_64 rng(95);
    const Tensor x = oracle::random_tensor({1, 32, 32}, rng, 0, 1);
    const MultitaskOutput o1 = a->model->forward(x, false, rng);
    const MultitaskOutput o2 = a->model->forward(x, false, rng);
    EXPECT_EQ(o1.class_prob.item(), o2.class_prob.item());
    EXPECT_TRUE((o1.mask_prob.data() == o2.mask_prob.data()).all());

    HybridConfig frozen = small_config();
    frozen.aaa_frozen = true;
    const auto f = build(frozen, 94);
    EXPECT_EQ(f->store.size() + 8, a->store.size());  // two gates, row and col, weight and bias
}

TEST(Network, GradientReachesBothEncoders) {
    const auto b = build(small_config(), 96);
    std::mt19937_64 rng(97);
    const Tensor x = oracle::random_tensor({1, 32, 32}, rng, 0, 1);
    Tensor mask = Tensor::zeros({1, 32, 32});
    for (Index r = 10; r < 20; ++r)
        for (Index c = 8; c < 22; ++c) mask.mutable_data()[r * 32 + c] = 1;
    Tape tape;
    const MultitaskOutput out = b->model->forward(x, true, rng);
    const LossBreakdown loss =
        composite_loss(out.class_prob, {out.mask_prob}, BatchTargets{Tensor::from({1}, {1}), {mask}}, LossConfig{});
    tape.backward(loss.total);
    double cnn = 0, aaa = 0;
    for (const auto& p : b->store.entries()) {
        if (!p.value.has_grad()) continue;
        const double g = p.value.grad().abs().maxCoeff();
        if (p.name.rfind("cnn.", 0) == 0) cnn = std::max(cnn, g);
        if (p.name.rfind("aaa.", 0) == 0) aaa = std::max(aaa, g);
    }
    EXPECT_GT(cnn, 0.0);
    EXPECT_GT(aaa, 0.0);
}

TEST(Network, EverySkipIsLive) {
    const auto b = build(small_config(), 98);
    std::mt19937_64 rng(99);
    const Tensor x = oracle::random_tensor({1, 32, 32}, rng, 0, 1);
    const EncoderFeatures f = b->model->encode_cnn(x);
    const Tensor base = b->model->decode(f);
    for (std::size_t k = 0; k < 4; ++k) {
        EncoderFeatures cut = f;
        cut.blocks[k] = Tensor::zeros(f.blocks[k].shape());
        EXPECT_GT((b->model->decode(cut).data() - base.data()).abs().maxCoeff(), 0.0) << "skip " << k + 1;
    }
}

TEST(UpBlock, ShapesZeroWeightsAndMismatch) {
    ParamStore store;
    std::mt19937_64 rng(100);
    UpBlockParams p = make_up_block(store, "u", 8, 6, 5, rng);
    const Tensor x = oracle::random_tensor({8, 4, 4}, rng), skip = oracle::random_tensor({6, 4, 4}, rng);
    EXPECT_EQ(up_block(x, skip, p).shape(), (Shape{5, 8, 8}));
    for (auto& c : p.convs) c.weight.mutable_data().setZero();
    EXPECT_TRUE((up_block(x, skip, p).data() == 0).all());
    try {
        up_block(x, oracle::random_tensor({6, 8, 8}, rng), p, 3);
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("up block 3"), std::string::npos);
    }
}

TEST(FuseFeatures, MeansOfConstantsAndTokenPermutationInvariance) {
    const Tensor deep = Tensor::full({3, 2, 2}, 1.5);
    const TokenGrid tokens{Tensor::full({4, 2}, -0.5), 2, 2, 4};
    const Tensor f = fuse_features(deep, tokens);
    ASSERT_EQ(f.shape(), (Shape{5}));
    for (Index i = 0; i < 3; ++i) EXPECT_EQ(f[i], 1.5);
    for (Index i = 3; i < 5; ++i) EXPECT_EQ(f[i], -0.5);

    std::mt19937_64 rng(101);
    const Tensor t = oracle::random_tensor({4, 2}, rng);
    const Tensor perm = concat({slice(t, 0, 2, 2), slice(t, 0, 0, 2)}, 0);
    const Tensor a = fuse_features(deep, TokenGrid{t, 2, 2, 4});
    const Tensor b = fuse_features(deep, TokenGrid{perm, 2, 2, 4});
    EXPECT_LE(oracle::max_abs_diff(a, b), 1e-15);
}

TEST(Network, FrozenGatesLeaveOtherInitializationUnchanged) {
    HybridConfig frozen = small_config();
    frozen.aaa_frozen = true;
    const auto a = build(small_config(), 102);
    const auto f = build(frozen, 102);
    for (const auto& p : f->store.entries()) {
        ASSERT_TRUE(a->store.contains(p.name)) << p.name;
        EXPECT_TRUE((a->store.get(p.name).data() == p.value.data()).all()) << p.name;
    }
}
