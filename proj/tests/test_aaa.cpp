#include "hmte/aaa.hpp"
#include "hmte/ops.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace hmte;

namespace {

AaaParams zero_aaa(Index c, Index extent = 9) {
    AaaParams p;
    p.extent = extent;
    p.row = Conv2dParams{Tensor::zeros({c, c, 1, extent}), Tensor::zeros({c})};
    p.col = Conv2dParams{Tensor::zeros({c, c, extent, 1}), Tensor::zeros({c})};
    return p;
}

Tensor roll(const Tensor& m, Index dr, Index dc) {
    const Index C = m.dim(0), H = m.dim(1), W = m.dim(2);
    Buffer out(m.size());
    for (Index c = 0; c < C; ++c)
        for (Index r = 0; r < H; ++r)
            for (Index q = 0; q < W; ++q)
                out[(c * H + (r + dr) % H) * W + (q + dc) % W] = m[(c * H + r) * W + q];
    return Tensor(m.shape(), out);
}

TokenGrid random_grid(Index h, Index w, Index c, std::mt19937_64& rng) {
    return TokenGrid{oracle::random_tensor({h * w, c}, rng, -2, 2), h, w, 4};
}

}  // namespace

TEST(MergePatches, LayoutRoundTripAndConstants) {
    const TokenGrid g{Tensor::from({4, 2}, {0, 10, 1, 11, 2, 12, 3, 13}), 2, 2, 4};
    const Tensor m = merge_patches(g);
    ASSERT_EQ(m.shape(), (Shape{2, 2, 2}));
    for (Index i = 0; i < 4; ++i) {
        EXPECT_EQ(m[i], i);
        EXPECT_EQ(m[4 + i], 10 + i);
    }
    std::mt19937_64 rng(60);
    for (Index h = 1; h <= 8; ++h)
        for (Index w = 1; w <= 8; ++w) {
            const TokenGrid x = random_grid(h, w, 3, rng);
            const TokenGrid back = split_patches(merge_patches(x));
            EXPECT_EQ(back.grid_h, h);
            EXPECT_EQ(back.grid_w, w);
            EXPECT_TRUE((back.tokens.data() == x.tokens.data()).all());
        }
    const Tensor flat = merge_patches(TokenGrid{Tensor::full({6, 2}, 0.7), 2, 3, 4});
    EXPECT_TRUE((flat.data() == 0.7).all());
}

TEST(PooledContext, HandValuesAndShape) {
    const Tensor b = pooled_context(Tensor::from({1, 2, 2}, {1, 2, 3, 4}));
    EXPECT_TRUE((b.data() == 6.5).all());
    const Tensor c = pooled_context(Tensor::full({2, 4, 6}, -1.5));
    EXPECT_EQ(c.shape(), (Shape{2, 4, 6}));
    EXPECT_TRUE((c.data() == -3.0).all());
}

TEST(PooledContext, EvenTranslationCovariance) {
    std::mt19937_64 rng(61);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor y = oracle::random_tensor({2, 8, 6}, rng);
        const Tensor lhs = pooled_context(roll(y, 2, 2));
        const Tensor rhs = roll(pooled_context(y), 2, 2);
        EXPECT_LE(oracle::max_abs_diff(lhs, rhs), 1e-12);
    }
}

TEST(AnatomyGate, ZeroKernelsGiveHalfAndOutputIsHalfY) {
    std::mt19937_64 rng(62);
    const AaaParams p = zero_aaa(4);
    for (int trial = 0; trial < 10; ++trial) {
        const TokenGrid g = random_grid(4, 6, 4, rng);
        const AaaTrace t = aaa_trace(g, p);
        EXPECT_TRUE((t.gate.data() == 0.5).all());
        EXPECT_LE((t.o.data() - 0.5 * t.y.data()).abs().maxCoeff(), 1e-12);
    }
    AaaParams frozen;
    frozen.frozen = true;
    const TokenGrid g = random_grid(4, 4, 3, rng);
    EXPECT_LE((aaa_trace(g, frozen).o.data() - 0.5 * merge_patches(g).data()).abs().maxCoeff(), 1e-12);
}

TEST(AnatomyGate, GatedOutputNeverGrowsOrFlipsSign) {
    std::mt19937_64 rng(63);
    ParamStore store;
    const AaaParams p = make_aaa(store, "g", 4, 9, rng);
    for (int trial = 0; trial < 100; ++trial) {
        const TokenGrid g = random_grid(2 * oracle::pick(rng, 1, 4), 2 * oracle::pick(rng, 1, 4), 4, rng);
        const AaaTrace t = aaa_trace(g, p);
        EXPECT_TRUE((t.gate.data() > 0).all() && (t.gate.data() < 1).all());
        EXPECT_TRUE((t.o.data().abs() <= t.y.data().abs()).all());
        EXPECT_TRUE((t.o.data() * t.y.data() >= 0).all());
        const TokenGrid out = aaa_forward(g, p);
        EXPECT_EQ(out.tokens.shape(), g.tokens.shape());
    }
    EXPECT_THROW(aaa_forward(random_grid(3, 4, 4, rng), p), ShapeError);
}

TEST(AnatomyGate, CenterTapsGiveSigmoidOfTwiceScaledInput) {
    std::mt19937_64 rng(64);
    const Index c = 3;
    const double w = 0.37;
    AaaParams p = zero_aaa(c);
    for (Index ch = 0; ch < c; ++ch) {
        p.row.weight.mutable_data()[(ch * c + ch) * 9 + 4] = w;
        p.col.weight.mutable_data()[(ch * c + ch) * 9 + 4] = w;
    }
    const Tensor b = oracle::random_tensor({c, 6, 8}, rng, -3, 3);
    const Tensor gate = anatomy_gate(b, p);
    for (Index i = 0; i < b.size(); ++i) EXPECT_NEAR(gate[i], 1 / (1 + std::exp(-2 * w * b[i])), 1e-12);
}

TEST(AnatomyGate, ImpulseSpreadsAlongRowAndColumnOnly) {
    std::mt19937_64 rng(65);
    ParamStore store;
    AaaParams p = make_aaa(store, "g", 1, 9, rng);
    const Index n = 16, r0 = 7, c0 = 9;
    Buffer impulse = Buffer::Zero(n * n);
    impulse[r0 * n + c0] = 1;
    const Tensor gate = anatomy_gate(Tensor({1, n, n}, impulse), p);
    for (Index r = 0; r < n; ++r)
        for (Index c = 0; c < n; ++c) {
            const bool on_row = r == r0 && std::abs(c - c0) <= 4;
            const bool on_col = c == c0 && std::abs(r - r0) <= 4;
            if (!on_row && !on_col) {
                EXPECT_EQ(gate[r * n + c], 0.5) << r << "," << c;
            }
        }
    EXPECT_NE(gate[r0 * n + c0 - 4], 0.5);
    EXPECT_NE(gate[(r0 + 4) * n + c0], 0.5);
}
