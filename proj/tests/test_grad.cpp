#include "hmte/grad_check.hpp"
#include "hmte/objective.hpp"
#include "hmte/ops.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <functional>
#include <string>
#include <vector>

using namespace hmte;

namespace {

struct OpCase {
    std::string name;
    std::function<Tensor(const Tensor&)> f;
    Shape shape;
    double lo = -1.0;
    double hi = 1.0;
};

// Weighted sum so that every output coordinate contributes a distinct slope.
Tensor weighted(const Tensor& y) {
    Buffer w(y.size());
    for (Index i = 0; i < w.size(); ++i) w[i] = 0.3 + 0.1 * static_cast<Real>(i % 7);
    return sum(mul(y, Tensor(y.shape(), w)));
}

std::vector<OpCase> op_cases() {
    std::mt19937_64 rng(40);
    const Tensor k = oracle::random_tensor({2, 2, 3, 3}, rng);
    const Tensor kb = oracle::random_tensor({2}, rng);
    const Tensor w = oracle::random_tensor({3, 4}, rng);
    const Tensor b = oracle::random_tensor({3}, rng);
    const Tensor g = oracle::random_tensor({5}, rng, 0.5, 1.5);
    const Tensor beta = oracle::random_tensor({5}, rng);
    const Tensor other = oracle::random_tensor({2, 3}, rng, 0.5, 2.0);
    return {
        {"gelu", [](const Tensor& x) { return weighted(gelu(x)); }, {2, 3}},
        {"sigmoid", [](const Tensor& x) { return weighted(sigmoid(x)); }, {2, 3}, -4, 4},
        {"softmax", [](const Tensor& x) { return weighted(softmax(x)); }, {2, 4}, -3, 3},
        {"log", [](const Tensor& x) { return weighted(log(x)); }, {2, 3}, 0.5, 2.0},
        {"pow", [](const Tensor& x) { return weighted(pow_scalar(x, 2.5)); }, {2, 3}, 0.5, 2.0},
        {"mul_div", [other](const Tensor& x) { return weighted(div(mul(x, x), other)); }, {2, 3}},
        {"matmul", [w](const Tensor& x) { return weighted(matmul(x, transpose_last2(w))); }, {2, 4}},
        {"linear", [w, b](const Tensor& x) { return weighted(linear(x, w, b)); }, {3, 4}},
        {"dense", [w, b](const Tensor& x) { return weighted(dense(x, w, b)); }, {4}},
        {"layer_norm", [g, beta](const Tensor& x) { return weighted(layer_norm(x, g, beta)); }, {3, 5}},
        {"conv2d", [k, kb](const Tensor& x) { return weighted(conv2d(x, k, kb)); }, {2, 5, 4}},
        {"conv2d_rowcol",
         [k, kb](const Tensor& x) { return weighted(conv2d(x, slice(k, 2, 1, 1), kb)); }, {2, 4, 6}},
        {"avg_pool", [](const Tensor& x) { return weighted(avg_pool2d(x)); }, {2, 5, 4}},
        {"max_pool", [](const Tensor& x) { return weighted(max_pool2d(x)); }, {2, 4, 5}},
        {"upsample", [](const Tensor& x) { return weighted(upsample_nearest(x)); }, {2, 3, 2}},
        {"permute_concat",
         [](const Tensor& x) { return weighted(concat({permute(x, {1, 0}), permute(x, {1, 0})}, 0)); }, {2, 3}},
        {"mean_axis", [](const Tensor& x) { return weighted(mean_axis(x, 0)); }, {3, 4}},
    };
}

}  // namespace

TEST(GradCheck, EveryOpOverTwentySeeds) {
    for (const auto& op : op_cases()) {
        double worst = 0.0;
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            std::mt19937_64 rng(1000 + seed);
            const Tensor x = oracle::random_tensor(op.shape, rng, op.lo, op.hi);
            const GradCheckReport r = grad_check(op.f, x);
            EXPECT_TRUE(r.finite) << op.name;
            EXPECT_GT(r.coords_checked, 0) << op.name;
            worst = std::max(worst, r.max_rel_error);
        }
        EXPECT_LT(worst, 1e-4) << op.name;
    }
}

TEST(GradCheck, SumIsExact) {
    std::mt19937_64 rng(41);
    const Tensor x = oracle::random_tensor({3, 4}, rng);
    const GradCheckReport r = grad_check([](const Tensor& t) { return sum(t); }, x);
    EXPECT_LT(r.max_rel_error, 1e-10);
}

TEST(GradCheck, SigmoidSumIsTight) {
    std::mt19937_64 rng(42);
    const Tensor x = oracle::random_tensor({10}, rng, -3, 3);
    const GradCheckReport r = grad_check([](const Tensor& t) { return sum(sigmoid(t)); }, x);
    EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(GradCheck, LossesPassOnRandomInputs) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        const Tensor labels = Tensor::from({4}, {0, 1, 1, 0});
        const Tensor p = oracle::random_tensor({4}, rng, 0.05, 0.95);
        const GradCheckReport f =
            grad_check([&](const Tensor& t) { return focal_loss(t, labels, LossConfig{}); }, p);
        EXPECT_LT(f.max_rel_error, 1e-4);
        Tensor target = oracle::random_tensor({1, 3, 3}, rng, 0, 1);
        target.mutable_data() = (target.data() > 0.5).cast<Real>();
        const Tensor m = oracle::random_tensor({1, 3, 3}, rng, 0, 1);
        const GradCheckReport d = grad_check([&](const Tensor& t) { return dice_loss(t, target, 1); }, m);
        EXPECT_LT(d.max_rel_error, 1e-4);
    }
}

TEST(GradCheck, DetectsCorruptedBackward) {
    // Doubling whose recorded backward is off by 10%.
    const auto broken = [](const Tensor& x) {
        Buffer out = x.data() * 2;
        return sum(make_op_result(x.shape(), std::move(out), {x},
                                  [x](const Buffer& g) { accumulate_grad(x, Buffer(g * 2.2)); }));
    };
    std::mt19937_64 rng(43);
    const GradCheckReport r = grad_check(broken, oracle::random_tensor({4}, rng));
    EXPECT_GT(r.max_rel_error, 1e-4);
    EXPECT_NEAR(r.max_rel_error, 0.2 / 2.2, 1e-6);
}

TEST(GradCheck, SkipsKinkCoordinates) {
    // Tied max-pool inputs: any perturbation changes the winner.
    const Tensor tied = Tensor::from({1, 2, 2}, {0.5, 0.5, 0.5, 0.5});
    const GradCheckReport r = grad_check([](const Tensor& t) { return sum(max_pool2d(t)); }, tied);
    EXPECT_GT(r.kinks_skipped, 0);
    // clamp at the boundary
    const Tensor edge = Tensor::from({2}, {1.0, 0.3});
    const GradCheckReport c = grad_check([](const Tensor& t) { return sum(clamp(t, 0, 1)); }, edge);
    EXPECT_EQ(c.kinks_skipped, 1);
    EXPECT_LT(c.max_rel_error, 1e-8);
}

TEST(GradCheck, RelativeErrorFloor) {
    EXPECT_EQ(relative_error(0, 0), 0.0);
    EXPECT_DOUBLE_EQ(relative_error(1e-9, 0), 1e-9 / 1e-8);
    EXPECT_DOUBLE_EQ(relative_error(2, 1), 0.5);
}

TEST(GradCheck, ParameterFormSamplesSubset) {
    std::mt19937_64 rng(44);
    const Tensor w = oracle::random_tensor({6, 6}, rng, -1, 1, true);
    const Tensor x = oracle::random_tensor({6}, rng);
    const Tensor b = Tensor::zeros({6}, true);
    GradCheckOptions opts;
    opts.max_coords_per_tensor = 5;
    const GradCheckReport r = grad_check_params([&] { return sum(gelu(dense(x, w, b))); }, {w, b}, opts);
    EXPECT_EQ(r.coords_checked + r.kinks_skipped, 10);
    EXPECT_LT(r.max_rel_error, 1e-4);
}
