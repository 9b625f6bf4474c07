#include "hmte/gradcheck_suite.hpp"

#include "hmte/aaa.hpp"
#include "hmte/cnn_encoder.hpp"
#include "hmte/network.hpp"
#include "hmte/objective.hpp"
#include "hmte/swin.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>

namespace hmte {

namespace {

struct Case {
    std::string name;
    std::function<Tensor()> f;
    std::vector<Tensor> wrt;
    bool sample_coords = false;
};

/// sum(out * r) with a fixed random r, so every output element carries weight.
Tensor project(const Tensor& out, const Tensor& r) { return sum(mul(out, r)); }

Tensor rand_like(const Shape& shape, std::mt19937_64& rng) { return uniform_tensor(shape, -1.0, 1.0, rng); }

std::vector<Case> build_cases(const GradCheckSuiteOptions& opt, std::vector<ParamStore>& stores) {
    std::mt19937_64 rng(opt.seed);
    std::vector<Case> cases;
    auto input = [&](const Shape& s) { return rand_like(s, rng).set_requires_grad(true); };
    auto weights = [&](const Shape& s) { return rand_like(s, rng); };

    {
        Tensor a = input({3, 4}), b = input({3, 4}), r = weights({3, 4});
        cases.push_back({"add_sub_mul", [=] { return project(mul(add(a, b), sub(a, b)), r); }, {a, b}});
    }
    {
        Tensor a = input({3, 4}), r = weights({3, 4});
        Tensor b = uniform_tensor({3, 4}, 0.5, 2.0, rng).set_requires_grad(true);
        cases.push_back({"div_log_pow", [=] { return project(add(div(a, b), mul(log(b), pow_scalar(b, 1.5))), r); },
                         {a, b}});
    }
    {
        Tensor x = input({2, 5}), r = weights({2, 5});
        cases.push_back({"gelu", [=] { return project(gelu(x), r); }, {x}});
    }
    {
        Tensor x = input({2, 5}), r = weights({2, 5});
        cases.push_back({"sigmoid", [=] { return project(sigmoid(x * Real(3)), r); }, {x}});
    }
    {
        Tensor x = input({3, 6}), r = weights({3, 6});
        cases.push_back({"softmax", [=] { return project(softmax(x * Real(2)), r); }, {x}});
    }
    {
        Tensor x = input({4, 6}), g = input({6}), b = input({6}), r = weights({4, 6});
        cases.push_back({"layer_norm", [=] { return project(layer_norm(x, g, b), r); }, {x, g, b}});
    }
    {
        Tensor x = input({2, 3, 4}), w = input({5, 4}), b = input({5}), r = weights({2, 3, 5});
        cases.push_back({"linear", [=] { return project(linear(x, w, b), r); }, {x, w, b}});
    }
    {
        Tensor x = input({4}), w = input({3, 4}), b = input({3}), r = weights({3});
        cases.push_back({"dense", [=] { return project(dense(x, w, b), r); }, {x, w, b}});
    }
    {
        Tensor a = input({2, 3, 4}), b = input({2, 4, 5}), r = weights({2, 3, 5});
        cases.push_back({"matmul", [=] { return project(matmul(a, b), r); }, {a, b}});
    }
    {
        Tensor a = input({2, 3, 4}), b = input({2, 1, 4}), r = weights({4, 2, 2});
        cases.push_back({"layout",
                         [=] {
                             const Tensor c = concat({a, b}, 1);             // [2,4,4]
                             const Tensor p = permute(c, {2, 0, 1});          // [4,2,4]
                             const Tensor s = slice(p, 2, 1, 2);              // [4,2,2]
                             return project(reshape(transpose_last2(s), {4, 2, 2}), r);
                         },
                         {a, b}});
    }
    {
        Tensor x = input({2, 5, 6}), k = input({3, 2, 3, 3}), b = input({3}), r = weights({3, 5, 6});
        cases.push_back({"conv2d_same", [=] { return project(conv2d(x, k, b, Padding::Same), r); }, {x, k, b}});
    }
    {
        Tensor x = input({1, 6, 7}), k = input({2, 1, 2, 3}), b = input({2}), r = weights({2, 3, 3});
        cases.push_back({"conv2d_valid_stride",
                         [=] { return project(conv2d(x, k, b, Padding::Valid, Stride{2, 2}), r); }, {x, k, b}});
    }
    {
        Tensor x = input({2, 5, 6}), r = weights({2, 3, 3});
        cases.push_back({"max_pool2d", [=] { return project(max_pool2d(x), r); }, {x}});
    }
    {
        Tensor x = input({2, 5, 6}), r = weights({2, 3, 3});
        cases.push_back({"avg_pool2d", [=] { return project(avg_pool2d(x), r); }, {x}});
    }
    {
        Tensor x = input({2, 3, 2}), r = weights({2, 6, 4});
        cases.push_back({"upsample_nearest", [=] { return project(upsample_nearest(x), r); }, {x}});
    }
    {
        Tensor x = input({4, 5}), r = weights({4, 5});
        cases.push_back({"dropout_train",
                         [=] {
                             std::mt19937_64 local(17);
                             return project(dropout(x, Real(0.5), true, local), r);
                         },
                         {x}});
    }
    {
        Tensor x = input({3, 4}), r = weights({3});
        cases.push_back({"reductions", [=] { return add(project(sum_axis(x, 1), r), mean(mul(x, x))); }, {x}});
    }

    // Blocks.
    {
        ParamStore& store = stores.emplace_back();
        MTEstanBlockConfig cfg{2, 4, 3, 5, true};
        const MTEstanBlockParams p = make_mt_estan_block(store, "blk", cfg, rng);
        Tensor x = input({2, 8, 8});
        Tensor r = weights({4, 4, 4});
        std::vector<Tensor> wrt = store.tensors();
        wrt.push_back(x);
        cases.push_back({"mt_estan_block", [=] { return project(mt_estan_block(x, p), r); }, wrt, true});
    }
    {
        ParamStore& store = stores.emplace_back();
        const SwinBlockParams w = make_swin_block(store, "w", 8, 2, rng);
        const SwinBlockParams s = make_swin_block(store, "s", 8, 2, rng);
        Tensor tokens = input({16, 8});
        Tensor r = weights({16, 8});
        std::vector<Tensor> wrt = store.tensors();
        wrt.push_back(tokens);
        cases.push_back({"swin_block_pair",
                         [=] {
                             const TokenGrid g{tokens, 4, 4, 4};
                             return project(swin_block_pair(g, w, s, 4).tokens, r);
                         },
                         wrt, true});
    }
    {
        ParamStore& store = stores.emplace_back();
        const LinearParams m = make_linear(store, "merge", 32, 16, rng);
        Tensor tokens = input({16, 8});
        Tensor r = weights({4, 16});
        std::vector<Tensor> wrt = store.tensors();
        wrt.push_back(tokens);
        cases.push_back({"patch_merging",
                         [=] { return project(patch_merging(TokenGrid{tokens, 4, 4, 4}, m).tokens, r); }, wrt,
                         true});
    }
    {
        ParamStore& store = stores.emplace_back();
        const AaaParams p = make_aaa(store, "aaa", 3, 9, rng);
        Tensor tokens = input({16, 3});
        Tensor r = weights({16, 3});
        std::vector<Tensor> wrt = store.tensors();
        wrt.push_back(tokens);
        cases.push_back({"aaa_forward",
                         [=] { return project(aaa_forward(TokenGrid{tokens, 4, 4, 4}, p).tokens, r); }, wrt, true});
    }
    {
        ParamStore& store = stores.emplace_back();
        const UpBlockParams p = make_up_block(store, "up", 3, 2, 4, rng);
        Tensor x = input({3, 4, 4}), skip = input({2, 4, 4});
        Tensor r = weights({4, 8, 8});
        std::vector<Tensor> wrt = store.tensors();
        wrt.push_back(x);
        wrt.push_back(skip);
        cases.push_back({"up_block", [=] { return project(up_block(x, skip, p, 1), r); }, wrt, true});
    }

    // Losses.
    {
        Tensor p = uniform_tensor({6}, 0.05, 0.95, rng).set_requires_grad(true);
        const Tensor t = Tensor::from({6}, {1, 0, 1, 1, 0, 0});
        cases.push_back({"focal_loss", [=] { return focal_loss(p, t, LossConfig{}); }, {p}});
    }
    {
        Tensor p = uniform_tensor({1, 4, 4}, 0.05, 0.95, rng).set_requires_grad(true);
        Tensor t = Tensor::zeros({1, 4, 4});
        for (Index i : {1, 2, 5, 6, 9}) t.mutable_data()[i] = 1;
        cases.push_back({"dice_loss", [=] { return dice_loss(p, t, Real(1)); }, {p}});
    }
    {
        Tensor c = uniform_tensor({2}, 0.1, 0.9, rng).set_requires_grad(true);
        Tensor m0 = uniform_tensor({1, 3, 3}, 0.1, 0.9, rng).set_requires_grad(true);
        Tensor m1 = uniform_tensor({1, 3, 3}, 0.1, 0.9, rng).set_requires_grad(true);
        BatchTargets targets;
        targets.labels = Tensor::from({2}, {1, 0});
        Tensor t0 = Tensor::zeros({1, 3, 3}), t1 = Tensor::zeros({1, 3, 3});
        t0.mutable_data()[4] = 1;
        t1.mutable_data().head(3).setOnes();
        targets.masks = {t0, t1};
        cases.push_back({"composite_loss", [=] { return composite_loss(c, {m0, m1}, targets, LossConfig{}).total; },
                         {c, m0, m1}});
    }

    // Full model.
    {
        ParamStore& store = stores.emplace_back();
        HybridConfig cfg;
        cfg.image_size = opt.size;
        cfg.cnn_channels = {4, 8, 8, 8, 8};
        cfg.decoder_channels = {8, 8, 4, 4};
        cfg.embed_dim = 8;
        cfg.heads = 2;
        cfg.classifier_widths = {8, 8, 8};
        auto model = std::make_shared<HybridModel>(cfg, store, rng);
        Tensor image = uniform_tensor({1, opt.size, opt.size}, 0.0, 1.0, rng);
        BatchTargets targets;
        targets.labels = Tensor::from({1}, {1});
        Tensor mask = Tensor::zeros({1, opt.size, opt.size});
        for (Index r = opt.size / 4; r < 3 * opt.size / 4; ++r) {
            mask.mutable_data().segment(r * opt.size + opt.size / 4, opt.size / 2).setOnes();
        }
        targets.masks = {mask};
        cases.push_back({"hybrid_model",
                         [=] {
                             std::mt19937_64 unused(0);
                             const MultitaskOutput o = model->forward(image, false, unused);
                             return composite_loss(o.class_prob, {o.mask_prob}, targets, LossConfig{}).total;
                         },
                         store.tensors(), true});
    }
    return cases;
}

}  // namespace

std::vector<GradCheckEntry> run_gradcheck_suite(const GradCheckSuiteOptions& options) {
    std::vector<ParamStore> stores;
    stores.reserve(16);
    std::vector<GradCheckEntry> out;
    for (Case& c : build_cases(options, stores)) {
        GradCheckOptions gc;
        gc.seed = options.seed;
        gc.max_coords_per_tensor = c.sample_coords ? options.coords_per_tensor : 0;
        const auto t0 = std::chrono::steady_clock::now();
        GradCheckEntry e;
        e.component = c.name;
        e.report = grad_check_params(c.f, c.wrt, gc);
        e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const Index attempted = e.report.coords_checked + e.report.kinks_skipped;
        e.pass = e.report.finite && e.report.max_rel_error < options.tolerance &&
                 e.report.kinks_skipped * 10 <= attempted && e.report.coords_checked > 0;
        out.push_back(std::move(e));
    }
    return out;
}

std::string format_gradcheck_table(const std::vector<GradCheckEntry>& entries, double tolerance) {
    std::string s;
    char line[160];
    std::snprintf(line, sizeof(line), "%-22s %14s %8s %6s %8s  %s\n", "component", "max_rel_err", "coords", "kinks",
                  "secs", "status");
    s += line;
    for (const auto& e : entries) {
        std::snprintf(line, sizeof(line), "%-22s %14.3e %8lld %6lld %8.2f  %s\n", e.component.c_str(),
                      e.report.max_rel_error, static_cast<long long>(e.report.coords_checked),
                      static_cast<long long>(e.report.kinks_skipped), e.seconds, e.pass ? "PASS" : "FAIL");
        s += line;
    }
    std::snprintf(line, sizeof(line), "tolerance %.1e; kinks = coordinates excluded for crossing a max/clamp branch\n",
                  tolerance);
    s += line;
    return s;
}

}  // namespace hmte
