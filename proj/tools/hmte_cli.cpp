#include "hmte/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    using namespace hmte;
    CLI::App app{"Hybrid multitask CNN-transformer for lesion classification and segmentation"};
    app.require_subcommand(1);

    GenSynthArgs gen;
    std::uint64_t gen_seed = 0;
    auto* gen_cmd = app.add_subcommand("gen-synth", "Write a synthetic dataset and manifest");
    gen_cmd->add_option("--n", gen.n, "Number of images (even)")->capture_default_str();
    gen_cmd->add_option("--size", gen.size, "Image side in pixels")->capture_default_str();
    auto* gen_seed_opt = gen_cmd->add_option("--seed", gen_seed, "Seed (falls back to HMTE_SEED)");
    gen_cmd->add_option("--out", gen.out, "Output directory")->required();

    TrainArgs train;
    std::uint64_t train_seed = 0;
    std::string train_manifest;
    auto* train_cmd = app.add_subcommand("train", "Train from a key=value config");
    train_cmd->add_option("--config", train.config, "Config file")->required();
    train_cmd->add_option("--out", train.out, "Run directory")->required();
    auto* train_seed_opt = train_cmd->add_option("--seed", train_seed, "Seed override");
    auto* train_manifest_opt = train_cmd->add_option("--manifest", train_manifest, "Manifest override");
    train_cmd->add_option("--set", train.overrides, "key=value override (repeatable)");

    EvalArgs eval;
    std::string eval_out, eval_split_file;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
    eval_cmd->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
    eval_cmd->add_option("--manifest", eval.manifest, "Manifest")->required();
    eval_cmd->add_option("--split", eval.split, "train, val or test")->capture_default_str();
    auto* eval_out_opt = eval_cmd->add_option("--out", eval_out, "Run directory for reports");
    auto* eval_split_opt = eval_cmd->add_option("--split-file", eval_split_file, "Per-image split listing");

    PredictArgs predict;
    auto* predict_cmd = app.add_subcommand("predict", "Classify and segment one image");
    predict_cmd->add_option("--checkpoint", predict.checkpoint, "Checkpoint file")->required();
    predict_cmd->add_option("--image", predict.image, "8-bit PGM image")->required();
    predict_cmd->add_option("--out", predict.out, "Output directory")->required();

    GradcheckArgs grad;
    std::uint64_t grad_seed = 0;
    auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference audit of every differentiable component");
    grad_cmd->add_option("--size", grad.size, "Full-model input side")->capture_default_str();
    auto* grad_seed_opt = grad_cmd->add_option("--seed", grad_seed, "Seed (falls back to HMTE_SEED)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    if (*gen_cmd) {
        if (*gen_seed_opt) gen.seed = gen_seed;
        return cmd_gen_synth(gen, std::cout, std::cerr);
    }
    if (*train_cmd) {
        if (*train_seed_opt) train.seed = train_seed;
        if (*train_manifest_opt) train.manifest = train_manifest;
        return cmd_train(train, std::cout, std::cerr);
    }
    if (*eval_cmd) {
        if (*eval_out_opt) eval.out = eval_out;
        if (*eval_split_opt) eval.split_file = eval_split_file;
        return cmd_eval(eval, std::cout, std::cerr);
    }
    if (*predict_cmd) return cmd_predict(predict, std::cout, std::cerr);
    if (grad_seed_opt->count() > 0) grad.seed = grad_seed;
    return cmd_gradcheck(grad, std::cout, std::cerr);
}
