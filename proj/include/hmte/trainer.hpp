#pragma once

#include "hmte/adam.hpp"
#include "hmte/config.hpp"
#include "hmte/metrics.hpp"
#include "hmte/network.hpp"

#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace hmte {

struct LossValues {
    double total = 0.0;
    double focal = 0.0;
    double dice = 0.0;
};

struct Evaluation {
    MetricsReport report;
    LossValues loss;
    std::vector<double> class_probs;
};

/// Inference over `samples` with recording off and dropout disabled.
Evaluation evaluate(const HybridModel& model, std::span<const Sample> samples, const LossConfig& loss);

struct EpochLog {
    Index epoch = 0;
    LossValues train;
    LossValues val;
    std::optional<Ratio> val_acc;
    double val_dsc = 0.0;
    double seconds = 0.0;
};

struct TrainOptions {
    /// Stop after this many optimizer steps in total (0 = no limit).
    Index max_steps = 0;
    /// Called once per finished epoch.
    std::function<void(const EpochLog&)> on_epoch;
    /// Called whenever the validation composite loss improves.
    std::function<void(const EpochLog&)> on_best;
};

struct TrainResult {
    std::vector<LossValues> steps;
    std::vector<EpochLog> epochs;
    Index best_epoch = -1;
    double best_val = 0.0;
};

/// Owns the parameters, the model and the three seeded streams of one run:
/// initialization, data order/augmentation, and dropout.
class Trainer {
public:
    explicit Trainer(RunConfig config);

    const RunConfig& config() const { return config_; }
    const HybridModel& model() const { return *model_; }
    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }

    /// Forward, backward and one Adam update on `batch`. Throws on a non-finite loss.
    LossValues step(std::span<const Sample> batch, Index batch_index);

    /// Epoch loop with per-epoch shuffling and augmentation of `train`. When `val` is
    /// nonempty the parameters with the lowest validation composite loss are restored
    /// at the end.
    TrainResult fit(std::span<const Sample> train, std::span<const Sample> val, const TrainOptions& options = {});

private:
    RunConfig config_;
    ParamStore store_;
    std::unique_ptr<HybridModel> model_;
    AdamState adam_;
    std::mt19937_64 data_rng_;
    std::mt19937_64 dropout_rng_;
};

}  // namespace hmte
