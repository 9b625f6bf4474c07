#include "hmte/trainer.hpp"

#include "hmte/objective.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace hmte {

namespace {

BatchTargets make_targets(std::span<const Sample> batch) {
    BatchTargets t;
    Buffer labels(static_cast<Index>(batch.size()));
    for (std::size_t i = 0; i < batch.size(); ++i) {
        labels[static_cast<Index>(i)] = static_cast<Real>(batch[i].label);
        t.masks.push_back(to_tensor(batch[i].mask));
    }
    t.labels = Tensor({static_cast<Index>(batch.size())}, std::move(labels));
    return t;
}

LossValues values_of(const LossBreakdown& b) {
    return {static_cast<double>(b.total.item()), static_cast<double>(b.focal.item()),
            static_cast<double>(b.dice.item())};
}

}  // namespace

Evaluation evaluate(const HybridModel& model, std::span<const Sample> samples, const LossConfig& loss) {
    if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
    NoGradGuard no_grad;
    std::mt19937_64 unused(0);
    Evaluation out;
    std::vector<int> labels;
    std::vector<Tensor> class_parts;
    std::vector<Tensor> masks;
    double dsc = 0.0, ji = 0.0;
    for (const Sample& s : samples) {
        const MultitaskOutput o = model.forward(to_tensor(s.image), false, unused);
        out.class_probs.push_back(static_cast<double>(o.class_prob.item()));
        labels.push_back(s.label);
        class_parts.push_back(o.class_prob);
        masks.push_back(o.mask_prob);
        const Buffer binary = (o.mask_prob.data() >= Real(0.5)).cast<Real>();
        const SegmentationScores seg = segmentation_metrics(std::span<const Real>(binary.data(), binary.size()),
                                                            std::span<const Real>(s.mask.data(), s.mask.size()));
        dsc += seg.dsc;
        ji += seg.ji;
    }
    const auto n = static_cast<double>(samples.size());
    out.report.counts = confusion(out.class_probs, labels, out.report.threshold);
    out.report.classification = classification_metrics(out.report.counts);
    out.report.auc = auc(out.class_probs, labels);
    out.report.dsc = dsc / n;
    out.report.ji = ji / n;
    out.loss = values_of(composite_loss(concat(class_parts, 0), masks, make_targets(samples), loss));
    return out;
}

Trainer::Trainer(RunConfig config)
    : config_(std::move(config)),
      adam_(AdamOptions{config_.lr, 0.9, 0.999, 1e-8}),
      data_rng_(config_.seed ^ 0xD1B54A32D192ED03ULL),
      dropout_rng_(config_.seed ^ 0x8CB92BA72F3D8DD7ULL) {
    config_.validate();
    std::mt19937_64 init_rng(config_.seed);
    model_ = std::make_unique<HybridModel>(config_.model, store_, init_rng);
}

LossValues Trainer::step(std::span<const Sample> batch, Index batch_index) {
    if (batch.empty()) throw std::invalid_argument("Trainer::step: empty batch");
    store_.clear_grads();
    LossValues values;
    {
        Tape tape;
        std::vector<Tensor> class_parts;
        std::vector<Tensor> masks;
        for (const Sample& s : batch) {
            const MultitaskOutput o = model_->forward(to_tensor(s.image), true, dropout_rng_);
            class_parts.push_back(o.class_prob);
            masks.push_back(o.mask_prob);
        }
        const LossBreakdown loss = composite_loss(concat(class_parts, 0), masks, make_targets(batch), config_.loss);
        values = values_of(loss);
        if (!std::isfinite(values.total)) {
            throw std::runtime_error("non-finite training loss at batch " + std::to_string(batch_index));
        }
        tape.backward(loss.total);
    }
    adam_step(store_, adam_);
    return values;
}

TrainResult Trainer::fit(std::span<const Sample> train, std::span<const Sample> val, const TrainOptions& options) {
    if (train.empty()) throw std::invalid_argument("Trainer::fit: empty training set");
    TrainResult result;
    std::vector<Buffer> best;
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Index global_batch = 0;
    const auto batch = static_cast<std::size_t>(config_.batch);

    for (Index epoch = 1; epoch <= config_.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::shuffle(order.begin(), order.end(), data_rng_);
        LossValues acc;
        Index steps = 0;
        bool stop = false;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            std::vector<Sample> items;
            for (std::size_t k = start; k < std::min(start + batch, order.size()); ++k) {
                items.push_back(augment(train[order[k]], config_.augment, data_rng_));
            }
            const LossValues v = step(items, global_batch++);
            result.steps.push_back(v);
            acc.total += v.total;
            acc.focal += v.focal;
            acc.dice += v.dice;
            ++steps;
            if (options.max_steps > 0 && global_batch >= options.max_steps) {
                stop = true;
                break;
            }
        }
        EpochLog log;
        log.epoch = epoch;
        log.train = {acc.total / static_cast<double>(steps), acc.focal / static_cast<double>(steps),
                     acc.dice / static_cast<double>(steps)};
        if (!val.empty()) {
            const Evaluation e = evaluate(*model_, val, config_.loss);
            log.val = e.loss;
            log.val_acc = e.report.classification.acc;
            log.val_dsc = e.report.dsc;
        }
        log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.epochs.push_back(log);
        if (options.on_epoch) options.on_epoch(log);
        if (!val.empty() && (result.best_epoch < 0 || log.val.total < result.best_val)) {
            result.best_epoch = epoch;
            result.best_val = log.val.total;
            best.clear();
            for (const auto& p : store_.entries()) best.push_back(p.value.data());
            if (options.on_best) options.on_best(log);
        }
        if (stop) break;
    }
    if (!best.empty()) {
        for (std::size_t i = 0; i < best.size(); ++i) {
            Tensor t = store_.entries()[i].value;
            t.mutable_data() = best[i];
        }
    }
    return result;
}

}  // namespace hmte
