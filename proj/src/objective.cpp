#include "hmte/objective.hpp"

#include "hmte/ops.hpp"

#include <stdexcept>

namespace hmte {

namespace {
void require_binary(const Tensor& t, const char* what) {
    const Buffer& v = t.data();
    if (!((v == Real(0)) || (v == Real(1))).all()) {
        throw std::invalid_argument(std::string(what) + " must contain only 0 and 1");
    }
}
}  // namespace

void LossConfig::validate() const {
    if (!(w1 > 0)) throw std::invalid_argument("w1 must be > 0");
    if (!(alpha > 0 && alpha < 1)) throw std::invalid_argument("alpha must be in (0, 1)");
    if (!(gamma >= 0)) throw std::invalid_argument("gamma must be >= 0");
    if (!(dice_smooth > 0)) throw std::invalid_argument("dice_smooth must be > 0");
    if (!(prob_clip > 0 && prob_clip < Real(0.5))) throw std::invalid_argument("prob_clip must be in (0, 0.5)");
}

Tensor focal_loss(const Tensor& probs, const Tensor& labels, const LossConfig& config) {
    if (probs.shape() != labels.shape()) {
        throw ShapeError("focal_loss: probs " + to_string(probs.shape()) + " vs labels " + to_string(labels.shape()));
    }
    require_binary(labels, "focal_loss labels");
    const Tensor p = clamp(probs, config.prob_clip, Real(1) - config.prob_clip);
    const Tensor q = Real(1) - p;
    const Tensor pos = mul(labels * config.alpha, mul(pow_scalar(q, config.gamma), log(p)));
    Tensor negative;
    if (config.printed_focal_variant) {
        negative = mul(p, log(q)) * (Real(1) - config.alpha);
    } else {
        const Tensor not_t = Tensor(labels.shape(), Real(1) - labels.data());
        negative = mul(not_t * (Real(1) - config.alpha), mul(pow_scalar(p, config.gamma), log(q)));
    }
    return -mean(add(pos, negative));
}

Tensor dice_loss(const Tensor& pred, const Tensor& target, Real smooth) {
    if (pred.shape() != target.shape()) {
        throw ShapeError("dice_loss: prediction " + to_string(pred.shape()) + " vs target " +
                         to_string(target.shape()));
    }
    const Tensor numerator = sum(mul(pred, target)) * Real(2) + smooth;
    const Tensor denominator = add(sum(pred), sum(target)) + smooth;
    return Real(1) - div(numerator, denominator);
}

LossBreakdown composite_loss(const Tensor& class_probs, const std::vector<Tensor>& mask_probs,
                             const BatchTargets& targets, const LossConfig& config) {
    config.validate();
    if (mask_probs.size() != targets.masks.size() || static_cast<Index>(mask_probs.size()) != class_probs.size()) {
        throw ShapeError("composite_loss: batch sizes of class outputs, mask outputs and targets differ");
    }
    if (mask_probs.empty()) throw std::invalid_argument("composite_loss: empty batch");
    LossBreakdown out;
    out.focal = focal_loss(class_probs, targets.labels, config);
    Tensor dice_sum;
    for (std::size_t i = 0; i < mask_probs.size(); ++i) {
        require_binary(targets.masks[i], "mask target");
        const Tensor d = dice_loss(mask_probs[i], targets.masks[i], config.dice_smooth);
        dice_sum = i == 0 ? d : add(dice_sum, d);
    }
    out.dice = dice_sum * (Real(1) / static_cast<Real>(mask_probs.size()));
    out.total = add(out.focal * config.w1, out.dice);
    return out;
}

}  // namespace hmte
