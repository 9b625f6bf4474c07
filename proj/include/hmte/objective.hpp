#pragma once

#include "hmte/tensor.hpp"

#include <vector>

namespace hmte {

struct LossConfig {
    Real w1 = 3;
    Real alpha = Real(0.5);
    Real gamma = 2;
    Real dice_smooth = 1;
    Real prob_clip = Real(1e-7);
    /// Uses the focal variant whose negative term lacks the (1 - t) indicator and the
    /// p^gamma factor. Diverges for confident correct positives; kept for comparison runs.
    bool printed_focal_variant = false;

    void validate() const;
};

struct BatchTargets {
    Tensor labels;              // [N], values in {0, 1}
    std::vector<Tensor> masks;  // N x [1, H, W], values in {0, 1}
};

/// Mean binary focal loss over the batch:
///   -1/N sum[ a t (1-p)^g log p + (1-a)(1-t) p^g log(1-p) ],  p clipped to [clip, 1-clip].
Tensor focal_loss(const Tensor& probs, const Tensor& labels, const LossConfig& config);

/// 1 - (2 sum(p t) + s) / (sum p + sum t + s).
Tensor dice_loss(const Tensor& pred, const Tensor& target, Real smooth);

struct LossBreakdown {
    Tensor total;
    Tensor focal;
    Tensor dice;  // mean over the batch
};

/// w1 * focal + mean dice.
LossBreakdown composite_loss(const Tensor& class_probs, const std::vector<Tensor>& mask_probs,
                             const BatchTargets& targets, const LossConfig& config);

}  // namespace hmte
