#pragma once

#include <vector>

#include "core/tensor.hpp"

namespace vsod {

// Mean binary cross entropy with predictions clamped to [1e-7, 1-1e-7].
// Labels must be strictly binary.
Tensor bce_loss(const Tensor& pred, const Tensor& label);

// 1 - mean structural similarity over uniform 11x11 sliding windows
// (valid positions, stride 1), C1 = 0.01^2, C2 = 0.03^2. Images smaller
// than the window shrink it with a warning.
Tensor ssim_loss(const Tensor& pred, const Tensor& label);

// 1 - soft intersection over union, per sample, averaged over the batch.
Tensor iou_loss(const Tensor& pred, const Tensor& label);

struct LossBreakdown {
    double bce = 0.0, ssim = 0.0, iou = 0.0, motion = 0.0, total = 0.0;
};

struct ClipLoss {
    Tensor total;          // scalar, differentiable
    LossBreakdown values;
};

// Composite objective: saliency terms averaged over the clip's frames plus
// the motion BCE averaged over pairs. Stage 1 omits the motion term.
ClipLoss total_loss(const std::vector<Tensor>& saliency_preds,
                    const std::vector<Tensor>& saliency_labels,
                    const std::vector<Tensor>& motion_preds,
                    const std::vector<Tensor>& motion_labels, int stage);

} // namespace vsod
