#include "core/losses.hpp"

#include <algorithm>
#include <iostream>
#include <stdexcept>

#include "core/ops.hpp"

namespace vsod {

namespace {

constexpr float kBceEps = 1e-7f;
constexpr float kIouEps = 1e-8f;
constexpr float kSsimC1 = 0.01f * 0.01f;
constexpr float kSsimC2 = 0.03f * 0.03f;

void check_binary(const Tensor& label, const char* op) {
    for (float v : label.data()) {
        if (v != 0.0f && v != 1.0f) {
            throw std::invalid_argument(std::string(op) + ": label must be strictly binary");
        }
    }
}

// Sum over the spatial extent, [B,C,H,W] -> [B,C,1,1].
Tensor sum_hw(const Tensor& x) {
    return mul_scalar(global_avg_pool(x), float(x.dim(2)) * float(x.dim(3)));
}

} // namespace

Tensor bce_loss(const Tensor& pred, const Tensor& label) {
    if (pred.shape() != label.shape()) {
        throw std::invalid_argument("bce_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                                    shape_str(label.shape()));
    }
    check_binary(label, "bce_loss");
    Tensor p = clamp(pred, kBceEps, 1.0f - kBceEps);
    Tensor pos = mul(label, log(p));
    Tensor negt = mul(add_scalar(neg(label), 1.0f), log(add_scalar(neg(p), 1.0f)));
    return neg(mean_all(add(pos, negt)));
}

Tensor ssim_loss(const Tensor& pred, const Tensor& label) {
    if (pred.shape() != label.shape()) {
        throw std::invalid_argument("ssim_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                                    shape_str(label.shape()));
    }
    if (pred.rank() != 4 || pred.dim(1) != 1) {
        throw std::invalid_argument("ssim_loss: expected [B,1,H,W], got " + shape_str(pred.shape()));
    }
    const int H = pred.dim(2), W = pred.dim(3);
    const int k = std::min({11, H, W});
    if (k < 11) {
        static bool warned = false;
        if (!warned) {
            std::cerr << "warning: image smaller than 11x11, SSIM window shrunk to " << std::min(11, H)
                      << "x" << std::min(11, W) << "\n";
            warned = true;
        }
    }
    const int kh = std::min(11, H), kw = std::min(11, W);
    Tensor window = Tensor::full({1, 1, kh, kw}, 1.0f / (float(kh) * float(kw)));

    Tensor mu_x = conv2d(pred, window, Tensor(), 1, 0);
    Tensor mu_y = conv2d(label, window, Tensor(), 1, 0);
    Tensor mu_xx = conv2d(mul(pred, pred), window, Tensor(), 1, 0);
    Tensor mu_yy = conv2d(mul(label, label), window, Tensor(), 1, 0);
    Tensor mu_xy = conv2d(mul(pred, label), window, Tensor(), 1, 0);

    Tensor var_x = sub(mu_xx, mul(mu_x, mu_x));
    Tensor var_y = sub(mu_yy, mul(mu_y, mu_y));
    Tensor cov = sub(mu_xy, mul(mu_x, mu_y));

    Tensor num = mul(add_scalar(mul_scalar(mul(mu_x, mu_y), 2.0f), kSsimC1),
                     add_scalar(mul_scalar(cov, 2.0f), kSsimC2));
    Tensor den = mul(add_scalar(add(mul(mu_x, mu_x), mul(mu_y, mu_y)), kSsimC1),
                     add_scalar(add(var_x, var_y), kSsimC2));
    return add_scalar(neg(mean_all(div(num, den))), 1.0f);
}

Tensor iou_loss(const Tensor& pred, const Tensor& label) {
    if (pred.shape() != label.shape()) {
        throw std::invalid_argument("iou_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                                    shape_str(label.shape()));
    }
    Tensor inter = sum_hw(mul(pred, label));
    Tensor uni = sum_hw(sub(add(pred, label), mul(pred, label)));
    Tensor ratio = div(inter, add_scalar(uni, kIouEps));
    return mean_all(add_scalar(neg(ratio), 1.0f));
}

ClipLoss total_loss(const std::vector<Tensor>& saliency_preds,
                    const std::vector<Tensor>& saliency_labels,
                    const std::vector<Tensor>& motion_preds,
                    const std::vector<Tensor>& motion_labels, int stage) {
    if (stage != 1 && stage != 2) throw std::invalid_argument("total_loss: stage must be 1 or 2");
    if (saliency_preds.empty() || saliency_preds.size() != saliency_labels.size()) {
        throw std::invalid_argument("total_loss: prediction/label count mismatch");
    }

    const float inv_frames = 1.0f / float(saliency_preds.size());
    Tensor bce_sum, ssim_sum, iou_sum;
    for (std::size_t i = 0; i < saliency_preds.size(); ++i) {
        Tensor b = bce_loss(saliency_preds[i], saliency_labels[i]);
        Tensor s = ssim_loss(saliency_preds[i], saliency_labels[i]);
        Tensor u = iou_loss(saliency_preds[i], saliency_labels[i]);
        bce_sum = i == 0 ? b : add(bce_sum, b);
        ssim_sum = i == 0 ? s : add(ssim_sum, s);
        iou_sum = i == 0 ? u : add(iou_sum, u);
    }
    Tensor bce_avg = mul_scalar(bce_sum, inv_frames);
    Tensor ssim_avg = mul_scalar(ssim_sum, inv_frames);
    Tensor iou_avg = mul_scalar(iou_sum, inv_frames);

    Tensor motion_avg = Tensor::scalar(0.0f);
    if (stage == 2 && !motion_preds.empty()) {
        if (motion_preds.size() != motion_labels.size()) {
            throw std::invalid_argument("total_loss: motion prediction/label count mismatch");
        }
        Tensor m_sum;
        for (std::size_t i = 0; i < motion_preds.size(); ++i) {
            Tensor m = bce_loss(motion_preds[i], motion_labels[i]);
            m_sum = i == 0 ? m : add(m_sum, m);
        }
        motion_avg = mul_scalar(m_sum, 1.0f / float(motion_preds.size()));
    }

    ClipLoss out;
    out.total = add(add(add(bce_avg, ssim_avg), iou_avg), motion_avg);
    out.values.bce = bce_avg.item();
    out.values.ssim = ssim_avg.item();
    out.values.iou = iou_avg.item();
    out.values.motion = motion_avg.item();
    out.values.total = out.total.item();
    return out;
}

} // namespace vsod
