#include "core/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace vsod {

namespace {

constexpr double kEps = 1e-8;

void check_pair(const Image& pred, const Image& gt, const char* op) {
    if (pred.channels != 1 || gt.channels != 1) {
        throw std::invalid_argument(std::string(op) + ": maps must be single-channel");
    }
    if (pred.height != gt.height || pred.width != gt.width) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
    }
}

bool gt_on(float v) { return v >= 0.5f; }

double mean_of(const std::vector<double>& v) {
    double acc = 0.0;
    for (double x : v) acc += x;
    return v.empty() ? 0.0 : acc / double(v.size());
}

// sample statistics over a rectangular block of a map
struct BlockStats {
    double mean_x = 0.0, mean_y = 0.0, var_x = 0.0, var_y = 0.0, cov = 0.0;
    std::size_t n = 0;
};

BlockStats block_stats(const Image& pred, const Image& gt, int y0, int y1, int x0, int x1) {
    BlockStats s;
    double sx = 0.0, sy = 0.0;
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            sx += pred.at(0, y, x);
            sy += gt_on(gt.at(0, y, x)) ? 1.0 : 0.0;
            ++s.n;
        }
    }
    if (s.n == 0) return s;
    s.mean_x = sx / double(s.n);
    s.mean_y = sy / double(s.n);
    if (s.n > 1) {
        double vx = 0.0, vy = 0.0, c = 0.0;
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const double dx = pred.at(0, y, x) - s.mean_x;
                const double dy = (gt_on(gt.at(0, y, x)) ? 1.0 : 0.0) - s.mean_y;
                vx += dx * dx;
                vy += dy * dy;
                c += dx * dy;
            }
        }
        s.var_x = vx / double(s.n - 1);
        s.var_y = vy / double(s.n - 1);
        s.cov = c / double(s.n - 1);
    }
    return s;
}

// object similarity score for one region's values
double object_score(const std::vector<double>& values) {
    if (values.empty()) return 0.0;
    const double m = mean_of(values);
    double var = 0.0;
    if (values.size() > 1) {
        for (double v : values) var += (v - m) * (v - m);
        var /= double(values.size() - 1);
    }
    const double sd = std::sqrt(var);
    return 2.0 * m / (m * m + 1.0 + 2.0 * sd + kEps);
}

} // namespace

double mae(const Image& pred, const Image& gt) {
    check_pair(pred, gt, "mae");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double g = gt_on(gt.data[i]) ? 1.0 : 0.0;
        acc += std::abs(double(pred.data[i]) - g);
    }
    return acc / double(pred.size());
}

double max_f(const std::vector<Image>& preds, const std::vector<Image>& gts, double beta2) {
    if (preds.empty()) throw std::invalid_argument("max_f: empty input list");
    if (preds.size() != gts.size()) throw std::invalid_argument("max_f: prediction/gt count mismatch");

    constexpr int kThresholds = 256;
    std::vector<double> precision(kThresholds, 0.0), recall(kThresholds, 0.0);

    for (std::size_t f = 0; f < preds.size(); ++f) {
        check_pair(preds[f], gts[f], "max_f");
        // histogram over the largest threshold index satisfied by each pixel:
        // pred >= k/255 iff k <= floor(pred*255)
        std::array<long, kThresholds> pos_hist{}, tp_hist{};
        long gt_total = 0;
        const Image& p = preds[f];
        const Image& g = gts[f];
        for (std::size_t i = 0; i < p.size(); ++i) {
            const int k = std::min(kThresholds - 1, int(std::floor(double(p.data[i]) * 255.0)));
            pos_hist[std::size_t(k)]++;
            if (gt_on(g.data[i])) {
                tp_hist[std::size_t(k)]++;
                gt_total++;
            }
        }
        long pos = 0, tp = 0;
        for (int k = kThresholds - 1; k >= 0; --k) {
            pos += pos_hist[std::size_t(k)];
            tp += tp_hist[std::size_t(k)];
            precision[std::size_t(k)] += pos > 0 ? double(tp) / double(pos) : 0.0;
            recall[std::size_t(k)] += gt_total > 0 ? double(tp) / double(gt_total) : 0.0;
        }
    }

    double best = 0.0;
    const double n = double(preds.size());
    for (int k = 0; k < kThresholds; ++k) {
        const double p = precision[std::size_t(k)] / n;
        const double r = recall[std::size_t(k)] / n;
        const double den = beta2 * p + r;
        const double f = den > 0.0 ? (1.0 + beta2) * p * r / den : 0.0;
        best = std::max(best, f);
    }
    return best;
}

double s_measure(const Image& pred, const Image& gt, double alpha) {
    check_pair(pred, gt, "s_measure");
    const int H = pred.height, W = pred.width;
    const std::size_t n = pred.size();

    std::size_t fg = 0;
    for (float v : gt.data) fg += gt_on(v) ? 1 : 0;
    const double mu = double(fg) / double(n);

    double mean_pred = 0.0;
    for (float v : pred.data) mean_pred += v;
    mean_pred /= double(n);

    if (fg == 0) return 1.0 - mean_pred;
    if (fg == n) return mean_pred;

    // object term
    std::vector<double> fg_vals, bg_vals;
    fg_vals.reserve(fg);
    bg_vals.reserve(n - fg);
    for (std::size_t i = 0; i < n; ++i) {
        if (gt_on(gt.data[i])) {
            fg_vals.push_back(pred.data[i]);
        } else {
            bg_vals.push_back(1.0 - double(pred.data[i]));
        }
    }
    const double s_object = mu * object_score(fg_vals) + (1.0 - mu) * object_score(bg_vals);

    // region term: split both maps into 4 blocks at the integer centroid
    long sum_x = 0, sum_y = 0;
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            if (gt_on(gt.at(0, y, x))) {
                sum_x += x;
                sum_y += y;
            }
        }
    }
    const int cx = int(sum_x / long(fg));
    const int cy = int(sum_y / long(fg));

    double s_region = 0.0;
    const std::array<std::array<int, 4>, 4> blocks{{
        {0, cy, 0, cx},
        {0, cy, cx + 1, W - 1},
        {cy + 1, H - 1, 0, cx},
        {cy + 1, H - 1, cx + 1, W - 1},
    }};
    for (const auto& b : blocks) {
        if (b[0] > b[1] || b[2] > b[3]) continue;
        const BlockStats st = block_stats(pred, gt, b[0], b[1], b[2], b[3]);
        const double num = 4.0 * st.mean_x * st.mean_y * st.cov;
        const double den = (st.mean_x * st.mean_x + st.mean_y * st.mean_y) * (st.var_x + st.var_y);
        double q;
        if (num == 0.0 && den == 0.0) {
            q = 1.0;
        } else if (num == 0.0) {
            q = 0.0;
        } else {
            q = num / (den + kEps);
        }
        s_region += (double(st.n) / double(n)) * q;
    }

    const double s = alpha * s_object + (1.0 - alpha) * s_region;
    return std::min(std::max(s, 0.0), 1.0);
}

EvalSummary evaluate_set(const std::vector<Image>& preds, const std::vector<Image>& gts) {
    if (preds.empty() || preds.size() != gts.size()) {
        throw std::invalid_argument("evaluate_set: prediction/gt count mismatch");
    }
    EvalSummary out;
    out.frames = preds.size();
    double mae_acc = 0.0, s_acc = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        mae_acc += mae(preds[i], gts[i]);
        s_acc += s_measure(preds[i], gts[i]);
    }
    out.mae = mae_acc / double(preds.size());
    out.s_measure = s_acc / double(preds.size());
    out.max_f = max_f(preds, gts);
    return out;
}

} // namespace vsod
