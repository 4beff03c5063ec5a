#include "core/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace vsod {

namespace {

struct FiniteChecksGuard {
    FiniteChecksGuard() : prev(finite_checks()) { set_finite_checks(true); }
    ~FiniteChecksGuard() { set_finite_checks(prev); }
    bool prev;
};

void zero_leaf_grads(std::span<const GradCheckCoord> coords) {
    std::unordered_set<const void*> seen;
    for (const auto& c : coords) {
        if (seen.insert(c.tensor.node().get()).second) {
            Tensor t = c.tensor;
            t.zero_grad();
        }
    }
}

} // namespace

double grad_check(const std::function<Tensor()>& fn,
                  std::span<const GradCheckCoord> coords, double step) {
    FiniteChecksGuard checks;
    zero_leaf_grads(coords);

    Tensor loss = fn();
    backward(loss);

    double worst = 0.0;
    for (const auto& c : coords) {
        Tensor leaf = c.tensor;
        const double analytic = leaf.has_grad() ? double(leaf.grad()[c.index]) : 0.0;

        float* slot = &leaf.mutable_data()[c.index];
        const float orig = *slot;
        double f_plus, f_minus;
        {
            NoGradGuard no_grad;
            *slot = float(double(orig) + step);
            f_plus = fn().item_precise();
            *slot = float(double(orig) - step);
            f_minus = fn().item_precise();
            *slot = orig;
        }
        const double cd = (f_plus - f_minus) / (2.0 * step);
        const double denom = std::max({std::abs(analytic), std::abs(cd), 1e-8});
        worst = std::max(worst, std::abs(analytic - cd) / denom);
    }
    return worst;
}

std::vector<GradCheckCoord> sample_coords(std::span<const Tensor> leaves,
                                          int per_tensor, Rng& rng) {
    std::vector<GradCheckCoord> coords;
    coords.reserve(leaves.size() * std::size_t(per_tensor));
    for (const Tensor& t : leaves) {
        for (int i = 0; i < per_tensor; ++i) {
            coords.push_back({t, std::size_t(rng.uniform_int(0, int(t.size()) - 1))});
        }
    }
    return coords;
}

std::vector<GradCheckCoord> sample_salient_coords(const std::function<Tensor()>& fn,
                                                  std::span<const Tensor> leaves,
                                                  int per_tensor, int candidates,
                                                  Rng& rng, double min_grad_frac) {
    for (const Tensor& t : leaves) {
        Tensor leaf = t;
        leaf.zero_grad();
    }
    Tensor loss = fn();
    backward(loss);

    std::vector<GradCheckCoord> coords;
    for (const Tensor& t : leaves) {
        if (!t.has_grad()) continue;
        std::span<const double> g = t.grad();
        float peak = 0.0f;
        for (float v : g) peak = std::max(peak, std::abs(v));
        for (int k = 0; k < per_tensor; ++k) {
            std::size_t best = std::size_t(rng.uniform_int(0, int(t.size()) - 1));
            for (int c = 1; c < candidates; ++c) {
                std::size_t i = std::size_t(rng.uniform_int(0, int(t.size()) - 1));
                if (std::abs(g[i]) > std::abs(g[best])) best = i;
            }
            if (std::abs(g[best]) < min_grad_frac * peak) continue;
            coords.push_back({t, best});
        }
    }
    return coords;
}

} // namespace vsod
