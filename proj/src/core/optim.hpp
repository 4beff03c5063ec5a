#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace vsod {

// base * 0.5^floor(epoch / halve_every)
double lr_at(int epoch, double base, int halve_every = 8);

struct AdamConfig {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

// Bias-corrected Adam over a fixed parameter list. A missing gradient counts
// as zero; a non-finite one aborts the step naming the parameter.
class Adam {
public:
    explicit Adam(std::vector<Tensor> params, AdamConfig cfg = {});

    // lr_scale is per parameter (empty = all ones).
    void step(double lr, const std::vector<double>& lr_scale = {});

    long step_count() const { return step_count_; }
    void set_step_count(long t) { step_count_ = t; }

    const std::vector<Tensor>& params() const { return params_; }
    const std::vector<float>& first_moment(std::size_t i) const { return m_[i]; }
    const std::vector<float>& second_moment(std::size_t i) const { return v_[i]; }
    void load_moments(std::size_t i, std::vector<float> m, std::vector<float> v);

private:
    AdamConfig cfg_;
    std::vector<Tensor> params_;
    std::vector<std::vector<float>> m_, v_;
    long step_count_ = 0;
};

} // namespace vsod
