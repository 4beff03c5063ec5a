#include "core/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace vsod {

double lr_at(int epoch, double base, int halve_every) {
    if (epoch < 0) throw std::invalid_argument("lr_at: epoch must be >= 0");
    if (halve_every < 1) throw std::invalid_argument("lr_at: halving period must be positive");
    return base * std::pow(0.5, double(epoch / halve_every));
}

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : cfg_(cfg), params_(std::move(params)) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(params_[i].size(), 0.0f);
        v_[i].assign(params_[i].size(), 0.0f);
    }
}

void Adam::load_moments(std::size_t i, std::vector<float> m, std::vector<float> v) {
    if (m.size() != params_[i].size() || v.size() != params_[i].size()) {
        throw std::invalid_argument("adam: moment size mismatch for " + params_[i].name());
    }
    m_[i] = std::move(m);
    v_[i] = std::move(v);
}

void Adam::step(double lr, const std::vector<double>& lr_scale) {
    if (!lr_scale.empty() && lr_scale.size() != params_.size()) {
        throw std::invalid_argument("adam: lr_scale length mismatch");
    }
    // validate every gradient before touching any parameter
    for (const Tensor& p : params_) {
        if (!p.has_grad()) continue;
        for (double g : p.grad()) {
            if (!std::isfinite(g)) {
                throw std::runtime_error("adam: non-finite gradient for parameter '" + p.name() + "'");
            }
        }
    }

    const long t = ++step_count_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t));

    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        const double scale = lr_scale.empty() ? 1.0 : lr_scale[i];
        const bool has_grad = p.has_grad();
        std::span<const double> grad = has_grad ? p.grad() : std::span<const double>();
        std::span<float> value = p.mutable_data();
        for (std::size_t j = 0; j < value.size(); ++j) {
            const double g = has_grad ? grad[j] : 0.0;
            const double m = cfg_.beta1 * double(m_[i][j]) + (1.0 - cfg_.beta1) * g;
            const double v = cfg_.beta2 * double(v_[i][j]) + (1.0 - cfg_.beta2) * g * g;
            m_[i][j] = float(m);
            v_[i][j] = float(v);
            const double m_hat = m / bc1;
            const double v_hat = v / bc2;
            value[j] = float(double(value[j]) - scale * lr * m_hat / (std::sqrt(v_hat) + cfg_.eps));
        }
    }
}

} // namespace vsod
