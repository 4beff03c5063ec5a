#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/ops.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace vsod {

// Named trainable tensors in creation order. All weights come from one
// seeded generator, so a config + seed pins every parameter bit.
class ParamRegistry {
public:
    explicit ParamRegistry(std::uint64_t seed) : rng_(seed) {}

    // zero-mean normal, stddev sqrt(gain / fan_in); gain 2 ahead of a relu,
    // 1 for linear layers, small for prediction heads
    Tensor normal_weight(const std::string& name, Shape shape, int fan_in, double gain);
    Tensor zero_bias(const std::string& name, int n);

    const std::vector<Tensor>& params() const { return params_; }
    Tensor find(const std::string& name) const;
    void zero_grads();
    std::size_t count_values() const;

private:
    Tensor add(std::string name, Tensor t);

    Rng rng_;
    std::vector<Tensor> params_;
};

struct ConvLayer {
    Tensor w, b;
    int stride = 1, pad = 0;
    Tensor operator()(const Tensor& x) const { return conv2d(x, w, b, stride, pad); }
};

ConvLayer make_conv(ParamRegistry& reg, const std::string& name, int cin, int cout, int k,
                    int stride, int pad, double init_gain = 1.0);

inline constexpr double kReluGain = 2.0;
inline constexpr double kLinearGain = 1.0;
// residual refinements: keeps feature energy roughly constant across levels
// (no normalization layers exist to absorb growth)
inline constexpr double kResidualGain = 0.5;
inline constexpr double kHeadGain = 4e-4;  // 0.02^2: heads start near sigmoid(0)

} // namespace vsod
