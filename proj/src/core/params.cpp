#include "core/params.hpp"

#include <cmath>
#include <stdexcept>

namespace vsod {

Tensor ParamRegistry::add(std::string name, Tensor t) {
    for (const Tensor& p : params_) {
        if (p.name() == name) throw std::logic_error("duplicate parameter name: " + name);
    }
    t.set_name(std::move(name));
    t.set_requires_grad(true);
    params_.push_back(t);
    return t;
}

Tensor ParamRegistry::normal_weight(const std::string& name, Shape shape, int fan_in, double gain) {
    const double stddev = std::sqrt(gain / double(fan_in));
    std::vector<float> values(shape_numel(shape));
    for (auto& v : values) v = float(rng_.normal() * stddev);
    return add(name, Tensor::from_data(std::move(shape), std::move(values)));
}

Tensor ParamRegistry::zero_bias(const std::string& name, int n) {
    return add(name, Tensor::zeros({n}));
}

Tensor ParamRegistry::find(const std::string& name) const {
    for (const Tensor& p : params_) {
        if (p.name() == name) return p;
    }
    throw std::invalid_argument("no parameter named " + name);
}

void ParamRegistry::zero_grads() {
    for (Tensor& p : params_) p.zero_grad();
}

std::size_t ParamRegistry::count_values() const {
    std::size_t n = 0;
    for (const Tensor& p : params_) n += p.size();
    return n;
}

ConvLayer make_conv(ParamRegistry& reg, const std::string& name, int cin, int cout, int k,
                    int stride, int pad, double init_gain) {
    ConvLayer layer;
    layer.w = reg.normal_weight(name + ".w", {cout, cin, k, k}, cin * k * k, init_gain);
    layer.b = reg.zero_bias(name + ".b", cout);
    layer.stride = stride;
    layer.pad = pad;
    return layer;
}

} // namespace vsod
