#pragma once

#include <initializer_list>
#include <span>
#include <vector>

#include "core/tensor.hpp"

namespace vsod {

// 2-D convolution, NCHW. weight is [Cout,Cin,kh,kw]; bias is [Cout] or an
// undefined tensor for none. Zero padding, square stride.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding);

Tensor softmax(const Tensor& input, int axis);

// Batched matrix product [...,M,K] x [...,K,N]; leading dimensions broadcast
// or match.
Tensor matmul(const Tensor& a, const Tensor& b);

// Half-pixel-center bilinear resampling with edge clamping.
Tensor bilinear_resize(const Tensor& input, int out_h, int out_w);

Tensor global_avg_pool(const Tensor& input);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);
Tensor neg(const Tensor& x);
Tensor clamp(const Tensor& x, float lo, float hi);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& x, float s);
Tensor mul_scalar(const Tensor& x, float s);

// Elementwise product with numpy-style broadcasting over equal-rank shapes
// (each extent equal or 1); used for attention and channel gating.
Tensor mul_bc(const Tensor& a, const Tensor& b);

Tensor concat(std::span<const Tensor> inputs, int axis);
Tensor concat(std::initializer_list<Tensor> inputs, int axis);
std::vector<Tensor> split(const Tensor& x, int axis, const std::vector<int>& sizes);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& order);
Tensor flip_w(const Tensor& x);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

} // namespace vsod
