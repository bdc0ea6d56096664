#pragma once

#include <utility>
#include <vector>

#include "inceptseg/tensor.hpp"

namespace iseg::ops {

enum class Padding { Same, Valid };

// Stride-1 2-D convolution with per-output-channel bias.
Tensor4 conv2d(const Tensor4& input, const Kernel4& kernel, Padding pad);

struct ConvGrads {
  Tensor4 grad_input;
  Kernel4 grad_kernel;  // data = kernel gradient, bias = bias gradient
};
ConvGrads conv2d_backward(const Tensor4& grad_out, const Tensor4& input,
                          const Kernel4& kernel, Padding pad);

// 2x2 stride-2 transposed convolution (adjoint of a stride-2 2x2 conv).
Tensor4 transposed_conv2x2(const Tensor4& input, const Kernel4& kernel);
ConvGrads transposed_conv2x2_backward(const Tensor4& grad_out, const Tensor4& input,
                                      const Kernel4& kernel);

struct PoolResult {
  Tensor4 output;
  std::vector<int> argmax;  // flat input index of each window winner
};
PoolResult maxpool2x2(const Tensor4& input);
Tensor4 maxpool2x2_backward(const Tensor4& grad_out, const std::vector<int>& argmax,
                            int in_h, int in_w);

Tensor4 concat_channels(const Tensor4& a, const Tensor4& b);
std::pair<Tensor4, Tensor4> split_channels(const Tensor4& x, int c_first);

Tensor4 add(const Tensor4& a, const Tensor4& b);
Tensor4 hadamard(const Tensor4& a, const Tensor4& b);
Tensor4 relu(const Tensor4& x);
Tensor4 sigmoid(const Tensor4& x);
Tensor4 tanh(const Tensor4& x);

// Backward rules; activation backward takes the cached forward *output*.
Tensor4 relu_backward(const Tensor4& grad, const Tensor4& output);
Tensor4 sigmoid_backward(const Tensor4& grad, const Tensor4& output);
Tensor4 tanh_backward(const Tensor4& grad, const Tensor4& output);

// Half-pixel-center bilinear interpolation, edge-clamped.
Tensor4 bilinear_resize(const Tensor4& input, int out_h, int out_w);

}  // namespace iseg::ops
