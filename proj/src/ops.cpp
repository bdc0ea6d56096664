#include "inceptseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace iseg::ops {

namespace {

void check_channels(const Tensor4& in, const Kernel4& k, const char* op) {
  if (k.cin != in.c)
    throw std::invalid_argument(std::string(op) + ": kernel expects " +
                                std::to_string(k.cin) + " input channels, input is " +
                                in.shape_str() + " vs kernel " + k.shape_str());
}

void check_same_shape(const Tensor4& a, const Tensor4& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() +
                                " vs " + b.shape_str());
}

}  // namespace

Tensor4 conv2d(const Tensor4& input, const Kernel4& kernel, Padding pad) {
  check_channels(input, kernel, "conv2d");
  const int ph = pad == Padding::Same ? kernel.kh / 2 : 0;
  const int pw = pad == Padding::Same ? kernel.kw / 2 : 0;
  const int oh = pad == Padding::Same ? input.h : input.h - kernel.kh + 1;
  const int ow = pad == Padding::Same ? input.w : input.w - kernel.kw + 1;
  if (oh <= 0 || ow <= 0)
    throw std::invalid_argument("conv2d: input " + input.shape_str() +
                                " too small for valid-padding kernel " + kernel.shape_str());
  Tensor4 out(input.n, oh, ow, kernel.cout);
  const int cin = input.c, cout = kernel.cout;
  for (int i = 0; i < input.n; ++i) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double* op_ = &out.data[out.idx(i, y, x, 0)];
        for (int co = 0; co < cout; ++co) op_[co] = kernel.bias[co];
        for (int ky = 0; ky < kernel.kh; ++ky) {
          const int iy = y + ky - ph;
          if (iy < 0 || iy >= input.h) continue;
          for (int kx = 0; kx < kernel.kw; ++kx) {
            const int ix = x + kx - pw;
            if (ix < 0 || ix >= input.w) continue;
            const double* ip = &input.data[input.idx(i, iy, ix, 0)];
            const double* kp = &kernel.data[kernel.idx(ky, kx, 0, 0)];
            for (int ci = 0; ci < cin; ++ci) {
              const double a = ip[ci];
              const double* kr = kp + static_cast<size_t>(ci) * cout;
              for (int co = 0; co < cout; ++co) op_[co] += a * kr[co];
            }
          }
        }
      }
    }
  }
  return out;
}

ConvGrads conv2d_backward(const Tensor4& grad_out, const Tensor4& input,
                          const Kernel4& kernel, Padding pad) {
  check_channels(input, kernel, "conv2d_backward");
  const int ph = pad == Padding::Same ? kernel.kh / 2 : 0;
  const int pw = pad == Padding::Same ? kernel.kw / 2 : 0;
  const int oh = pad == Padding::Same ? input.h : input.h - kernel.kh + 1;
  const int ow = pad == Padding::Same ? input.w : input.w - kernel.kw + 1;
  if (grad_out.n != input.n || grad_out.h != oh || grad_out.w != ow ||
      grad_out.c != kernel.cout)
    throw std::invalid_argument("conv2d_backward: grad_out " + grad_out.shape_str() +
                                " does not match forward output shape");
  ConvGrads g;
  g.grad_input = Tensor4(input.n, input.h, input.w, input.c);
  g.grad_kernel = Kernel4(kernel.kh, kernel.kw, kernel.cin, kernel.cout);
  const int cin = input.c, cout = kernel.cout;
  for (int i = 0; i < input.n; ++i) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        const double* gp = &grad_out.data[grad_out.idx(i, y, x, 0)];
        for (int co = 0; co < cout; ++co) g.grad_kernel.bias[co] += gp[co];
        for (int ky = 0; ky < kernel.kh; ++ky) {
          const int iy = y + ky - ph;
          if (iy < 0 || iy >= input.h) continue;
          for (int kx = 0; kx < kernel.kw; ++kx) {
            const int ix = x + kx - pw;
            if (ix < 0 || ix >= input.w) continue;
            const double* ip = &input.data[input.idx(i, iy, ix, 0)];
            double* gip = &g.grad_input.data[input.idx(i, iy, ix, 0)];
            const double* kp = &kernel.data[kernel.idx(ky, kx, 0, 0)];
            double* gkp = &g.grad_kernel.data[kernel.idx(ky, kx, 0, 0)];
            for (int ci = 0; ci < cin; ++ci) {
              const double a = ip[ci];
              const double* kr = kp + static_cast<size_t>(ci) * cout;
              double* gkr = gkp + static_cast<size_t>(ci) * cout;
              double acc = 0.0;
              for (int co = 0; co < cout; ++co) {
                const double go = gp[co];
                gkr[co] += a * go;
                acc += kr[co] * go;
              }
              gip[ci] += acc;
            }
          }
        }
      }
    }
  }
  return g;
}

Tensor4 transposed_conv2x2(const Tensor4& input, const Kernel4& kernel) {
  check_channels(input, kernel, "transposed_conv2x2");
  if (kernel.kh != 2 || kernel.kw != 2)
    throw std::invalid_argument("transposed_conv2x2: kernel must be 2x2, got " +
                                kernel.shape_str());
  Tensor4 out(input.n, 2 * input.h, 2 * input.w, kernel.cout);
  const int cin = input.c, cout = kernel.cout;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = kernel.bias[i % cout];
  for (int i = 0; i < input.n; ++i)
    for (int y = 0; y < input.h; ++y)
      for (int x = 0; x < input.w; ++x) {
        const double* ip = &input.data[input.idx(i, y, x, 0)];
        for (int ky = 0; ky < 2; ++ky)
          for (int kx = 0; kx < 2; ++kx) {
            double* op_ = &out.data[out.idx(i, 2 * y + ky, 2 * x + kx, 0)];
            const double* kp = &kernel.data[kernel.idx(ky, kx, 0, 0)];
            for (int ci = 0; ci < cin; ++ci) {
              const double a = ip[ci];
              const double* kr = kp + static_cast<size_t>(ci) * cout;
              for (int co = 0; co < cout; ++co) op_[co] += a * kr[co];
            }
          }
      }
  return out;
}

ConvGrads transposed_conv2x2_backward(const Tensor4& grad_out, const Tensor4& input,
                                      const Kernel4& kernel) {
  if (grad_out.n != input.n || grad_out.h != 2 * input.h || grad_out.w != 2 * input.w ||
      grad_out.c != kernel.cout)
    throw std::invalid_argument("transposed_conv2x2_backward: grad_out " +
                                grad_out.shape_str() + " does not match forward output");
  ConvGrads g;
  g.grad_input = Tensor4(input.n, input.h, input.w, input.c);
  g.grad_kernel = Kernel4(2, 2, kernel.cin, kernel.cout);
  const int cin = input.c, cout = kernel.cout;
  for (size_t i = 0; i < grad_out.data.size(); ++i)
    g.grad_kernel.bias[i % cout] += grad_out.data[i];
  for (int i = 0; i < input.n; ++i)
    for (int y = 0; y < input.h; ++y)
      for (int x = 0; x < input.w; ++x) {
        const double* ip = &input.data[input.idx(i, y, x, 0)];
        double* gip = &g.grad_input.data[input.idx(i, y, x, 0)];
        for (int ky = 0; ky < 2; ++ky)
          for (int kx = 0; kx < 2; ++kx) {
            const double* gp = &grad_out.data[grad_out.idx(i, 2 * y + ky, 2 * x + kx, 0)];
            const double* kp = &kernel.data[kernel.idx(ky, kx, 0, 0)];
            double* gkp = &g.grad_kernel.data[kernel.idx(ky, kx, 0, 0)];
            for (int ci = 0; ci < cin; ++ci) {
              const double a = ip[ci];
              const double* kr = kp + static_cast<size_t>(ci) * cout;
              double* gkr = gkp + static_cast<size_t>(ci) * cout;
              double acc = 0.0;
              for (int co = 0; co < cout; ++co) {
                gkr[co] += a * gp[co];
                acc += kr[co] * gp[co];
              }
              gip[ci] += acc;
            }
          }
      }
  return g;
}

PoolResult maxpool2x2(const Tensor4& input) {
  if (input.h % 2 != 0 || input.w % 2 != 0)
    throw std::invalid_argument("maxpool2x2: spatial size must be even, got " +
                                input.shape_str() + "; pad inputs before pooling");
  PoolResult r;
  r.output = Tensor4(input.n, input.h / 2, input.w / 2, input.c);
  r.argmax.resize(r.output.size());
  for (int i = 0; i < input.n; ++i)
    for (int y = 0; y < r.output.h; ++y)
      for (int x = 0; x < r.output.w; ++x)
        for (int ch = 0; ch < input.c; ++ch) {
          // ties go to the first element in row-major window order
          size_t best = input.idx(i, 2 * y, 2 * x, ch);
          double bv = input.data[best];
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              size_t id = input.idx(i, 2 * y + dy, 2 * x + dx, ch);
              if (input.data[id] > bv) {
                bv = input.data[id];
                best = id;
              }
            }
          size_t o = r.output.idx(i, y, x, ch);
          r.output.data[o] = bv;
          r.argmax[o] = static_cast<int>(best);
        }
  return r;
}

Tensor4 maxpool2x2_backward(const Tensor4& grad_out, const std::vector<int>& argmax,
                            int in_h, int in_w) {
  if (argmax.size() != grad_out.size())
    throw std::invalid_argument("maxpool2x2_backward: argmax cache does not match grad_out");
  Tensor4 g(grad_out.n, in_h, in_w, grad_out.c);
  for (size_t i = 0; i < grad_out.data.size(); ++i)
    g.data[static_cast<size_t>(argmax[i])] += grad_out.data[i];
  return g;
}

Tensor4 concat_channels(const Tensor4& a, const Tensor4& b) {
  if (a.n != b.n || a.h != b.h || a.w != b.w)
    throw std::invalid_argument("concat_channels: spatial mismatch " + a.shape_str() +
                                " vs " + b.shape_str());
  Tensor4 out(a.n, a.h, a.w, a.c + b.c);
  const size_t pixels = static_cast<size_t>(a.n) * a.h * a.w;
  for (size_t p = 0; p < pixels; ++p) {
    std::copy_n(&a.data[p * a.c], a.c, &out.data[p * out.c]);
    std::copy_n(&b.data[p * b.c], b.c, &out.data[p * out.c + a.c]);
  }
  return out;
}

std::pair<Tensor4, Tensor4> split_channels(const Tensor4& x, int c_first) {
  if (c_first <= 0 || c_first >= x.c)
    throw std::invalid_argument("split_channels: split point " + std::to_string(c_first) +
                                " out of range for " + x.shape_str());
  Tensor4 a(x.n, x.h, x.w, c_first), b(x.n, x.h, x.w, x.c - c_first);
  const size_t pixels = static_cast<size_t>(x.n) * x.h * x.w;
  for (size_t p = 0; p < pixels; ++p) {
    std::copy_n(&x.data[p * x.c], a.c, &a.data[p * a.c]);
    std::copy_n(&x.data[p * x.c + a.c], b.c, &b.data[p * b.c]);
  }
  return {std::move(a), std::move(b)};
}

Tensor4 add(const Tensor4& a, const Tensor4& b) {
  check_same_shape(a, b, "add");
  Tensor4 out = a;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
  return out;
}

Tensor4 hadamard(const Tensor4& a, const Tensor4& b) {
  check_same_shape(a, b, "hadamard");
  Tensor4 out = a;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.data[i];
  return out;
}

Tensor4 relu(const Tensor4& x) {
  Tensor4 out = x;
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor4 sigmoid(const Tensor4& x) {
  Tensor4 out = x;
  for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
  return out;
}

Tensor4 tanh(const Tensor4& x) {
  Tensor4 out = x;
  for (double& v : out.data) v = std::tanh(v);
  return out;
}

Tensor4 relu_backward(const Tensor4& grad, const Tensor4& output) {
  check_same_shape(grad, output, "relu_backward");
  Tensor4 g = grad;
  for (size_t i = 0; i < g.data.size(); ++i)
    if (output.data[i] <= 0.0) g.data[i] = 0.0;
  return g;
}

Tensor4 sigmoid_backward(const Tensor4& grad, const Tensor4& output) {
  check_same_shape(grad, output, "sigmoid_backward");
  Tensor4 g = grad;
  for (size_t i = 0; i < g.data.size(); ++i)
    g.data[i] *= output.data[i] * (1.0 - output.data[i]);
  return g;
}

Tensor4 tanh_backward(const Tensor4& grad, const Tensor4& output) {
  check_same_shape(grad, output, "tanh_backward");
  Tensor4 g = grad;
  for (size_t i = 0; i < g.data.size(); ++i)
    g.data[i] *= 1.0 - output.data[i] * output.data[i];
  return g;
}

Tensor4 bilinear_resize(const Tensor4& input, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1)
    throw std::invalid_argument("bilinear_resize: target size must be positive");
  if (out_h == input.h && out_w == input.w) return input;
  Tensor4 out(input.n, out_h, out_w, input.c);
  const double sy = static_cast<double>(input.h) / out_h;
  const double sx = static_cast<double>(input.w) / out_w;
  for (int i = 0; i < input.n; ++i)
    for (int y = 0; y < out_h; ++y) {
      double fy = (y + 0.5) * sy - 0.5;
      fy = std::clamp(fy, 0.0, static_cast<double>(input.h - 1));
      const int y0 = static_cast<int>(fy);
      const int y1 = std::min(y0 + 1, input.h - 1);
      const double wy = fy - y0;
      for (int x = 0; x < out_w; ++x) {
        double fx = (x + 0.5) * sx - 0.5;
        fx = std::clamp(fx, 0.0, static_cast<double>(input.w - 1));
        const int x0 = static_cast<int>(fx);
        const int x1 = std::min(x0 + 1, input.w - 1);
        const double wx = fx - x0;
        for (int ch = 0; ch < input.c; ++ch) {
          const double v00 = input.at(i, y0, x0, ch), v01 = input.at(i, y0, x1, ch);
          const double v10 = input.at(i, y1, x0, ch), v11 = input.at(i, y1, x1, ch);
          out.at(i, y, x, ch) = (1 - wy) * ((1 - wx) * v00 + wx * v01) +
                                wy * ((1 - wx) * v10 + wx * v11);
        }
      }
    }
  return out;
}

}  // namespace iseg::ops
