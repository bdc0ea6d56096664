#pragma once

#include <vector>

#include "inceptseg/ops.hpp"
#include "inceptseg/tensor.hpp"

namespace iseg {

// One direction of a ConvLSTM. Gate biases live on the input kernels'
// bias vectors; hidden kernels carry no bias. Peepholes are per-channel
// Hadamard weights of length F (the hidden channel count).
struct ConvLSTMParams {
  Kernel4 w_xi, w_xf, w_xc, w_xo;  // input kernels, bias = gate bias
  Kernel4 w_hi, w_hf, w_hc, w_ho;  // hidden kernels, bias unused (zero)
  std::vector<double> peep_i, peep_f, peep_o;

  int hidden() const { return w_xi.cout; }
  static ConvLSTMParams make(int in_channels, int hidden, int ksize = 3);
};

struct ConvLSTMState {
  Tensor4 h, c;
};

struct ConvLSTMStepCache {
  Tensor4 x, h_prev, c_prev;
  Tensor4 gate_i, gate_f, gate_o, cand, c_new, tanh_c;
};

struct ConvLSTMGrads {
  ops::ConvGrads xi, xf, xc, xo;  // grad_kernel.bias = gate bias grads
  Kernel4 hi, hf, hc, ho;         // hidden kernel grads (bias slot unused)
  std::vector<double> peep_i, peep_f, peep_o;
  Tensor4 grad_x, grad_h_prev, grad_c_prev;
};

ConvLSTMState convlstm_step(const Tensor4& x, const ConvLSTMState& state,
                            const ConvLSTMParams& p, ConvLSTMStepCache* cache = nullptr);

// Accumulates into `acc` when given, so a multi-step sequence sums naturally.
ConvLSTMGrads convlstm_step_backward(const Tensor4& grad_h, const Tensor4& grad_c,
                                     const ConvLSTMStepCache& cache,
                                     const ConvLSTMParams& p);
void accumulate(ConvLSTMGrads& acc, const ConvLSTMGrads& g);

// Bi-directional fusion of an encoder skip map and an upsampled decoder map,
// treated as the 2-step sequence (decoder, encoder). Each direction runs its
// own cell over the sequence (the backward cell sees it reversed) from zero
// initial state; the fused map combines both final hidden states:
//   Y = tanh(w_y_fwd * H_fwd + w_y_bwd * H_bwd + b_y)
struct BConvLSTMParams {
  ConvLSTMParams fwd, bwd;
  Kernel4 w_y_fwd;  // bias = b_y
  Kernel4 w_y_bwd;  // bias unused (zero)

  static BConvLSTMParams make(int in_channels, int hidden, int fused_out,
                              int ksize = 3, int out_ksize = 1);
};

struct BConvLSTMCache {
  ConvLSTMStepCache f1, f2, b1, b2;
  Tensor4 h_fwd, h_bwd, y;
};

struct BConvLSTMGrads {
  ConvLSTMGrads fwd, bwd;
  ops::ConvGrads y_fwd, y_bwd;
  Tensor4 grad_enc, grad_dec;
};

Tensor4 bconvlstm_fuse(const Tensor4& x_enc, const Tensor4& x_dec,
                       const BConvLSTMParams& p, BConvLSTMCache* cache = nullptr);

BConvLSTMGrads bconvlstm_backward(const Tensor4& grad_out, const BConvLSTMCache& cache,
                                  const BConvLSTMParams& p);

}  // namespace iseg
