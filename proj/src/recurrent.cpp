#include "inceptseg/recurrent.hpp"

#include <cmath>
#include <stdexcept>

namespace iseg {

using ops::Padding;

namespace {

// y += per-channel weight ⊙ x
void add_peephole(Tensor4& y, const std::vector<double>& w, const Tensor4& x) {
  const int c = y.c;
  for (size_t i = 0; i < y.data.size(); ++i) y.data[i] += w[i % c] * x.data[i];
}

void peephole_grad(std::vector<double>& gw, const Tensor4& grad, const Tensor4& x) {
  const int c = grad.c;
  for (size_t i = 0; i < grad.data.size(); ++i) gw[i % c] += grad.data[i] * x.data[i];
}

Tensor4 gate_preact(const Tensor4& x, const Kernel4& wx, const Tensor4& h,
                    const Kernel4& wh) {
  Tensor4 a = ops::conv2d(x, wx, Padding::Same);  // carries the gate bias
  const Tensor4 b = ops::conv2d(h, wh, Padding::Same);
  for (size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
  return a;
}

}  // namespace

ConvLSTMParams ConvLSTMParams::make(int in_channels, int hidden, int ksize) {
  ConvLSTMParams p;
  p.w_xi = Kernel4(ksize, ksize, in_channels, hidden);
  p.w_xf = Kernel4(ksize, ksize, in_channels, hidden);
  p.w_xc = Kernel4(ksize, ksize, in_channels, hidden);
  p.w_xo = Kernel4(ksize, ksize, in_channels, hidden);
  p.w_hi = Kernel4(ksize, ksize, hidden, hidden);
  p.w_hf = Kernel4(ksize, ksize, hidden, hidden);
  p.w_hc = Kernel4(ksize, ksize, hidden, hidden);
  p.w_ho = Kernel4(ksize, ksize, hidden, hidden);
  p.peep_i.assign(hidden, 0.0);
  p.peep_f.assign(hidden, 0.0);
  p.peep_o.assign(hidden, 0.0);
  return p;
}

ConvLSTMState convlstm_step(const Tensor4& x, const ConvLSTMState& state,
                            const ConvLSTMParams& p, ConvLSTMStepCache* cache) {
  if (x.c != p.w_xi.cin)
    throw std::invalid_argument("convlstm_step: input " + x.shape_str() +
                                " does not match kernel " + p.w_xi.shape_str());
  if (state.h.c != p.hidden() || !state.h.same_shape(state.c))
    throw std::invalid_argument("convlstm_step: state shape " + state.h.shape_str() +
                                " does not match hidden size " + std::to_string(p.hidden()));

  Tensor4 a_i = gate_preact(x, p.w_xi, state.h, p.w_hi);
  add_peephole(a_i, p.peep_i, state.c);
  Tensor4 a_f = gate_preact(x, p.w_xf, state.h, p.w_hf);
  add_peephole(a_f, p.peep_f, state.c);
  const Tensor4 gate_i = ops::sigmoid(a_i);
  const Tensor4 gate_f = ops::sigmoid(a_f);
  const Tensor4 cand = ops::tanh(gate_preact(x, p.w_xc, state.h, p.w_hc));

  Tensor4 c_new = state.c;
  for (size_t i = 0; i < c_new.data.size(); ++i)
    c_new.data[i] = gate_f.data[i] * state.c.data[i] + gate_i.data[i] * cand.data[i];

  Tensor4 a_o = gate_preact(x, p.w_xo, state.h, p.w_ho);
  add_peephole(a_o, p.peep_o, c_new);
  const Tensor4 gate_o = ops::sigmoid(a_o);
  const Tensor4 tanh_c = ops::tanh(c_new);
  Tensor4 h_new = ops::hadamard(gate_o, tanh_c);

  if (cache) {
    cache->x = x;
    cache->h_prev = state.h;
    cache->c_prev = state.c;
    cache->gate_i = gate_i;
    cache->gate_f = gate_f;
    cache->gate_o = gate_o;
    cache->cand = cand;
    cache->c_new = c_new;
    cache->tanh_c = tanh_c;
  }
  return {std::move(h_new), std::move(c_new)};
}

ConvLSTMGrads convlstm_step_backward(const Tensor4& grad_h, const Tensor4& grad_c,
                                     const ConvLSTMStepCache& cache,
                                     const ConvLSTMParams& p) {
  if (cache.x.size() == 0)
    throw std::invalid_argument("convlstm_step_backward: missing forward cache");
  const int hidden = p.hidden();

  // dH = dL/dH_t, route through H = o ⊙ tanh(C)
  Tensor4 da_o = grad_h;  // becomes gate_o pre-activation grad
  Tensor4 d_c = grad_c;
  for (size_t i = 0; i < da_o.data.size(); ++i) {
    const double o = cache.gate_o.data[i];
    const double t = cache.tanh_c.data[i];
    const double dH = grad_h.data[i];
    da_o.data[i] = dH * t * o * (1.0 - o);
    d_c.data[i] += dH * o * (1.0 - t * t);
  }
  // output-gate peephole feeds C_t back into a_o
  for (size_t i = 0; i < d_c.data.size(); ++i)
    d_c.data[i] += da_o.data[i] * p.peep_o[i % hidden];

  Tensor4 da_i = d_c, da_f = d_c, da_c = d_c, d_cprev = d_c;
  for (size_t i = 0; i < d_c.data.size(); ++i) {
    const double gi = cache.gate_i.data[i], gf = cache.gate_f.data[i];
    const double g = cache.cand.data[i], dc = d_c.data[i];
    da_i.data[i] = dc * g * gi * (1.0 - gi);
    da_f.data[i] = dc * cache.c_prev.data[i] * gf * (1.0 - gf);
    da_c.data[i] = dc * gi * (1.0 - g * g);
    d_cprev.data[i] = dc * gf;
  }
  for (size_t i = 0; i < d_cprev.data.size(); ++i)
    d_cprev.data[i] += da_i.data[i] * p.peep_i[i % hidden] +
                       da_f.data[i] * p.peep_f[i % hidden];

  ConvLSTMGrads g;
  g.peep_i.assign(hidden, 0.0);
  g.peep_f.assign(hidden, 0.0);
  g.peep_o.assign(hidden, 0.0);
  peephole_grad(g.peep_i, da_i, cache.c_prev);
  peephole_grad(g.peep_f, da_f, cache.c_prev);
  peephole_grad(g.peep_o, da_o, cache.c_new);

  g.xi = ops::conv2d_backward(da_i, cache.x, p.w_xi, Padding::Same);
  g.xf = ops::conv2d_backward(da_f, cache.x, p.w_xf, Padding::Same);
  g.xc = ops::conv2d_backward(da_c, cache.x, p.w_xc, Padding::Same);
  g.xo = ops::conv2d_backward(da_o, cache.x, p.w_xo, Padding::Same);
  auto ghi = ops::conv2d_backward(da_i, cache.h_prev, p.w_hi, Padding::Same);
  auto ghf = ops::conv2d_backward(da_f, cache.h_prev, p.w_hf, Padding::Same);
  auto ghc = ops::conv2d_backward(da_c, cache.h_prev, p.w_hc, Padding::Same);
  auto gho = ops::conv2d_backward(da_o, cache.h_prev, p.w_ho, Padding::Same);
  g.hi = std::move(ghi.grad_kernel);
  g.hf = std::move(ghf.grad_kernel);
  g.hc = std::move(ghc.grad_kernel);
  g.ho = std::move(gho.grad_kernel);

  g.grad_x = g.xi.grad_input;
  g.grad_x = ops::add(g.grad_x, g.xf.grad_input);
  g.grad_x = ops::add(g.grad_x, g.xc.grad_input);
  g.grad_x = ops::add(g.grad_x, g.xo.grad_input);
  g.grad_h_prev = ops::add(ops::add(ghi.grad_input, ghf.grad_input),
                           ops::add(ghc.grad_input, gho.grad_input));
  g.grad_c_prev = std::move(d_cprev);
  return g;
}

namespace {
void add_kernel(Kernel4& a, const Kernel4& b) {
  for (size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
  for (size_t i = 0; i < a.bias.size(); ++i) a.bias[i] += b.bias[i];
}
void add_vec(std::vector<double>& a, const std::vector<double>& b) {
  for (size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}
}  // namespace

void accumulate(ConvLSTMGrads& acc, const ConvLSTMGrads& g) {
  add_kernel(acc.xi.grad_kernel, g.xi.grad_kernel);
  add_kernel(acc.xf.grad_kernel, g.xf.grad_kernel);
  add_kernel(acc.xc.grad_kernel, g.xc.grad_kernel);
  add_kernel(acc.xo.grad_kernel, g.xo.grad_kernel);
  add_kernel(acc.hi, g.hi);
  add_kernel(acc.hf, g.hf);
  add_kernel(acc.hc, g.hc);
  add_kernel(acc.ho, g.ho);
  add_vec(acc.peep_i, g.peep_i);
  add_vec(acc.peep_f, g.peep_f);
  add_vec(acc.peep_o, g.peep_o);
}

BConvLSTMParams BConvLSTMParams::make(int in_channels, int hidden, int fused_out,
                                      int ksize, int out_ksize) {
  BConvLSTMParams p;
  p.fwd = ConvLSTMParams::make(in_channels, hidden, ksize);
  p.bwd = ConvLSTMParams::make(in_channels, hidden, ksize);
  p.w_y_fwd = Kernel4(out_ksize, out_ksize, hidden, fused_out);
  p.w_y_bwd = Kernel4(out_ksize, out_ksize, hidden, fused_out);
  return p;
}

Tensor4 bconvlstm_fuse(const Tensor4& x_enc, const Tensor4& x_dec,
                       const BConvLSTMParams& p, BConvLSTMCache* cache) {
  if (x_enc.n != x_dec.n || x_enc.h != x_dec.h || x_enc.w != x_dec.w ||
      x_enc.c != x_dec.c)
    throw std::invalid_argument("bconvlstm_fuse: encoder " + x_enc.shape_str() +
                                " vs decoder " + x_dec.shape_str());
  const int hidden = p.fwd.hidden();
  ConvLSTMState zero{Tensor4(x_enc.n, x_enc.h, x_enc.w, hidden),
                     Tensor4(x_enc.n, x_enc.h, x_enc.w, hidden)};

  BConvLSTMCache local;
  BConvLSTMCache& cc = cache ? *cache : local;
  ConvLSTMState f1 = convlstm_step(x_dec, zero, p.fwd, &cc.f1);
  ConvLSTMState f2 = convlstm_step(x_enc, f1, p.fwd, &cc.f2);
  ConvLSTMState b1 = convlstm_step(x_enc, zero, p.bwd, &cc.b1);
  ConvLSTMState b2 = convlstm_step(x_dec, b1, p.bwd, &cc.b2);

  Tensor4 pre = ops::conv2d(f2.h, p.w_y_fwd, Padding::Same);  // carries b_y
  const Tensor4 pre_b = ops::conv2d(b2.h, p.w_y_bwd, Padding::Same);
  for (size_t i = 0; i < pre.data.size(); ++i) pre.data[i] += pre_b.data[i];
  Tensor4 y = ops::tanh(pre);
  if (cache) {
    cc.h_fwd = std::move(f2.h);
    cc.h_bwd = std::move(b2.h);
    cc.y = y;
  }
  return y;
}

BConvLSTMGrads bconvlstm_backward(const Tensor4& grad_out, const BConvLSTMCache& cache,
                                  const BConvLSTMParams& p) {
  if (cache.y.size() == 0)
    throw std::invalid_argument("bconvlstm_backward: missing forward cache");
  const Tensor4 d_pre = ops::tanh_backward(grad_out, cache.y);

  BConvLSTMGrads g;
  g.y_fwd = ops::conv2d_backward(d_pre, cache.h_fwd, p.w_y_fwd, Padding::Same);
  g.y_bwd = ops::conv2d_backward(d_pre, cache.h_bwd, p.w_y_bwd, Padding::Same);

  const Tensor4 zero_c(d_pre.n, d_pre.h, d_pre.w, p.fwd.hidden());
  // forward direction: step2 saw x_enc, step1 saw x_dec
  ConvLSTMGrads f2 = convlstm_step_backward(g.y_fwd.grad_input, zero_c, cache.f2, p.fwd);
  ConvLSTMGrads f1 = convlstm_step_backward(f2.grad_h_prev, f2.grad_c_prev, cache.f1, p.fwd);
  // backward direction: step2 saw x_dec, step1 saw x_enc
  ConvLSTMGrads b2 = convlstm_step_backward(g.y_bwd.grad_input, zero_c, cache.b2, p.bwd);
  ConvLSTMGrads b1 = convlstm_step_backward(b2.grad_h_prev, b2.grad_c_prev, cache.b1, p.bwd);

  g.grad_enc = ops::add(f2.grad_x, b1.grad_x);
  g.grad_dec = ops::add(f1.grad_x, b2.grad_x);
  accumulate(f2, f1);
  accumulate(b2, b1);
  g.fwd = std::move(f2);
  g.bwd = std::move(b2);
  return g;
}

}  // namespace iseg
