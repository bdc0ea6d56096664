#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "inceptseg/tensor.hpp"

namespace oracle {

constexpr double kFdStep = 1e-4;

inline double rel_err(double analytic, double numeric) {
  const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-6});
  return std::fabs(analytic - numeric) / denom;
}

// central finite difference of `loss` w.r.t. *slot
inline double fd(const std::function<double()>& loss, double* slot,
                 double step = kFdStep) {
  const double orig = *slot;
  *slot = orig + step;
  const double lp = loss();
  *slot = orig - step;
  const double lm = loss();
  *slot = orig;
  return (lp - lm) / (2.0 * step);
}

// central plus one-sided difference quotients at one coordinate
struct FdProbe {
  double central, left, right;
};
inline FdProbe fd_probe(const std::function<double()>& loss, double* slot,
                        double step = kFdStep) {
  const double orig = *slot;
  const double l0 = loss();
  *slot = orig + step;
  const double lp = loss();
  *slot = orig - step;
  const double lm = loss();
  *slot = orig;
  return {(lp - lm) / (2.0 * step), (l0 - lm) / step, (lp - l0) / step};
}

// Like check_grad, but tolerant of genuine non-differentiability: where the
// one-sided difference quotients disagree the loss sits on a kink (relu,
// maxpool tie), and any value between them is a valid subgradient. Smooth
// coordinates still contribute their central-difference relative error.
inline double check_grad_kink_aware(const std::function<double()>& loss,
                                    double* slots, const double* analytic,
                                    size_t count, double step = kFdStep) {
  double worst = 0.0;
  for (size_t i = 0; i < count; ++i) {
    const FdProbe p = fd_probe(loss, slots + i, step);
    if (rel_err(p.left, p.right) < 1e-2) {
      worst = std::max(worst, rel_err(analytic[i], p.central));
    } else {
      const double lo = std::min(p.left, p.right), hi = std::max(p.left, p.right);
      const double margin = 1e-3 * std::max({std::fabs(lo), std::fabs(hi), 1e-6});
      if (analytic[i] < lo - margin || analytic[i] > hi + margin) worst = std::max(worst, 1.0);
    }
  }
  return worst;
}

// worst relative error of an analytic gradient vector against finite
// differences of `loss` over the storage behind `slots`
inline double check_grad(const std::function<double()>& loss, double* slots,
                         const double* analytic, size_t count,
                         double step = kFdStep) {
  double worst = 0.0;
  for (size_t i = 0; i < count; ++i)
    worst = std::max(worst, rel_err(analytic[i], fd(loss, slots + i, step)));
  return worst;
}

inline iseg::Tensor4 random_tensor(int n, int h, int w, int c, iseg::Rng& rng,
                                   double lo = -1.0, double hi = 1.0) {
  iseg::Tensor4 t(n, h, w, c);
  for (double& v : t.data) v = lo + (hi - lo) * rng.uniform();
  return t;
}

inline iseg::Kernel4 random_kernel(int kh, int kw, int cin, int cout, iseg::Rng& rng,
                                   double scale = 0.5) {
  iseg::Kernel4 k(kh, kw, cin, cout);
  for (double& v : k.data) v = scale * (2.0 * rng.uniform() - 1.0);
  for (double& v : k.bias) v = scale * (2.0 * rng.uniform() - 1.0);
  return k;
}

// fixed random projection so scalar losses exercise every output coordinate
inline iseg::Tensor4 random_weights(const iseg::Tensor4& like, iseg::Rng& rng) {
  return random_tensor(like.n, like.h, like.w, like.c, rng);
}

inline double weighted_sum(const iseg::Tensor4& t, const iseg::Tensor4& w) {
  double s = 0.0;
  for (size_t i = 0; i < t.data.size(); ++i) s += t.data[i] * w.data[i];
  return s;
}

}  // namespace oracle
