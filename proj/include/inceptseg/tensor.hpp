#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace iseg {

// Dense rank-4 array, row-major in (n, h, w, c). The universal value type
// for activations, kernels-as-gradients and feature maps.
struct Tensor4 {
  int n = 0, h = 0, w = 0, c = 0;
  std::vector<double> data;

  Tensor4() = default;
  Tensor4(int n_, int h_, int w_, int c_, double fill = 0.0)
      : n(n_), h(h_), w(w_), c(c_),
        data(static_cast<size_t>(n_) * h_ * w_ * c_, fill) {
    if (n_ <= 0 || h_ <= 0 || w_ <= 0 || c_ <= 0)
      throw std::invalid_argument("Tensor4: shape components must be positive, got " +
                                  shape_str());
  }

  size_t size() const { return data.size(); }

  size_t idx(int i, int y, int x, int ch) const {
    return ((static_cast<size_t>(i) * h + y) * w + x) * c + ch;
  }
  double& at(int i, int y, int x, int ch) { return data[idx(i, y, x, ch)]; }
  double at(int i, int y, int x, int ch) const { return data[idx(i, y, x, ch)]; }

  bool same_shape(const Tensor4& o) const {
    return n == o.n && h == o.h && w == o.w && c == o.c;
  }

  std::string shape_str() const {
    return "(" + std::to_string(n) + "," + std::to_string(h) + "," +
           std::to_string(w) + "," + std::to_string(c) + ")";
  }
};

// Convolution kernel, row-major in (kh, kw, c_in, c_out), plus per-output-channel bias.
struct Kernel4 {
  int kh = 0, kw = 0, cin = 0, cout = 0;
  std::vector<double> data;
  std::vector<double> bias;

  Kernel4() = default;
  Kernel4(int kh_, int kw_, int cin_, int cout_, double fill = 0.0)
      : kh(kh_), kw(kw_), cin(cin_), cout(cout_),
        data(static_cast<size_t>(kh_) * kw_ * cin_ * cout_, fill),
        bias(cout_, 0.0) {}

  size_t idx(int ky, int kx, int ci, int co) const {
    return ((static_cast<size_t>(ky) * kw + kx) * cin + ci) * cout + co;
  }
  double& at(int ky, int kx, int ci, int co) { return data[idx(ky, kx, ci, co)]; }
  double at(int ky, int kx, int ci, int co) const { return data[idx(ky, kx, ci, co)]; }

  size_t param_count() const { return data.size() + bias.size(); }

  std::string shape_str() const {
    return "(" + std::to_string(kh) + "," + std::to_string(kw) + "," +
           std::to_string(cin) + "," + std::to_string(cout) + ")";
  }
};

// Counter-based 64-bit generator (SplitMix64 over key + counter). Every
// stochastic consumer draws from its own keyed stream so module order never
// perturbs another module's randomness.
class Rng {
 public:
  Rng(uint64_t seed, uint64_t stream)
      : key_(mix(seed ^ mix(stream + 0x9e3779b97f4a7c15ull))), counter_(0) {}

  uint64_t next_u64() { return mix(key_ + (++counter_) * 0x9e3779b97f4a7c15ull); }

  // uniform in [0,1)
  double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

  // unbiased integer in [0, bound)
  uint64_t uniform_int(uint64_t bound) {
    uint64_t threshold = (~bound + 1) % bound;  // 2^64 mod bound
    for (;;) {
      uint64_t r = next_u64();
      if (r >= threshold) return r % bound;
    }
  }

  // standard normal via Box-Muller
  double normal();

  // normal(0, stddev) resampled until |z| <= 2*stddev
  double truncated_normal(double stddev);

 private:
  static uint64_t mix(uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ull;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebull;
    z ^= z >> 31;
    return z;
  }
  uint64_t key_;
  uint64_t counter_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace iseg
