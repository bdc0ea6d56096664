#include "inceptseg/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace iseg {

using detail::ConvUnit;
using ops::Padding;

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::Unet: return "unet";
    case Variant::Bcdu: return "bcdu";
    case Variant::Inceptnet: return "inceptnet";
  }
  throw std::invalid_argument("variant_name: bad enum value");
}

Variant variant_from_name(const std::string& s) {
  if (s == "unet") return Variant::Unet;
  if (s == "bcdu") return Variant::Bcdu;
  if (s == "inceptnet") return Variant::Inceptnet;
  throw std::invalid_argument("unknown variant '" + s +
                              "' (expected unet, bcdu or inceptnet)");
}

void NetworkSpec::validate() const {
  if (d != 1 && d != 3)
    throw std::invalid_argument("network: d must be 1 or 3, got " + std::to_string(d));
  if (base_filters.size() != 4)
    throw std::invalid_argument("network: base_filters must list 4 levels, got " +
                                std::to_string(base_filters.size()));
  for (size_t i = 0; i < base_filters.size(); ++i) {
    if (base_filters[i] <= 0)
      throw std::invalid_argument("network: base_filters must be positive");
    if (i > 0 && base_filters[i] != 2 * base_filters[i - 1])
      throw std::invalid_argument("network: base_filters must double at each level");
  }
  if (variant == Variant::Inceptnet && base_filters[0] % 4 != 0)
    throw std::invalid_argument("network: inception filters must be divisible by 4");
  if (in_h < 8 || in_w < 8 || in_h % 8 != 0 || in_w % 8 != 0)
    throw std::invalid_argument("network: input size must be a positive multiple of 8, got " +
                                std::to_string(in_h) + "x" + std::to_string(in_w));
  if (in_c < 1) throw std::invalid_argument("network: in_c must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
    throw std::invalid_argument("network: dropout_rate must lie in [0,1)");
  for (int v : {branch_mid32_a, branch_mid32_b, lstm_hidden32, fused32})
    if (v < 1 || v > 64)
      throw std::invalid_argument("network: width fractions must lie in [1,64] 32nds");
}

std::string NetworkSpec::canonical() const {
  char drop[32];
  std::snprintf(drop, sizeof drop, "%.17g", dropout_rate);
  std::ostringstream os;
  os << "inceptseg-v1;variant=" << variant_name(variant) << ";d=" << d << ";filters=";
  for (size_t i = 0; i < base_filters.size(); ++i)
    os << (i ? "," : "") << base_filters[i];
  os << ";input=" << in_h << "x" << in_w << "x" << in_c << ";dropout=" << drop
     << ";seed=" << seed << ";mid_a=" << branch_mid32_a << ";mid_b=" << branch_mid32_b
     << ";hidden=" << lstm_hidden32 << ";fused=" << fused32;
  return os.str();
}

NetworkSpec NetworkSpec::parse_canonical(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) parts.push_back(item);
  if (parts.empty() || parts[0] != "inceptseg-v1")
    throw std::invalid_argument("spec string: missing inceptseg-v1 header");
  NetworkSpec s;
  for (size_t i = 1; i < parts.size(); ++i) {
    const auto eq = parts[i].find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("spec string: malformed field '" + parts[i] + "'");
    const std::string key = parts[i].substr(0, eq), val = parts[i].substr(eq + 1);
    if (key == "variant") {
      s.variant = variant_from_name(val);
    } else if (key == "d") {
      s.d = std::stoi(val);
    } else if (key == "filters") {
      s.base_filters.clear();
      std::stringstream fs(val);
      std::string f;
      while (std::getline(fs, f, ',')) s.base_filters.push_back(std::stoi(f));
    } else if (key == "input") {
      if (std::sscanf(val.c_str(), "%dx%dx%d", &s.in_h, &s.in_w, &s.in_c) != 3)
        throw std::invalid_argument("spec string: bad input field '" + val + "'");
    } else if (key == "dropout") {
      s.dropout_rate = std::stod(val);
    } else if (key == "seed") {
      s.seed = std::stoull(val);
    } else if (key == "mid_a") {
      s.branch_mid32_a = std::stoi(val);
    } else if (key == "mid_b") {
      s.branch_mid32_b = std::stoi(val);
    } else if (key == "hidden") {
      s.lstm_hidden32 = std::stoi(val);
    } else if (key == "fused") {
      s.fused32 = std::stoi(val);
    } else {
      throw std::invalid_argument("spec string: unknown field '" + key + "'");
    }
  }
  s.validate();
  return s;
}

namespace {

void add_into(Parameter* p, const std::vector<double>& g) {
  for (size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i];
}

int frac32(int base, int num) { return std::max(1, base * num / 32); }

}  // namespace

namespace detail {

// ---- ConvUnit -------------------------------------------------------------

void ConvUnit::init(int kh, int kw, int cin, int cout, Act a) {
  k = Kernel4(kh, kw, cin, cout);
  act = a;
}

void ConvUnit::reg(ModelGraph& g, const std::string& prefix) {
  pw = &g.reg(prefix + ".weight", {k.kh, k.kw, k.cin, k.cout}, &k.data);
  pb = &g.reg(prefix + ".bias", {k.cout}, &k.bias);
}

Tensor4 ConvUnit::forward(const Tensor4& x, bool train) {
  if (train) in_cache = x;
  Tensor4 y = ops::conv2d(x, k, pad);
  switch (act) {
    case Act::None: break;
    case Act::Relu: y = ops::relu(y); break;
    case Act::Sigmoid: y = ops::sigmoid(y); break;
  }
  if (train) out_cache = y;
  return y;
}

Tensor4 ConvUnit::backward(const Tensor4& grad) {
  Tensor4 g = grad;
  switch (act) {
    case Act::None: break;
    case Act::Relu: g = ops::relu_backward(grad, out_cache); break;
    case Act::Sigmoid: g = ops::sigmoid_backward(grad, out_cache); break;
  }
  ops::ConvGrads cg = ops::conv2d_backward(g, in_cache, k, pad);
  add_into(pw, cg.grad_kernel.data);
  add_into(pb, cg.grad_kernel.bias);
  return std::move(cg.grad_input);
}

// ---- TwoConvBlock ---------------------------------------------------------

TwoConvBlock::TwoConvBlock(int cin, int f) {
  c1.init(3, 3, cin, f, ConvUnit::Act::Relu);
  c2.init(3, 3, f, f, ConvUnit::Act::Relu);
}

Tensor4 TwoConvBlock::forward(const Tensor4& x, bool train) {
  return c2.forward(c1.forward(x, train), train);
}

Tensor4 TwoConvBlock::backward(const Tensor4& grad) {
  return c1.backward(c2.backward(grad));
}

void TwoConvBlock::reg(ModelGraph& g, const std::string& prefix) {
  c1.reg(g, prefix + ".c1");
  c2.reg(g, prefix + ".c2");
}

// ---- InceptionModule ------------------------------------------------------

InceptionModule::InceptionModule(int cin, int f, int mid_a, int mid_b) {
  if (f % 4 != 0)
    throw std::invalid_argument("inception module: width must be divisible by 4, got " +
                                std::to_string(f));
  quarter = f / 4;
  b1.init(1, 1, cin, quarter, ConvUnit::Act::Relu);
  b2.init(3, 3, cin, quarter, ConvUnit::Act::Relu);
  b3a.init(3, 3, cin, mid_a, ConvUnit::Act::Relu);
  b3b.init(3, 3, mid_a, quarter, ConvUnit::Act::Relu);
  b4a.init(3, 3, cin, mid_b, ConvUnit::Act::Relu);
  b4b.init(3, 3, mid_b, mid_b, ConvUnit::Act::Relu);
  b4c.init(3, 3, mid_b, quarter, ConvUnit::Act::Relu);
}

Tensor4 InceptionModule::forward(const Tensor4& x, bool train) {
  const Tensor4 y1 = b1.forward(x, train);
  const Tensor4 y2 = b2.forward(x, train);
  const Tensor4 y3 = b3b.forward(b3a.forward(x, train), train);
  const Tensor4 y4 = b4c.forward(b4b.forward(b4a.forward(x, train), train), train);
  return ops::concat_channels(ops::concat_channels(y1, y2), ops::concat_channels(y3, y4));
}

Tensor4 InceptionModule::backward(const Tensor4& grad) {
  auto [g12, g34] = ops::split_channels(grad, 2 * quarter);
  auto [g1, g2] = ops::split_channels(g12, quarter);
  auto [g3, g4] = ops::split_channels(g34, quarter);
  Tensor4 gx = b1.backward(g1);
  gx = ops::add(gx, b2.backward(g2));
  gx = ops::add(gx, b3a.backward(b3b.backward(g3)));
  gx = ops::add(gx, b4a.backward(b4b.backward(b4c.backward(g4))));
  return gx;
}

void InceptionModule::reg(ModelGraph& g, const std::string& prefix) {
  b1.reg(g, prefix + ".b1");
  b2.reg(g, prefix + ".b2");
  b3a.reg(g, prefix + ".b3.0");
  b3b.reg(g, prefix + ".b3.1");
  b4a.reg(g, prefix + ".b4.0");
  b4b.reg(g, prefix + ".b4.1");
  b4c.reg(g, prefix + ".b4.2");
}

// ---- InceptionBlock -------------------------------------------------------

InceptionBlock::InceptionBlock(int cin, int f, int mid_a, int mid_b, int n_modules) {
  mods.reserve(n_modules);
  for (int m = 0; m < n_modules; ++m)
    mods.emplace_back(m == 0 ? cin : f, f, mid_a, mid_b);
}

Tensor4 InceptionBlock::forward(const Tensor4& x, bool train) {
  Tensor4 t = x;
  for (auto& m : mods) t = m.forward(t, train);
  return t;
}

Tensor4 InceptionBlock::backward(const Tensor4& grad) {
  Tensor4 g = grad;
  for (auto it = mods.rbegin(); it != mods.rend(); ++it) g = it->backward(g);
  return g;
}

void InceptionBlock::reg(ModelGraph& g, const std::string& prefix) {
  for (size_t m = 0; m < mods.size(); ++m)
    mods[m].reg(g, prefix + ".m" + std::to_string(m));
}

// ---- BatchNorm ------------------------------------------------------------

void BatchNorm::init(int c) {
  channels = c;
  gamma.assign(c, 1.0);
  beta.assign(c, 0.0);
  running_mean.assign(c, 0.0);
  running_var.assign(c, 1.0);
}

void BatchNorm::reg(ModelGraph& g, const std::string& prefix) {
  pg = &g.reg(prefix + ".gamma", {channels}, &gamma);
  pb = &g.reg(prefix + ".beta", {channels}, &beta);
  g.reg(prefix + ".running_mean", {channels}, &running_mean, false);
  g.reg(prefix + ".running_var", {channels}, &running_var, false);
}

Tensor4 BatchNorm::forward(const Tensor4& x, bool train) {
  if (x.c != channels)
    throw std::invalid_argument("batchnorm: input " + x.shape_str() + " does not match " +
                                std::to_string(channels) + " channels");
  Tensor4 y = x;
  const size_t m = x.data.size() / channels;
  if (train) {
    std::vector<double> mean(channels, 0.0), var(channels, 0.0);
    for (size_t i = 0; i < x.data.size(); ++i) mean[i % channels] += x.data[i];
    for (int ch = 0; ch < channels; ++ch) mean[ch] /= static_cast<double>(m);
    for (size_t i = 0; i < x.data.size(); ++i) {
      const double d = x.data[i] - mean[i % channels];
      var[i % channels] += d * d;
    }
    for (int ch = 0; ch < channels; ++ch) var[ch] /= static_cast<double>(m);
    invstd_cache.assign(channels, 0.0);
    for (int ch = 0; ch < channels; ++ch) invstd_cache[ch] = 1.0 / std::sqrt(var[ch] + eps);
    xhat_cache = x;
    for (size_t i = 0; i < x.data.size(); ++i) {
      const int ch = static_cast<int>(i % channels);
      xhat_cache.data[i] = (x.data[i] - mean[ch]) * invstd_cache[ch];
      y.data[i] = gamma[ch] * xhat_cache.data[i] + beta[ch];
    }
    for (int ch = 0; ch < channels; ++ch) {
      running_mean[ch] = momentum * running_mean[ch] + (1.0 - momentum) * mean[ch];
      running_var[ch] = momentum * running_var[ch] + (1.0 - momentum) * var[ch];
    }
  } else {
    for (size_t i = 0; i < x.data.size(); ++i) {
      const int ch = static_cast<int>(i % channels);
      y.data[i] = gamma[ch] * (x.data[i] - running_mean[ch]) /
                      std::sqrt(running_var[ch] + eps) +
                  beta[ch];
    }
  }
  return y;
}

Tensor4 BatchNorm::backward(const Tensor4& grad) {
  if (xhat_cache.size() == 0)
    throw std::logic_error("batchnorm backward: no train-mode forward cache");
  const size_t m = grad.data.size() / channels;
  std::vector<double> sum_g(channels, 0.0), sum_gx(channels, 0.0);
  for (size_t i = 0; i < grad.data.size(); ++i) {
    const int ch = static_cast<int>(i % channels);
    sum_g[ch] += grad.data[i];
    sum_gx[ch] += grad.data[i] * xhat_cache.data[i];
  }
  add_into(pg, sum_gx);
  add_into(pb, sum_g);
  Tensor4 gx = grad;
  const double inv_m = 1.0 / static_cast<double>(m);
  for (size_t i = 0; i < grad.data.size(); ++i) {
    const int ch = static_cast<int>(i % channels);
    gx.data[i] = gamma[ch] * invstd_cache[ch] *
                 (grad.data[i] - sum_g[ch] * inv_m -
                  xhat_cache.data[i] * sum_gx[ch] * inv_m);
  }
  return gx;
}

// ---- Dropout --------------------------------------------------------------

Tensor4 Dropout::forward(const Tensor4& x, bool train) {
  if (!train || rate <= 0.0) {
    mask.clear();
    return x;
  }
  Rng rng(seed, (0xD0ull << 56) ^ (layer_id << 32) ^ step);
  ++step;
  mask.assign(x.data.size(), 0);
  const double scale = 1.0 / (1.0 - rate);
  Tensor4 y = x;
  for (size_t i = 0; i < x.data.size(); ++i) {
    if (rng.uniform() >= rate) {
      mask[i] = 1;
      y.data[i] = x.data[i] * scale;
    } else {
      y.data[i] = 0.0;
    }
  }
  return y;
}

Tensor4 Dropout::backward(const Tensor4& grad) {
  if (mask.empty()) return grad;
  Tensor4 g = grad;
  const double scale = 1.0 / (1.0 - rate);
  for (size_t i = 0; i < g.data.size(); ++i) g.data[i] = mask[i] ? g.data[i] * scale : 0.0;
  return g;
}

// ---- Fusions --------------------------------------------------------------

Tensor4 ConcatFusion::fuse(const Tensor4& enc, const Tensor4& dec, bool train) {
  c_dec = dec.c;
  return ops::concat_channels(dec, enc);
}

std::pair<Tensor4, Tensor4> ConcatFusion::backward(const Tensor4& grad) {
  auto [g_dec, g_enc] = ops::split_channels(grad, c_dec);
  return {std::move(g_enc), std::move(g_dec)};
}

LstmFusion::LstmFusion(int channels, int hidden, int fused_out) {
  p = BConvLSTMParams::make(channels, hidden, fused_out, 3, 1);
  fused_c = fused_out;
}

Tensor4 LstmFusion::fuse(const Tensor4& enc, const Tensor4& dec, bool train) {
  return bconvlstm_fuse(enc, dec, p, train ? &cache : nullptr);
}

namespace {

void reg_direction(ModelGraph& g, const std::string& prefix, ConvLSTMParams& d,
                   LstmFusion::DirSlots& s) {
  Kernel4* xk[4] = {&d.w_xi, &d.w_xf, &d.w_xc, &d.w_xo};
  Kernel4* hk[4] = {&d.w_hi, &d.w_hf, &d.w_hc, &d.w_ho};
  std::vector<double>* peeps[3] = {&d.peep_i, &d.peep_f, &d.peep_o};
  const char* gate = "ifco";
  for (int i = 0; i < 4; ++i) {
    const std::string xn = prefix + ".w_x" + gate[i];
    s.xw[i] = &g.reg(xn + ".weight", {xk[i]->kh, xk[i]->kw, xk[i]->cin, xk[i]->cout},
                     &xk[i]->data);
    s.xb[i] = &g.reg(xn + ".bias", {xk[i]->cout}, &xk[i]->bias);
    s.hw[i] = &g.reg(prefix + ".w_h" + gate[i] + ".weight",
                     {hk[i]->kh, hk[i]->kw, hk[i]->cin, hk[i]->cout}, &hk[i]->data);
  }
  const char* pn[3] = {"peep_i", "peep_f", "peep_o"};
  for (int i = 0; i < 3; ++i)
    s.peep[i] = &g.reg(prefix + "." + pn[i], {static_cast<int>(peeps[i]->size())}, peeps[i]);
}

void apply_direction(const ConvLSTMGrads& g, LstmFusion::DirSlots& s) {
  const ops::ConvGrads* xg[4] = {&g.xi, &g.xf, &g.xc, &g.xo};
  const Kernel4* hg[4] = {&g.hi, &g.hf, &g.hc, &g.ho};
  for (int i = 0; i < 4; ++i) {
    add_into(s.xw[i], xg[i]->grad_kernel.data);
    add_into(s.xb[i], xg[i]->grad_kernel.bias);
    add_into(s.hw[i], hg[i]->data);
  }
  add_into(s.peep[0], g.peep_i);
  add_into(s.peep[1], g.peep_f);
  add_into(s.peep[2], g.peep_o);
}

}  // namespace

void LstmFusion::reg(ModelGraph& g, const std::string& prefix) {
  reg_direction(g, prefix + ".fwd", p.fwd, sf);
  reg_direction(g, prefix + ".bwd", p.bwd, sb);
  py_fw = &g.reg(prefix + ".w_y_fwd.weight",
                 {p.w_y_fwd.kh, p.w_y_fwd.kw, p.w_y_fwd.cin, p.w_y_fwd.cout},
                 &p.w_y_fwd.data);
  py_fb = &g.reg(prefix + ".b_y", {p.w_y_fwd.cout}, &p.w_y_fwd.bias);
  py_bw = &g.reg(prefix + ".w_y_bwd.weight",
                 {p.w_y_bwd.kh, p.w_y_bwd.kw, p.w_y_bwd.cin, p.w_y_bwd.cout},
                 &p.w_y_bwd.data);
}

std::pair<Tensor4, Tensor4> LstmFusion::backward(const Tensor4& grad) {
  BConvLSTMGrads g = bconvlstm_backward(grad, cache, p);
  apply_direction(g.fwd, sf);
  apply_direction(g.bwd, sb);
  add_into(py_fw, g.y_fwd.grad_kernel.data);
  add_into(py_fb, g.y_fwd.grad_kernel.bias);
  add_into(py_bw, g.y_bwd.grad_kernel.data);
  return {std::move(g.grad_enc), std::move(g.grad_dec)};
}

// ---- UpConv ---------------------------------------------------------------

void UpConv::init(int cin, int cout) { k = Kernel4(2, 2, cin, cout); }

void UpConv::reg(ModelGraph& g, const std::string& prefix) {
  pw = &g.reg(prefix + ".weight", {k.kh, k.kw, k.cin, k.cout}, &k.data);
  pb = &g.reg(prefix + ".bias", {k.cout}, &k.bias);
}

Tensor4 UpConv::forward(const Tensor4& x, bool train) {
  if (train) in_cache = x;
  return ops::transposed_conv2x2(x, k);
}

Tensor4 UpConv::backward(const Tensor4& grad) {
  ops::ConvGrads cg = ops::transposed_conv2x2_backward(grad, in_cache, k);
  add_into(pw, cg.grad_kernel.data);
  add_into(pb, cg.grad_kernel.bias);
  return std::move(cg.grad_input);
}

}  // namespace detail

// ---- ModelGraph -----------------------------------------------------------

ModelGraph::ModelGraph(const NetworkSpec& spec) : spec_(spec) {
  spec_.validate();
  const auto& f = spec_.base_filters;
  const bool incept = spec_.variant == Variant::Inceptnet;

  auto make_block = [&](int cin, int width, int n_mods) -> std::unique_ptr<detail::Block> {
    if (incept)
      return std::make_unique<detail::InceptionBlock>(
          cin, width, frac32(width, spec_.branch_mid32_a),
          frac32(width, spec_.branch_mid32_b), n_mods);
    return std::make_unique<detail::TwoConvBlock>(cin, width);
  };

  const int enc_in[3] = {spec_.in_c, f[0], f[1]};
  for (int i = 0; i < 3; ++i) enc_[i].block = make_block(enc_in[i], f[i], 2);

  bottleneck_.push_back(make_block(f[2], f[3], 1));
  if (spec_.d == 3) {
    bottleneck_.push_back(make_block(f[3], f[3], 1));
    bottleneck_.push_back(make_block(2 * f[3], f[3], 1));
  }

  for (int j = 0; j < 3; ++j) {
    const int lvl = 2 - j;
    const int cin_up = (j == 0) ? f[3] : f[lvl + 1];
    dec_[j].up.init(cin_up, f[lvl]);
    dec_[j].bn.init(f[lvl]);
    if (spec_.variant == Variant::Unet) {
      dec_[j].fuse = std::make_unique<detail::ConcatFusion>();
    } else {
      dec_[j].fuse = std::make_unique<detail::LstmFusion>(
          f[lvl], frac32(f[lvl], spec_.lstm_hidden32), frac32(f[lvl], spec_.fused32));
    }
    dec_[j].block = make_block(dec_[j].fuse->out_channels(f[lvl]), f[lvl], 2);
    dec_[j].drop.rate = spec_.dropout_rate;
    dec_[j].drop.seed = spec_.seed;
    dec_[j].drop.layer_id = static_cast<uint64_t>(j + 1);
  }

  head_.init(1, 1, f[0], 1, detail::ConvUnit::Act::Sigmoid);

  for (int i = 0; i < 3; ++i) enc_[i].block->reg(*this, "enc" + std::to_string(i));
  for (size_t b = 0; b < bottleneck_.size(); ++b)
    bottleneck_[b]->reg(*this, "bott" + std::to_string(b));
  for (int j = 0; j < 3; ++j) {
    const std::string pre = "dec" + std::to_string(2 - j);
    dec_[j].up.reg(*this, pre + ".up");
    dec_[j].bn.reg(*this, pre + ".bn");
    dec_[j].fuse->reg(*this, pre + ".lstm");
    dec_[j].block->reg(*this, pre + ".block");
  }
  head_.reg(*this, "head");

  init_params();
}

Parameter& ModelGraph::reg(std::string name, std::vector<int> dims,
                           std::vector<double>* value, bool trainable) {
  size_t expect = 1;
  for (int d : dims) expect *= static_cast<size_t>(d);
  if (expect != value->size())
    throw std::logic_error("parameter '" + name + "': dims do not match storage");
  Parameter p;
  p.name = std::move(name);
  p.dims = std::move(dims);
  p.value = value;
  p.trainable = trainable;
  p.grad.assign(value->size(), 0.0);
  p.adam_m.assign(value->size(), 0.0);
  p.adam_v.assign(value->size(), 0.0);
  params_.push_back(std::move(p));
  return params_.back();
}

void ModelGraph::init_params() {
  uint64_t idx = 0;
  for (auto& p : params_) {
    ++idx;
    if (!p.trainable) continue;
    // conv weights get He-style truncated-normal init; everything else keeps
    // its constructor value (biases and peepholes 0, gamma 1).
    if (p.dims.size() == 4 && p.name.size() > 7 &&
        p.name.compare(p.name.size() - 7, 7, ".weight") == 0) {
      const double fan_in =
          static_cast<double>(p.dims[0]) * p.dims[1] * p.dims[2];
      const double stddev = std::sqrt(2.0 / fan_in);
      Rng rng(spec_.seed, (0x11ull << 56) ^ idx);
      for (double& v : *p.value) v = rng.truncated_normal(stddev);
    }
  }
}

Tensor4 ModelGraph::forward(const Tensor4& batch, bool train) {
  if (batch.h != spec_.in_h || batch.w != spec_.in_w || batch.c != spec_.in_c)
    throw std::invalid_argument("model forward: input " + batch.shape_str() +
                                " does not match spec input " + std::to_string(spec_.in_h) +
                                "x" + std::to_string(spec_.in_w) + "x" +
                                std::to_string(spec_.in_c));
  Tensor4 t = batch;
  for (int i = 0; i < 3; ++i) {
    t = enc_[i].block->forward(t, train);
    enc_[i].skip = t;
    enc_[i].in_h = t.h;
    enc_[i].in_w = t.w;
    auto pr = ops::maxpool2x2(t);
    enc_[i].pool_argmax = std::move(pr.argmax);
    t = std::move(pr.output);
  }

  if (spec_.d == 1) {
    t = bottleneck_[0]->forward(t, train);
  } else {
    Tensor4 o1 = bottleneck_[0]->forward(t, train);
    Tensor4 o2 = bottleneck_[1]->forward(o1, train);
    t = bottleneck_[2]->forward(ops::concat_channels(o1, o2), train);
  }

  for (int j = 0; j < 3; ++j) {
    const int lvl = 2 - j;
    Tensor4 u = dec_[j].up.forward(t, train);
    u = dec_[j].bn.forward(u, train);
    Tensor4 fused = dec_[j].fuse->fuse(enc_[lvl].skip, u, train);
    t = dec_[j].block->forward(fused, train);
    t = dec_[j].drop.forward(t, train);
  }

  Tensor4 out = head_.forward(t, train);
  has_cache_ = train;
  return out;
}

void ModelGraph::backward(const Tensor4& grad_loss) {
  if (!has_cache_)
    throw std::logic_error("model backward: no preceding train-mode forward pass");

  Tensor4 g = head_.backward(grad_loss);

  std::array<Tensor4, 3> skip_grad;
  for (int j = 2; j >= 0; --j) {
    const int lvl = 2 - j;
    g = dec_[j].drop.backward(g);
    g = dec_[j].block->backward(g);
    auto [g_enc, g_dec] = dec_[j].fuse->backward(g);
    skip_grad[lvl] = std::move(g_enc);
    g = dec_[j].bn.backward(g_dec);
    g = dec_[j].up.backward(g);
  }

  if (spec_.d == 1) {
    g = bottleneck_[0]->backward(g);
  } else {
    Tensor4 gcat = bottleneck_[2]->backward(g);
    auto [g1a, g2] = ops::split_channels(gcat, spec_.base_filters[3]);
    Tensor4 g1 = ops::add(g1a, bottleneck_[1]->backward(g2));
    g = bottleneck_[0]->backward(g1);
  }

  for (int i = 2; i >= 0; --i) {
    g = ops::maxpool2x2_backward(g, enc_[i].pool_argmax, enc_[i].in_h, enc_[i].in_w);
    g = ops::add(g, skip_grad[i]);
    g = enc_[i].block->backward(g);
  }
}

void ModelGraph::zero_grads() {
  for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
}

std::unique_ptr<ModelGraph> build_model(const NetworkSpec& spec) {
  return std::make_unique<ModelGraph>(spec);
}

void jitter_parameters(ModelGraph& graph, uint64_t seed) {
  Rng rng(seed, 0x6E);
  for (auto& p : graph.params()) {
    if (!p.trainable) continue;
    for (double& v : *p.value) {
      const double mag = 0.05 + 0.1 * rng.uniform();
      v += rng.uniform() < 0.5 ? -mag : mag;
    }
  }
}

ParamAudit count_parameters(const ModelGraph& graph) {
  ParamAudit a;
  for (const auto& p : graph.params()) {
    a.per_layer.push_back({p.name, p.dims, p.count()});
    a.total += p.count();
  }
  return a;
}

// ---- checkpoint I/O -------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'I', 'N', 'S', 'G'};
constexpr uint16_t kVersion = 1;

void wr_u16(std::ostream& os, uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                              static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

void wr_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

void wr_f64(std::ostream& os, double d) {
  uint64_t v;
  std::memcpy(&v, &d, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

uint16_t rd_u16(std::istream& is) {
  unsigned char b[2];
  if (!is.read(reinterpret_cast<char*>(b), 2))
    throw std::runtime_error("checkpoint: truncated file");
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

uint32_t rd_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw std::runtime_error("checkpoint: truncated file");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

double rd_f64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw std::runtime_error("checkpoint: truncated file");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}

std::string read_header_spec(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic (not an INSG file)");
  const uint16_t version = rd_u16(is);
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  const uint32_t len = rd_u32(is);
  std::string text(len, '\0');
  if (!is.read(text.data(), len)) throw std::runtime_error("checkpoint: truncated file");
  return text;
}

}  // namespace

void save_checkpoint(const ModelGraph& graph, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  os.write(kMagic, 4);
  wr_u16(os, kVersion);
  const std::string spec = graph.spec().canonical();
  wr_u32(os, static_cast<uint32_t>(spec.size()));
  os.write(spec.data(), static_cast<std::streamsize>(spec.size()));
  for (const auto& p : graph.params()) {
    wr_u32(os, static_cast<uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    os.put(static_cast<char>(p.dims.size()));
    for (int d : p.dims) wr_u32(os, static_cast<uint32_t>(d));
    for (double v : *p.value) wr_f64(os, v);
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

NetworkSpec checkpoint_spec(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  return NetworkSpec::parse_canonical(read_header_spec(is));
}

std::unique_ptr<ModelGraph> load_checkpoint(const std::string& path,
                                            const NetworkSpec& expected_spec) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  const std::string spec_text = read_header_spec(is);
  if (spec_text != expected_spec.canonical())
    throw std::runtime_error("checkpoint: spec mismatch (file has '" + spec_text +
                             "', expected '" + expected_spec.canonical() + "')");
  auto graph = build_model(expected_spec);
  for (auto& p : graph->params()) {
    const uint32_t name_len = rd_u32(is);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len))
      throw std::runtime_error("checkpoint: truncated file");
    if (name != p.name)
      throw std::runtime_error("checkpoint: parameter name mismatch ('" + name +
                               "' vs expected '" + p.name + "')");
    const int rank = is.get();
    if (rank == EOF) throw std::runtime_error("checkpoint: truncated file");
    if (static_cast<size_t>(rank) != p.dims.size())
      throw std::runtime_error("checkpoint: rank mismatch for '" + name + "'");
    for (int d : p.dims)
      if (rd_u32(is) != static_cast<uint32_t>(d))
        throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
    for (double& v : *p.value) v = rd_f64(is);
  }
  if (is.peek() != EOF)
    throw std::runtime_error("checkpoint: trailing data after last parameter");
  return graph;
}

}  // namespace iseg
