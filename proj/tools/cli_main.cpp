#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "CLI11.hpp"
#include "inceptseg/data.hpp"
#include "inceptseg/errors.hpp"
#include "inceptseg/metrics.hpp"
#include "inceptseg/network.hpp"
#include "inceptseg/training.hpp"

namespace fs = std::filesystem;
using namespace iseg;

namespace {

// ---- flat key/value run configuration ---------------------------------------

using Config = std::map<std::string, std::string>;

void load_config_file(Config& cfg, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("config: cannot open '" + path + "'");
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(lineno) +
                        " is not 'key = value': '" + line + "'");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config: empty key on line " + std::to_string(lineno));
    cfg[key] = val;
  }
}

// reads a key, recording the default into the config so the resolved
// snapshot lists every value the run actually used
std::string get(Config& cfg, const std::string& key, const std::string& def) {
  auto it = cfg.find(key);
  if (it == cfg.end()) it = cfg.emplace(key, def).first;
  return it->second;
}

int get_int(Config& cfg, const std::string& key, int def) {
  const std::string v = get(cfg, key, std::to_string(def));
  try {
    size_t pos = 0;
    const int r = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " must be an integer, got '" + v + "'");
  }
}

double get_real(Config& cfg, const std::string& key, double def) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", def);
  const std::string v = get(cfg, key, buf);
  try {
    size_t pos = 0;
    const double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " must be a real number, got '" + v + "'");
  }
}

uint64_t get_u64(Config& cfg, const std::string& key, uint64_t def) {
  const std::string v = get(cfg, key, std::to_string(def));
  try {
    size_t pos = 0;
    const uint64_t r = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " must be a non-negative integer, got '" + v + "'");
  }
}

NetworkSpec network_from(Config& cfg, uint64_t default_seed) {
  NetworkSpec s;
  try {
    s.variant = variant_from_name(get(cfg, "network.variant", "inceptnet"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  s.d = get_int(cfg, "network.d", 1);
  s.base_filters.clear();
  std::stringstream fsrc(get(cfg, "network.filters", "64,128,256,512"));
  std::string tok;
  while (std::getline(fsrc, tok, ',')) {
    try {
      size_t pos = 0;
      s.base_filters.push_back(std::stoi(tok, &pos));
      if (pos != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ConfigError("config: network.filters must be a comma-separated integer list");
    }
  }
  const std::string in = get(cfg, "network.input", "64x64x1");
  if (std::sscanf(in.c_str(), "%dx%dx%d", &s.in_h, &s.in_w, &s.in_c) != 3)
    throw ConfigError("config: network.input must look like HxWxC, got '" + in + "'");
  s.dropout_rate = get_real(cfg, "network.dropout", 0.5);
  s.seed = get_u64(cfg, "network.seed", default_seed);
  s.branch_mid32_a = get_int(cfg, "network.mid_a", 15);
  s.branch_mid32_b = get_int(cfg, "network.mid_b", 12);
  s.lstm_hidden32 = get_int(cfg, "network.hidden", 6);
  s.fused32 = get_int(cfg, "network.fused", 24);
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return s;
}

TrainConfig train_from(Config& cfg, uint64_t default_seed) {
  TrainConfig t;
  t.learning_rate = get_real(cfg, "train.learning_rate", t.learning_rate);
  t.beta1 = get_real(cfg, "train.beta1", t.beta1);
  t.beta2 = get_real(cfg, "train.beta2", t.beta2);
  t.epsilon = get_real(cfg, "train.epsilon", t.epsilon);
  t.batch_size = get_int(cfg, "train.batch_size", t.batch_size);
  t.max_epochs = get_int(cfg, "train.max_epochs", t.max_epochs);
  t.patience = get_int(cfg, "train.patience", t.patience);
  t.min_delta = get_real(cfg, "train.min_delta", t.min_delta);
  t.seed = get_u64(cfg, "train.seed", default_seed);
  t.target_train_loss = get_real(cfg, "train.target_loss", t.target_train_loss);
  t.target_train_accuracy = get_real(cfg, "train.target_accuracy", t.target_train_accuracy);
  return t;
}

void write_snapshot(const Config& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  const std::string path = (fs::path(out_dir) / "config.resolved").string();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("config: cannot write snapshot '" + path + "'");
  for (const auto& [k, v] : cfg) os << k << " = " << v << "\n";
}

std::vector<fs::path> list_images(const std::string& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("'" + dir + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string ext = e.path().extension().string();
    if (ext == ".pgm" || ext == ".ppm" || ext == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

// ---- finite-difference harness for gradcheck --------------------------------

constexpr double kStep = 1e-4;

double rel_err(double a, double b) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-6});
}

// central plus one-sided quotients; at a relu/maxpool kink the one-sided
// slopes differ and any value between them is a valid subgradient
double coord_err(const std::function<double()>& loss, double* slot, double analytic) {
  const double orig = *slot;
  const double l0 = loss();
  *slot = orig + kStep;
  const double lp = loss();
  *slot = orig - kStep;
  const double lm = loss();
  *slot = orig;
  const double central = (lp - lm) / (2.0 * kStep);
  const double left = (l0 - lm) / kStep, right = (lp - l0) / kStep;
  if (rel_err(left, right) < 1e-2) return rel_err(analytic, central);
  const double lo = std::min(left, right), hi = std::max(left, right);
  const double margin = 1e-3 * std::max({std::fabs(lo), std::fabs(hi), 1e-6});
  return (analytic < lo - margin || analytic > hi + margin) ? 1.0 : 0.0;
}

struct GradTarget {
  double* value;
  const double* grad;
  size_t count;
};

double check_targets(const std::function<double()>& loss,
                     const std::vector<GradTarget>& targets) {
  double worst = 0.0;
  for (const auto& t : targets)
    for (size_t i = 0; i < t.count; ++i)
      worst = std::max(worst, coord_err(loss, t.value + i, t.grad[i]));
  return worst;
}

Tensor4 rand_tensor(int n, int h, int w, int c, Rng& rng, double lo = -1.0,
                    double hi = 1.0) {
  Tensor4 t(n, h, w, c);
  for (double& v : t.data) v = lo + (hi - lo) * rng.uniform();
  return t;
}

Kernel4 rand_kernel(int kh, int kw, int cin, int cout, Rng& rng) {
  Kernel4 k(kh, kw, cin, cout);
  for (double& v : k.data) v = 0.5 * (2.0 * rng.uniform() - 1.0);
  for (double& v : k.bias) v = 0.5 * (2.0 * rng.uniform() - 1.0);
  return k;
}

double dot(const Tensor4& a, const Tensor4& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

void rand_lstm(ConvLSTMParams& p, Rng& rng) {
  for (Kernel4* k : {&p.w_xi, &p.w_xf, &p.w_xc, &p.w_xo, &p.w_hi, &p.w_hf, &p.w_hc,
                     &p.w_ho}) {
    for (double& v : k->data) v = 0.4 * (2.0 * rng.uniform() - 1.0);
    for (double& v : k->bias) v = 0.2 * (2.0 * rng.uniform() - 1.0);
  }
  for (std::vector<double>* pe : {&p.peep_i, &p.peep_f, &p.peep_o})
    for (double& v : *pe) v = 0.3 * (2.0 * rng.uniform() - 1.0);
}

// ---- subcommands -------------------------------------------------------------

int cmd_audit(Config& cfg, uint64_t seed, const std::string& out_dir,
              long long expect, double tol) {
  const NetworkSpec spec = network_from(cfg, seed);
  auto graph = build_model(spec);
  const ParamAudit audit = count_parameters(*graph);

  std::printf("%-40s %-20s %12s\n", "layer", "dims", "params");
  for (const auto& l : audit.per_layer) {
    std::string dims;
    for (size_t i = 0; i < l.dims.size(); ++i)
      dims += (i ? "x" : "") + std::to_string(l.dims[i]);
    std::printf("%-40s %-20s %12zu\n", l.name.c_str(), dims.c_str(), l.count);
  }
  std::printf("%-40s %-20s %12zu\n", "TOTAL", "", audit.total);
  std::printf("spec: %s\n", spec.canonical().c_str());

  if (!out_dir.empty()) write_snapshot(cfg, out_dir);
  if (expect > 0) {
    const double rel =
        std::fabs(static_cast<double>(audit.total) - static_cast<double>(expect)) /
        static_cast<double>(expect);
    std::printf("expected %lld, relative gap %.4f%% (tolerance %.4f%%): %s\n", expect,
                100.0 * rel, 100.0 * tol, rel <= tol ? "PASS" : "FAIL");
    if (rel > tol) return 1;
  }
  return 0;
}

int cmd_synth(Config& cfg, uint64_t seed, const std::string& out_dir) {
  const int count = get_int(cfg, "data.count", 16);
  const int size = get_int(cfg, "data.size", 64);
  const std::string scale = get(cfg, "data.scale", "small");
  const auto data = generate_synthetic(count, size, scale, get_u64(cfg, "data.seed", seed));
  fs::create_directories(fs::path(out_dir) / "images");
  fs::create_directories(fs::path(out_dir) / "masks");
  for (const auto& s : data) {
    save_pgm((fs::path(out_dir) / "images" / (s.source_id + ".pgm")).string(), s.image);
    save_pgm((fs::path(out_dir) / "masks" / (s.source_id + ".pgm")).string(), s.mask);
  }
  write_snapshot(cfg, out_dir);
  std::printf("wrote %d %s-structure images (%dx%d) under %s\n", count, scale.c_str(),
              size, size, out_dir.c_str());
  return 0;
}

int cmd_train(Config& cfg, uint64_t seed, const std::string& out_dir) {
  const std::string synthetic = get(cfg, "data.synthetic", "");
  std::vector<SamplePair> data;
  int size = get_int(cfg, "data.size", 64);
  if (!synthetic.empty()) {
    const int count = get_int(cfg, "data.count", 16);
    data = generate_synthetic(count, size, synthetic, get_u64(cfg, "data.seed", seed));
    char in[64];
    std::snprintf(in, sizeof in, "%dx%dx1", size, size);
    if (!cfg.count("network.input")) cfg["network.input"] = in;
  } else {
    const std::string dir = get(cfg, "data.dir", "");
    if (dir.empty())
      throw ConfigError("train: set data.dir or data.synthetic (small|large)");
    data = load_dataset_dir(dir, get(cfg, "data.grayscale", "1") != "0");
    NetworkSpec probe = network_from(cfg, seed);
    data = resize_dataset(data, probe.in_h, probe.in_w);
  }

  const double val_fraction = get_real(cfg, "data.val_fraction", 0.2);
  std::vector<SamplePair> train_set, val_set;
  if (val_fraction == 0.0) {
    train_set = data;  // overfit runs validate on the training set
    val_set = data;
  } else {
    std::tie(train_set, val_set) =
        split_train_val(data, val_fraction, get_u64(cfg, "data.split_seed", seed));
    if (val_set.empty()) val_set = train_set;
  }

  const NetworkSpec spec = network_from(cfg, seed);
  const TrainConfig tcfg = train_from(cfg, seed);
  write_snapshot(cfg, out_dir);

  auto graph = build_model(spec);
  const TrainResult result = train(*graph, train_set, val_set, tcfg, out_dir);

  const EpochLog& last = result.logs.back();
  std::printf("ran %zu epochs; final train loss %.6f acc %.6f, val loss %.6f acc %.6f\n",
              result.logs.size(), last.train_loss, last.train_acc, last.val_loss,
              last.val_acc);
  std::printf("best checkpoint: %s\n", result.best_checkpoint.c_str());
  return 0;
}

int cmd_predict(Config& cfg, const std::string& ckpt, const std::string& images_dir,
                const std::string& out_dir) {
  const NetworkSpec spec = checkpoint_spec(ckpt);
  auto graph = load_checkpoint(ckpt, spec);
  const double threshold = get_real(cfg, "threshold", 0.5);

  const auto files = list_images(images_dir);
  if (files.empty()) throw ConfigError("predict: no images in '" + images_dir + "'");
  fs::create_directories(fs::path(out_dir) / "prob");
  fs::create_directories(fs::path(out_dir) / "masks");
  write_snapshot(cfg, out_dir);

  for (const auto& f : files) {
    Tensor4 img = load_image(f.string());
    if (img.c == 3 && spec.in_c == 1) img = to_grayscale(img);
    if (img.h != spec.in_h || img.w != spec.in_w || img.c != spec.in_c)
      throw ConfigError("predict: " + f.filename().string() + " is " + img.shape_str() +
                        " but the checkpoint expects " + std::to_string(spec.in_h) + "x" +
                        std::to_string(spec.in_w) + "x" + std::to_string(spec.in_c));
    const Tensor4 prob = graph->forward(img, false);
    Tensor4 mask = prob;
    for (double& v : mask.data) v = v >= threshold ? 1.0 : 0.0;
    const std::string stem = f.stem().string();
    save_pgm16((fs::path(out_dir) / "prob" / (stem + ".pgm")).string(), prob);
    save_pgm((fs::path(out_dir) / "masks" / (stem + ".pgm")).string(), mask);
  }
  std::printf("wrote %zu probability maps and masks under %s\n", files.size(),
              out_dir.c_str());
  return 0;
}

int cmd_eval(Config& cfg, const std::string& pred_dir, const std::string& truth_dir,
             const std::string& scores_dir, const std::string& out_dir) {
  std::map<std::string, fs::path> pred, truth;
  for (const auto& f : list_images(pred_dir)) pred[f.stem().string()] = f;
  for (const auto& f : list_images(truth_dir)) truth[f.stem().string()] = f;

  std::vector<std::string> only_pred, only_truth;
  for (const auto& [s, p] : pred)
    if (!truth.count(s)) only_pred.push_back(s);
  for (const auto& [s, p] : truth)
    if (!pred.count(s)) only_truth.push_back(s);
  if (!only_pred.empty() || !only_truth.empty()) {
    std::string msg = "eval: unmatched stems:";
    for (const auto& s : only_pred) msg += " " + s + "(pred only)";
    for (const auto& s : only_truth) msg += " " + s + "(truth only)";
    throw ConfigError(msg);
  }
  if (pred.empty()) throw ConfigError("eval: no images in '" + pred_dir + "'");

  auto binarize = [](Tensor4 t, const std::string& what) {
    for (double& v : t.data) {
      if (v != 0.0 && v != 1.0) {
        if (v > 0.0 && v < 1.0)
          v = v >= 0.5 ? 1.0 : 0.0;
        else
          throw ConfigError("eval: " + what + " is not a binary mask");
      }
    }
    return t;
  };

  EvalReport rep;
  ConfusionCounts pooled;
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& [stem, ppath] : pred) {
    const Tensor4 pm = binarize(load_image(ppath.string()), ppath.filename().string());
    const Tensor4 tm = binarize(load_image(truth[stem].string()),
                                truth[stem].filename().string());
    if (pm.h != tm.h || pm.w != tm.w)
      throw ConfigError("eval: size mismatch for stem '" + stem + "'");
    const ConfusionCounts c = confusion(pm, tm);
    pooled.tp += c.tp;
    pooled.fp += c.fp;
    pooled.tn += c.tn;
    pooled.fn += c.fn;
    const ScalarMetrics sm = scalar_metrics(c);
    rep.macro_accuracy += sm.accuracy;
    rep.macro_sensitivity += sm.sensitivity;
    rep.macro_specificity += sm.specificity;
    rep.macro_precision += sm.precision;
    rep.macro_f1 += sm.f1;
    rep.macro_jaccard += jaccard(c).value;
    ++rep.image_count;

    if (!scores_dir.empty()) {
      const fs::path spath = fs::path(scores_dir) / (stem + ".pgm");
      if (!fs::exists(spath))
        throw ConfigError("eval: missing score map '" + spath.string() + "'");
      const Tensor4 sc = load_pgm16(spath.string());
      if (sc.size() != tm.size())
        throw ConfigError("eval: score map size mismatch for stem '" + stem + "'");
      for (size_t i = 0; i < sc.data.size(); ++i) {
        scores.push_back(sc.data[i]);
        labels.push_back(tm.data[i] >= 0.5 ? 1 : 0);
      }
    }
  }
  rep.macro_accuracy /= rep.image_count;
  rep.macro_sensitivity /= rep.image_count;
  rep.macro_specificity /= rep.image_count;
  rep.macro_precision /= rep.image_count;
  rep.macro_f1 /= rep.image_count;
  rep.macro_jaccard /= rep.image_count;
  rep.micro = make_report(pooled, scores, labels);

  fs::create_directories(out_dir);
  write_snapshot(cfg, out_dir);
  write_metrics_csv((fs::path(out_dir) / "metrics.csv").string(), "eval", rep);
  if (rep.micro.auc_defined)
    write_roc_csv((fs::path(out_dir) / "roc.csv").string(), roc_auc(scores, labels));

  std::printf("images %d | micro: acc %.6f se %.6f sp %.6f prec %.6f f1 %.6f js %.6f",
              rep.image_count, rep.micro.scalars.accuracy, rep.micro.scalars.sensitivity,
              rep.micro.scalars.specificity, rep.micro.scalars.precision,
              rep.micro.scalars.f1, rep.micro.jaccard);
  if (rep.micro.auc_defined) std::printf(" auc %.6f", rep.micro.auc);
  std::printf("\nreports under %s\n", out_dir.c_str());
  return 0;
}

int cmd_gradcheck(const std::string& scope) {
  bool fail = false;
  auto report = [&](const std::string& name, double worst, double threshold) {
    const bool ok = worst < threshold;
    std::printf("%-18s worst relative error %.3e  %s\n", name.c_str(), worst,
                ok ? "PASS" : "FAIL");
    if (!ok) fail = true;
  };

  if (scope == "op") {
    Rng rng(2024, 0);
    {
      Tensor4 x = rand_tensor(1, 5, 5, 3, rng);
      Kernel4 k = rand_kernel(3, 3, 3, 4, rng);
      for (ops::Padding pad : {ops::Padding::Same, ops::Padding::Valid}) {
        const Tensor4 y0 = ops::conv2d(x, k, pad);
        Tensor4 ww = rand_tensor(y0.n, y0.h, y0.w, y0.c, rng);
        auto loss = [&] { return dot(ops::conv2d(x, k, pad), ww); };
        const ops::ConvGrads g = ops::conv2d_backward(ww, x, k, pad);
        report(pad == ops::Padding::Same ? "conv2d(same)" : "conv2d(valid)",
               check_targets(loss, {{x.data.data(), g.grad_input.data.data(), x.size()},
                                    {k.data.data(), g.grad_kernel.data.data(), k.data.size()},
                                    {k.bias.data(), g.grad_kernel.bias.data(), k.bias.size()}}),
               1e-4);
      }
    }
    {
      Tensor4 x = rand_tensor(1, 3, 3, 2, rng);
      Kernel4 k = rand_kernel(2, 2, 2, 3, rng);
      Tensor4 ww = rand_tensor(1, 6, 6, 3, rng);
      auto loss = [&] { return dot(ops::transposed_conv2x2(x, k), ww); };
      const ops::ConvGrads g = ops::transposed_conv2x2_backward(ww, x, k);
      report("transposed_conv",
             check_targets(loss, {{x.data.data(), g.grad_input.data.data(), x.size()},
                                  {k.data.data(), g.grad_kernel.data.data(), k.data.size()},
                                  {k.bias.data(), g.grad_kernel.bias.data(), k.bias.size()}}),
             1e-4);
    }
    {
      Tensor4 x = rand_tensor(1, 4, 4, 2, rng);
      Tensor4 ww = rand_tensor(1, 2, 2, 2, rng);
      auto loss = [&] { return dot(ops::maxpool2x2(x).output, ww); };
      const auto pr = ops::maxpool2x2(x);
      const Tensor4 g = ops::maxpool2x2_backward(ww, pr.argmax, x.h, x.w);
      report("maxpool2x2",
             check_targets(loss, {{x.data.data(), g.data.data(), x.size()}}), 1e-4);
    }
    {
      detail::BatchNorm bn;
      bn.init(3);
      Parameter pg, pb;
      pg.value = &bn.gamma;
      pg.grad.assign(3, 0.0);
      pb.value = &bn.beta;
      pb.grad.assign(3, 0.0);
      bn.pg = &pg;
      bn.pb = &pb;
      for (double& v : bn.gamma) v = 0.5 + rng.uniform();
      for (double& v : bn.beta) v = rng.uniform() - 0.5;
      Tensor4 x = rand_tensor(2, 3, 3, 3, rng);
      Tensor4 ww = rand_tensor(2, 3, 3, 3, rng);
      auto loss = [&] { return dot(bn.forward(x, true), ww); };
      bn.forward(x, true);
      const Tensor4 g = bn.backward(ww);
      report("batchnorm",
             check_targets(loss, {{x.data.data(), g.data.data(), x.size()},
                                  {bn.gamma.data(), pg.grad.data(), 3},
                                  {bn.beta.data(), pb.grad.data(), 3}}),
             1e-4);
    }
    {
      Tensor4 x(1, 3, 3, 2);
      for (double& v : x.data) {  // keep clear of the kink at 0
        const double m = 0.1 + 0.9 * rng.uniform();
        v = rng.uniform() < 0.5 ? -m : m;
      }
      Tensor4 ww = rand_tensor(1, 3, 3, 2, rng);
      auto loss = [&] { return dot(ops::relu(x), ww); };
      const Tensor4 y = ops::relu(x);
      const Tensor4 g = ops::relu_backward(ww, y);
      report("relu", check_targets(loss, {{x.data.data(), g.data.data(), x.size()}}),
             1e-4);
    }
    {
      Tensor4 x = rand_tensor(1, 3, 3, 2, rng);
      Tensor4 ww = rand_tensor(1, 3, 3, 2, rng);
      auto l1 = [&] { return dot(ops::sigmoid(x), ww); };
      const Tensor4 gs = ops::sigmoid_backward(ww, ops::sigmoid(x));
      report("sigmoid", check_targets(l1, {{x.data.data(), gs.data.data(), x.size()}}),
             1e-4);
      auto l2 = [&] { return dot(ops::tanh(x), ww); };
      const Tensor4 gt = ops::tanh_backward(ww, ops::tanh(x));
      report("tanh", check_targets(l2, {{x.data.data(), gt.data.data(), x.size()}}),
             1e-4);
    }
    {
      ConvLSTMParams p = ConvLSTMParams::make(2, 2, 3);
      rand_lstm(p, rng);
      Tensor4 x = rand_tensor(1, 4, 4, 2, rng);
      ConvLSTMState st{rand_tensor(1, 4, 4, 2, rng), rand_tensor(1, 4, 4, 2, rng)};
      Tensor4 wh = rand_tensor(1, 4, 4, 2, rng), wc = rand_tensor(1, 4, 4, 2, rng);
      auto loss = [&] {
        const ConvLSTMState nx = convlstm_step(x, st, p);
        return dot(nx.h, wh) + dot(nx.c, wc);
      };
      ConvLSTMStepCache cache;
      convlstm_step(x, st, p, &cache);
      const ConvLSTMGrads g = convlstm_step_backward(wh, wc, cache, p);
      std::vector<GradTarget> targets = {
          {x.data.data(), g.grad_x.data.data(), x.size()},
          {st.h.data.data(), g.grad_h_prev.data.data(), st.h.size()},
          {st.c.data.data(), g.grad_c_prev.data.data(), st.c.size()},
          {p.w_xi.data.data(), g.xi.grad_kernel.data.data(), p.w_xi.data.size()},
          {p.w_xi.bias.data(), g.xi.grad_kernel.bias.data(), p.w_xi.bias.size()},
          {p.w_hf.data.data(), g.hf.data.data(), p.w_hf.data.size()},
          {p.peep_o.data(), g.peep_o.data(), p.peep_o.size()}};
      report("convlstm_step", check_targets(loss, targets), 1e-4);
    }
    {
      BConvLSTMParams p = BConvLSTMParams::make(3, 2, 4, 3, 1);
      rand_lstm(p.fwd, rng);
      rand_lstm(p.bwd, rng);
      for (Kernel4* k : {&p.w_y_fwd, &p.w_y_bwd})
        for (double& v : k->data) v = 0.4 * (2.0 * rng.uniform() - 1.0);
      for (double& v : p.w_y_fwd.bias) v = 0.2 * (2.0 * rng.uniform() - 1.0);
      Tensor4 xe = rand_tensor(1, 4, 4, 3, rng), xd = rand_tensor(1, 4, 4, 3, rng);
      Tensor4 ww = rand_tensor(1, 4, 4, 4, rng);
      auto loss = [&] { return dot(bconvlstm_fuse(xe, xd, p), ww); };
      BConvLSTMCache cache;
      bconvlstm_fuse(xe, xd, p, &cache);
      const BConvLSTMGrads g = bconvlstm_backward(ww, cache, p);
      std::vector<GradTarget> targets = {
          {xe.data.data(), g.grad_enc.data.data(), xe.size()},
          {xd.data.data(), g.grad_dec.data.data(), xd.size()},
          {p.w_y_fwd.data.data(), g.y_fwd.grad_kernel.data.data(), p.w_y_fwd.data.size()},
          {p.w_y_fwd.bias.data(), g.y_fwd.grad_kernel.bias.data(), p.w_y_fwd.bias.size()},
          {p.w_y_bwd.data.data(), g.y_bwd.grad_kernel.data.data(), p.w_y_bwd.data.size()},
          {p.fwd.w_xc.data.data(), g.fwd.xc.grad_kernel.data.data(), p.fwd.w_xc.data.size()},
          {p.bwd.w_ho.data.data(), g.bwd.ho.data.data(), p.bwd.w_ho.data.size()},
          {p.fwd.peep_f.data(), g.fwd.peep_f.data(), p.fwd.peep_f.size()}};
      report("bconvlstm_fuse", check_targets(loss, targets), 1e-4);
    }
    {
      Tensor4 p = rand_tensor(1, 4, 4, 1, rng, 0.05, 0.95);
      Tensor4 y(1, 4, 4, 1);
      for (double& v : y.data) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
      auto loss = [&] { return bce_loss(p, y).first; };
      const Tensor4 g = bce_loss(p, y).second;
      report("bce", check_targets(loss, {{p.data.data(), g.data.data(), p.size()}}),
             1e-4);
    }
  } else if (scope == "graph") {
    NetworkSpec s;
    s.variant = Variant::Inceptnet;
    s.d = 1;
    s.base_filters = {4, 8, 16, 32};
    s.in_h = s.in_w = 8;
    s.in_c = 1;
    s.dropout_rate = 0.0;
    s.seed = 7;
    auto g = build_model(s);
    jitter_parameters(*g);
    Rng rng(11, 4);
    Tensor4 x = rand_tensor(1, 8, 8, 1, rng, 0.0, 1.0);
    Tensor4 y(1, 8, 8, 1);
    for (double& v : y.data) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    auto loss = [&] { return bce_loss(g->forward(x, true), y).first; };
    const Tensor4 pred = g->forward(x, true);
    g->zero_grads();
    g->backward(bce_loss(pred, y).second);
    double worst = 0.0;
    for (auto& p : g->params()) {
      if (!p.trainable) continue;
      const size_t n = p.count(), stride = n > 20 ? n / 10 : 1;
      for (size_t i = 0; i < n; i += stride)
        worst = std::max(worst, coord_err(loss, p.value->data() + i, p.grad[i]));
    }
    report("tiny inceptnet graph", worst, 1e-3);
  } else {
    throw ConfigError("gradcheck: scope must be 'op' or 'graph', got '" + scope + "'");
  }

  if (fail) throw NumericalError("gradcheck: at least one check failed");
  std::printf("all checks passed\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"inceptseg: U-net/Inception/BConvLSTM medical-image segmentation"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out";
  uint64_t seed = 0;
  app.add_option("--config", config_path, "run-configuration file (key = value lines)");
  app.add_option("--seed", seed, "default seed for any unseeded component");
  app.add_option("--out", out_dir, "output directory");

  Config cfg;
  std::vector<std::pair<std::string, std::string>> overrides;
  auto opt = [&](CLI::App* sub, const std::string& flag, const std::string& key,
                 const std::string& help) {
    sub->add_option_function<std::string>(
        flag, [&overrides, key](const std::string& v) { overrides.emplace_back(key, v); },
        help);
  };
  // subcommand callbacks run after the full parse, so the config file and the
  // recorded flag overrides (flags win) can be merged here
  auto resolve = [&] {
    if (!config_path.empty()) load_config_file(cfg, config_path);
    for (const auto& [k, v] : overrides) cfg[k] = v;
  };

  int rc = 0;

  CLI::App* audit = app.add_subcommand("audit", "per-layer parameter counts");
  long long expect = 0;
  double tol = 0.05;
  opt(audit, "--variant", "network.variant", "unet, bcdu or inceptnet");
  opt(audit, "--d", "network.d", "dense bottleneck depth (1 or 3)");
  opt(audit, "--filters", "network.filters", "comma-separated filter ladder");
  opt(audit, "--input", "network.input", "input size HxWxC");
  audit->add_option("--expect", expect, "expected total parameter count");
  audit->add_option("--tol", tol, "relative tolerance for --expect");
  audit->callback([&] {
    resolve();
    rc = cmd_audit(cfg, seed, out_dir, expect, tol);
  });

  CLI::App* train_cmd = app.add_subcommand("train", "train a model");
  opt(train_cmd, "--variant", "network.variant", "unet, bcdu or inceptnet");
  opt(train_cmd, "--d", "network.d", "dense bottleneck depth (1 or 3)");
  opt(train_cmd, "--filters", "network.filters", "comma-separated filter ladder");
  opt(train_cmd, "--input", "network.input", "input size HxWxC");
  opt(train_cmd, "--dropout", "network.dropout", "decoder dropout rate");
  opt(train_cmd, "--data", "data.dir", "dataset root (images/ + masks/)");
  opt(train_cmd, "--synthetic", "data.synthetic", "synthetic structure scale: small|large");
  opt(train_cmd, "--size", "data.size", "synthetic image size");
  opt(train_cmd, "--count", "data.count", "synthetic image count");
  opt(train_cmd, "--val-fraction", "data.val_fraction", "validation split fraction");
  opt(train_cmd, "--lr", "train.learning_rate", "Adam learning rate");
  opt(train_cmd, "--batch-size", "train.batch_size", "minibatch size");
  opt(train_cmd, "--max-epochs", "train.max_epochs", "epoch budget");
  opt(train_cmd, "--patience", "train.patience", "early-stopping patience");
  opt(train_cmd, "--target-loss", "train.target_loss", "stop when train loss reaches this");
  opt(train_cmd, "--target-acc", "train.target_accuracy",
      "stop when train accuracy reaches this");
  train_cmd->callback([&] {
    resolve();
    rc = cmd_train(cfg, seed, out_dir);
  });

  CLI::App* predict = app.add_subcommand("predict", "probability maps + masks");
  std::string ckpt, images_dir;
  predict->add_option("--checkpoint", ckpt, "model checkpoint")->required();
  predict->add_option("--images", images_dir, "directory of input images")->required();
  opt(predict, "--threshold", "threshold", "binarization threshold");
  predict->callback([&] {
    resolve();
    rc = cmd_predict(cfg, ckpt, images_dir, out_dir);
  });

  CLI::App* eval_cmd = app.add_subcommand("eval", "metrics from mask directories");
  std::string pred_dir, truth_dir, scores_dir;
  eval_cmd->add_option("--pred", pred_dir, "predicted binary masks")->required();
  eval_cmd->add_option("--truth", truth_dir, "ground-truth masks")->required();
  eval_cmd->add_option("--scores", scores_dir, "16-bit probability maps (enables ROC/AUC)");
  opt(eval_cmd, "--threshold", "threshold", "binarization threshold");
  eval_cmd->callback([&] {
    resolve();
    rc = cmd_eval(cfg, pred_dir, truth_dir, scores_dir, out_dir);
  });

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  std::string scope = "op";
  gradcheck->add_option("--scope", scope, "op (per-primitive) or graph (tiny inceptnet)");
  gradcheck->callback([&] { rc = cmd_gradcheck(scope); });

  CLI::App* synth = app.add_subcommand("synth", "write a synthetic dataset");
  opt(synth, "--count", "data.count", "image count");
  opt(synth, "--size", "data.size", "image size");
  opt(synth, "--scale", "data.scale", "structure scale: small|large");
  synth->callback([&] {
    resolve();
    rc = cmd_synth(cfg, seed, out_dir);
  });

  // let global flags (--config/--seed/--out) appear after the subcommand name
  for (CLI::App* sub : app.get_subcommands([](const CLI::App*) { return true; }))
    sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return rc;
}
