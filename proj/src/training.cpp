#include "inceptseg/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

#include "inceptseg/errors.hpp"

namespace iseg {

namespace {

constexpr double kClamp = 1e-7;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Tensor4 stack_batch(const std::vector<SamplePair>& set, const std::vector<size_t>& order,
                    size_t begin, size_t end, bool masks) {
  const Tensor4& first = masks ? set[order[begin]].mask : set[order[begin]].image;
  Tensor4 out(static_cast<int>(end - begin), first.h, first.w, first.c);
  const size_t per = first.data.size();
  for (size_t i = begin; i < end; ++i) {
    const Tensor4& t = masks ? set[order[i]].mask : set[order[i]].image;
    if (t.data.size() != per)
      throw ConfigError("train: inconsistent sample shapes in dataset (" +
                        t.shape_str() + " vs " + first.shape_str() + ")");
    std::copy(t.data.begin(), t.data.end(), out.data.begin() + (i - begin) * per);
  }
  return out;
}

double pixel_accuracy(const Tensor4& pred, const Tensor4& target, double threshold) {
  size_t hits = 0;
  for (size_t i = 0; i < pred.data.size(); ++i)
    if ((pred.data[i] >= threshold) == (target.data[i] == 1.0)) ++hits;
  return static_cast<double>(hits) / static_cast<double>(pred.data.size());
}

}  // namespace

void TrainConfig::validate() const {
  if (patience < 1) throw ConfigError("train config: patience must be >= 1");
  if (!(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1))
    throw ConfigError("train config: betas must lie in (0,1)");
  if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
  if (max_epochs < 1) throw ConfigError("train config: max_epochs must be >= 1");
  if (!(learning_rate > 0)) throw ConfigError("train config: learning_rate must be > 0");
}

std::pair<double, Tensor4> bce_loss(const Tensor4& pred, const Tensor4& target) {
  if (!pred.same_shape(target))
    throw std::invalid_argument("bce_loss: shape mismatch " + pred.shape_str() + " vs " +
                                target.shape_str());
  for (double y : target.data)
    if (y != 0.0 && y != 1.0) throw ConfigError("bce_loss: target is not strictly binary");
  Tensor4 grad = pred;
  double sum = 0.0;
  const double inv_n = 1.0 / static_cast<double>(pred.data.size());
  for (size_t i = 0; i < pred.data.size(); ++i) {
    const double p = std::min(1.0 - kClamp, std::max(kClamp, pred.data[i]));
    const double y = target.data[i];
    sum -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
    // clamp is an identity inside the active range, zero-slope outside
    const bool clamped = pred.data[i] < kClamp || pred.data[i] > 1.0 - kClamp;
    grad.data[i] = clamped ? 0.0 : (p - y) / (p * (1.0 - p)) * inv_n;
  }
  return {sum * inv_n, std::move(grad)};
}

void adam_step(ModelGraph& graph, int t, const TrainConfig& cfg) {
  if (t < 1) throw std::logic_error("adam_step: step index t must be >= 1");
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& p : graph.params()) {
    if (!p.trainable) {
      std::fill(p.grad.begin(), p.grad.end(), 0.0);
      continue;
    }
    for (size_t i = 0; i < p.grad.size(); ++i) {
      const double g = p.grad[i];
      p.adam_m[i] = cfg.beta1 * p.adam_m[i] + (1.0 - cfg.beta1) * g;
      p.adam_v[i] = cfg.beta2 * p.adam_v[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = p.adam_m[i] / bc1;
      const double vhat = p.adam_v[i] / bc2;
      (*p.value)[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
      p.grad[i] = 0.0;
    }
  }
}

StopSim simulate_early_stopping(const std::vector<double>& val_losses, int patience,
                                double min_delta, int max_epochs) {
  StopSim s;
  double best = std::numeric_limits<double>::infinity();
  int since = 0;
  for (int e = 1; e <= max_epochs && e <= static_cast<int>(val_losses.size()); ++e) {
    s.epochs_run = e;
    if (val_losses[e - 1] < best - min_delta) {
      best = val_losses[e - 1];
      s.best_epoch = e;
      since = 0;
    } else {
      ++since;
      if (since >= patience) break;
    }
  }
  return s;
}

namespace {

struct EvalPass {
  double loss = 0, acc = 0;
};

EvalPass eval_pass(ModelGraph& graph, const std::vector<SamplePair>& set, int batch_size) {
  std::vector<size_t> order(set.size());
  std::iota(order.begin(), order.end(), 0);
  EvalPass out;
  size_t pixels = 0;
  for (size_t b = 0; b < set.size(); b += batch_size) {
    const size_t end = std::min(set.size(), b + batch_size);
    const Tensor4 x = stack_batch(set, order, b, end, false);
    const Tensor4 y = stack_batch(set, order, b, end, true);
    const Tensor4 pred = graph.forward(x, false);
    const auto [loss, grad] = bce_loss(pred, y);
    out.loss += loss * static_cast<double>(pred.data.size());
    out.acc += pixel_accuracy(pred, y, 0.5) * static_cast<double>(pred.data.size());
    pixels += pred.data.size();
  }
  out.loss /= static_cast<double>(pixels);
  out.acc /= static_cast<double>(pixels);
  return out;
}

}  // namespace

TrainResult train(ModelGraph& graph, const std::vector<SamplePair>& train_set,
                  const std::vector<SamplePair>& val_set, const TrainConfig& cfg,
                  const std::string& out_dir) {
  cfg.validate();
  if (train_set.empty() || val_set.empty())
    throw ConfigError("train: train and validation sets must be non-empty");
  std::filesystem::create_directories(out_dir);

  TrainResult result;
  result.best_checkpoint = out_dir + "/best.ckpt";
  double best_val = std::numeric_limits<double>::infinity();
  int since_improve = 0;
  int t = 0;  // Adam step index

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::vector<size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(cfg.seed, (0x5B0Full << 40) ^ static_cast<uint64_t>(epoch));
    for (size_t i = order.size() - 1; i > 0; --i)
      std::swap(order[i], order[rng.uniform_int(i + 1)]);

    double train_loss = 0, train_acc = 0;
    size_t pixels = 0;
    int batch_index = 0;
    for (size_t b = 0; b < order.size(); b += cfg.batch_size, ++batch_index) {
      const size_t end = std::min(order.size(), b + static_cast<size_t>(cfg.batch_size));
      const Tensor4 x = stack_batch(train_set, order, b, end, false);
      const Tensor4 y = stack_batch(train_set, order, b, end, true);
      const Tensor4 pred = graph.forward(x, true);
      const auto [loss, grad] = bce_loss(pred, y);
      if (!std::isfinite(loss))
        throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch) +
                             ", batch " + std::to_string(batch_index));
      train_loss += loss * static_cast<double>(pred.data.size());
      train_acc += pixel_accuracy(pred, y, 0.5) * static_cast<double>(pred.data.size());
      pixels += pred.data.size();
      graph.backward(grad);
      adam_step(graph, ++t, cfg);
    }
    train_loss /= static_cast<double>(pixels);
    train_acc /= static_cast<double>(pixels);

    const EvalPass val = eval_pass(graph, val_set, cfg.batch_size);

    EpochLog log{epoch, train_loss, train_acc, val.loss, val.acc, false};
    if (val.loss < best_val - cfg.min_delta) {
      best_val = val.loss;
      since_improve = 0;
      log.is_best = true;
      save_checkpoint(graph, result.best_checkpoint);
    } else {
      ++since_improve;
    }
    result.logs.push_back(log);

    if (train_loss <= cfg.target_train_loss && train_acc >= cfg.target_train_accuracy)
      break;
    if (!log.is_best && since_improve >= cfg.patience) break;
  }

  write_epoch_csv(out_dir + "/epochs.csv", result.logs);
  return result;
}

void write_epoch_csv(const std::string& path, const std::vector<EpochLog>& logs) {
  std::ofstream os(path);
  if (!os) throw IoError("train: cannot open '" + path + "' for writing");
  os << "epoch,train_loss,train_acc,val_loss,val_acc,is_best\n";
  for (const auto& l : logs)
    os << l.epoch << ',' << fmt(l.train_loss) << ',' << fmt(l.train_acc) << ','
       << fmt(l.val_loss) << ',' << fmt(l.val_acc) << ',' << (l.is_best ? 1 : 0) << '\n';
  if (!os) throw IoError("train: write failed for '" + path + "'");
}

EvalReport evaluate(ModelGraph& graph, const std::vector<SamplePair>& dataset,
                    double threshold) {
  if (dataset.empty()) throw ConfigError("evaluate: empty dataset");
  EvalReport rep;
  ConfusionCounts pooled;
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& s : dataset) {
    const Tensor4 pred = graph.forward(s.image, false);
    Tensor4 binary = pred;
    for (double& v : binary.data) v = v >= threshold ? 1.0 : 0.0;
    const ConfusionCounts c = confusion(binary, s.mask);
    pooled.tp += c.tp;
    pooled.fp += c.fp;
    pooled.tn += c.tn;
    pooled.fn += c.fn;
    const ScalarMetrics m = scalar_metrics(c);
    rep.macro_accuracy += m.accuracy;
    rep.macro_sensitivity += m.sensitivity;
    rep.macro_specificity += m.specificity;
    rep.macro_precision += m.precision;
    rep.macro_f1 += m.f1;
    rep.macro_jaccard += jaccard(c).value;
    scores.insert(scores.end(), pred.data.begin(), pred.data.end());
    for (double y : s.mask.data) labels.push_back(y == 1.0 ? 1 : 0);
    ++rep.image_count;
  }
  const double n = static_cast<double>(rep.image_count);
  rep.macro_accuracy /= n;
  rep.macro_sensitivity /= n;
  rep.macro_specificity /= n;
  rep.macro_precision /= n;
  rep.macro_f1 /= n;
  rep.macro_jaccard /= n;
  rep.micro = make_report(pooled, scores, labels);
  return rep;
}

}  // namespace iseg
