#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "inceptseg/data.hpp"
#include "inceptseg/metrics.hpp"
#include "inceptseg/network.hpp"

namespace iseg {

struct TrainConfig {
  double learning_rate = 1e-4, beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
  int batch_size = 8;
  int max_epochs = 50;
  int patience = 10;
  double min_delta = 1e-4;
  uint64_t seed = 0;
  // optional convergence targets: when both are met on the training set the
  // run stops early (used by the overfit capability check); negative loss /
  // accuracy > 1 disable them
  double target_train_loss = -1.0;
  double target_train_accuracy = 2.0;

  void validate() const;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0, train_acc = 0, val_loss = 0, val_acc = 0;
  bool is_best = false;
};

// Mean per-pixel binary cross-entropy with predictions clamped to
// [1e-7, 1-1e-7]; returns (scalar, d loss / d pred).
std::pair<double, Tensor4> bce_loss(const Tensor4& pred, const Tensor4& target);

// Standard Adam with bias correction; zeroes gradients after the update.
void adam_step(ModelGraph& graph, int t, const TrainConfig& cfg);

struct TrainResult {
  std::string best_checkpoint;
  std::vector<EpochLog> logs;
};

TrainResult train(ModelGraph& graph, const std::vector<SamplePair>& train_set,
                  const std::vector<SamplePair>& val_set, const TrainConfig& cfg,
                  const std::string& out_dir);

void write_epoch_csv(const std::string& path, const std::vector<EpochLog>& logs);

// The stopping rule in isolation, driven by a stubbed validation-loss
// sequence (consumed in order, truncated by the stop decision).
struct StopSim {
  int epochs_run = 0;
  int best_epoch = 0;  // 1-based
};
StopSim simulate_early_stopping(const std::vector<double>& val_losses, int patience,
                                double min_delta, int max_epochs);

EvalReport evaluate(ModelGraph& graph, const std::vector<SamplePair>& dataset,
                    double threshold = 0.5);

}  // namespace iseg
