#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "inceptseg/errors.hpp"
#include "inceptseg/training.hpp"
#include "oracle.hpp"

using namespace iseg;

namespace {

NetworkSpec tiny_spec() {
  NetworkSpec s;
  s.variant = Variant::Inceptnet;
  s.d = 1;
  s.base_filters = {4, 8, 16, 32};
  s.in_h = s.in_w = 8;
  s.in_c = 1;
  s.dropout_rate = 0.0;
  s.seed = 7;
  return s;
}

std::string read_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("bce loss analytic values") {
  Tensor4 y(1, 4, 4, 1);
  for (size_t i = 0; i < 8; ++i) y.data[i] = 1.0;
  Tensor4 p = y;
  auto [exact, g0] = bce_loss(p, y);
  CHECK(exact <= 1e-6);

  Tensor4 ones(1, 4, 4, 1, 1.0);
  Tensor4 half(1, 4, 4, 1, 0.5);
  auto [ln2, g1] = bce_loss(half, ones);
  CHECK(ln2 == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Tensor4 bad(1, 4, 4, 1, 0.3);
  CHECK_THROWS_AS(bce_loss(half, bad), ConfigError);
}

TEST_CASE("bce gradient matches finite differences") {
  Rng rng(65, 0);
  Tensor4 p = oracle::random_tensor(2, 4, 4, 1, rng, 0.05, 0.95);
  Tensor4 y(2, 4, 4, 1);
  for (size_t i = 0; i < y.data.size(); ++i) y.data[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
  auto loss = [&] { return bce_loss(p, y).first; };
  const Tensor4 g = bce_loss(p, y).second;
  CHECK(oracle::check_grad(loss, p.data.data(), g.data.data(), p.size()) < 1e-6);
}

TEST_CASE("adam closed-form single-step behavior") {
  auto g = build_model(tiny_spec());
  TrainConfig cfg;
  cfg.learning_rate = 1e-4;

  CHECK_THROWS_AS(adam_step(*g, 0, cfg), std::logic_error);

  // zero gradient leaves parameters unchanged
  std::vector<double> before = *g->params()[0].value;
  g->zero_grads();
  adam_step(*g, 1, cfg);
  CHECK(*g->params()[0].value == before);

  // unit gradient on one scalar: first-step delta = -lr / (1 + eps)
  auto g2 = build_model(tiny_spec());
  Parameter& p = g2->params()[0];
  const double theta0 = (*p.value)[0];
  p.grad[0] = 1.0;
  adam_step(*g2, 1, cfg);
  CHECK((*p.value)[0] - theta0 ==
        doctest::Approx(-cfg.learning_rate / (1.0 + cfg.epsilon)).epsilon(1e-9));
  CHECK(p.grad[0] == 0.0);  // zeroed after the step

  // step-1 scale invariance: gradient x1000 moves by about the same magnitude
  auto g3 = build_model(tiny_spec());
  Parameter& q = g3->params()[0];
  const double t0 = (*q.value)[0];
  q.grad[0] = 1000.0;
  adam_step(*g3, 1, cfg);
  CHECK(std::fabs((*q.value)[0] - t0) ==
        doctest::Approx(cfg.learning_rate).epsilon(1e-3));
}

TEST_CASE("early-stopping simulation semantics") {
  // flat validation loss from epoch 1: stop after 1 + patience epochs
  std::vector<double> flat(100, 0.5);
  const StopSim s1 = simulate_early_stopping(flat, 10, 1e-4, 100);
  CHECK(s1.epochs_run == 11);
  CHECK(s1.best_epoch == 1);

  // strictly improving: run to max_epochs
  std::vector<double> improving;
  for (int e = 0; e < 100; ++e) improving.push_back(1.0 - 0.01 * e);
  const StopSim s2 = simulate_early_stopping(improving, 10, 1e-4, 50);
  CHECK(s2.epochs_run == 50);
  CHECK(s2.best_epoch == 50);

  // improvement below min_delta does not reset patience
  std::vector<double> tiny_gain = {0.5};
  for (int e = 0; e < 30; ++e) tiny_gain.push_back(0.5 - 1e-6 * (e + 1));
  const StopSim s3 = simulate_early_stopping(tiny_gain, 5, 1e-4, 100);
  CHECK(s3.epochs_run == 6);
  CHECK(s3.best_epoch == 1);
}

TEST_CASE("train loop: logs, checkpoint, determinism") {
  namespace fs = std::filesystem;
  const auto data = generate_synthetic(6, 8, "small", 42);
  const std::vector<SamplePair> train_set(data.begin(), data.begin() + 4);
  const std::vector<SamplePair> val_set(data.begin() + 4, data.end());

  TrainConfig cfg;
  cfg.max_epochs = 3;
  cfg.batch_size = 2;
  cfg.seed = 5;

  const fs::path dir1 = fs::temp_directory_path() / "iseg_train_a";
  const fs::path dir2 = fs::temp_directory_path() / "iseg_train_b";
  fs::remove_all(dir1);
  fs::remove_all(dir2);

  auto g1 = build_model(tiny_spec());
  const TrainResult r1 = train(*g1, train_set, val_set, cfg, dir1.string());
  REQUIRE(r1.logs.size() == 3);
  for (const auto& l : r1.logs) {
    CHECK(l.train_loss >= 0.0);
    CHECK(l.val_acc >= 0.0);
    CHECK(l.val_acc <= 1.0);
  }
  CHECK(fs::exists(r1.best_checkpoint));
  CHECK(fs::exists(dir1 / "epochs.csv"));

  // best checkpoint's val loss equals the log minimum
  double min_val = 1e9;
  int best_epoch = -1;
  for (const auto& l : r1.logs)
    if (l.val_loss < min_val) {
      min_val = l.val_loss;
      best_epoch = l.epoch;
    }
  bool best_flag_matches = false;
  for (const auto& l : r1.logs)
    if (l.is_best && l.epoch == best_epoch) best_flag_matches = true;
  CHECK(best_flag_matches);

  auto g2 = build_model(tiny_spec());
  const TrainResult r2 = train(*g2, train_set, val_set, cfg, dir2.string());
  CHECK(read_bytes((dir1 / "epochs.csv").string()) ==
        read_bytes((dir2 / "epochs.csv").string()));
  CHECK(read_bytes(r1.best_checkpoint) == read_bytes(r2.best_checkpoint));

  fs::remove_all(dir1);
  fs::remove_all(dir2);
}

TEST_CASE("train rejects empty datasets and bad configs") {
  auto g = build_model(tiny_spec());
  TrainConfig cfg;
  std::vector<SamplePair> empty;
  const auto data = generate_synthetic(2, 8, "small", 1);
  CHECK_THROWS_AS(train(*g, empty, data, cfg, "/tmp/iseg_never"), ConfigError);
  cfg.max_epochs = 0;
  CHECK_THROWS_AS(train(*g, data, data, cfg, "/tmp/iseg_never"), ConfigError);
}

TEST_CASE("evaluate on a perfect and a constant predictor") {
  // force the head to emit (almost) the ground truth by evaluating metrics
  // directly through the evaluate() plumbing on a constant-output model
  auto g = build_model(tiny_spec());
  const auto data = generate_synthetic(4, 8, "large", 3);
  const EvalReport rep = evaluate(*g, data, 0.5);
  CHECK(rep.image_count == 4);
  CHECK(rep.micro.counts.total() == 4 * 8 * 8);
  CHECK(rep.micro.scalars.accuracy >= 0.0);
  CHECK(rep.micro.scalars.accuracy <= 1.0);

  // threshold 0 marks every pixel positive: sensitivity 1
  const EvalReport rep0 = evaluate(*g, data, 0.0);
  CHECK(rep0.micro.scalars.sensitivity == doctest::Approx(1.0));
}
