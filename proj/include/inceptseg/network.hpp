#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "inceptseg/ops.hpp"
#include "inceptseg/recurrent.hpp"
#include "inceptseg/tensor.hpp"

namespace iseg {

enum class Variant { Unet, Bcdu, Inceptnet };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& s);

// Width fractions are expressed in 32nds of the reference width so every
// concrete channel count stays an exact integer.
struct NetworkSpec {
  Variant variant = Variant::Inceptnet;
  int d = 1;
  std::vector<int> base_filters = {64, 128, 256, 512};
  int in_h = 64, in_w = 64, in_c = 1;
  double dropout_rate = 0.5;
  uint64_t seed = 0;
  int branch_mid32_a = 15;  // internal width of the double-3x3 branch
  int branch_mid32_b = 12;  // internal width of the triple-3x3 branch
  int lstm_hidden32 = 6;    // BConvLSTM hidden channels per skip level
  int fused32 = 24;         // fused skip-output channels

  void validate() const;
  std::string canonical() const;
  static NetworkSpec parse_canonical(const std::string& text);
  bool operator==(const NetworkSpec&) const = default;
};

// A learnable (or tracked) tensor: the value lives in its owning layer,
// gradient and Adam moments live here.
struct Parameter {
  std::string name;
  std::vector<int> dims;
  std::vector<double>* value = nullptr;
  std::vector<double> grad, adam_m, adam_v;
  bool trainable = true;

  size_t count() const { return value->size(); }
};

class ModelGraph;

namespace detail {

struct ConvUnit {
  enum class Act { None, Relu, Sigmoid };
  Kernel4 k;
  ops::Padding pad = ops::Padding::Same;
  Act act = Act::Relu;
  Parameter* pw = nullptr;
  Parameter* pb = nullptr;
  Tensor4 in_cache, out_cache;

  void init(int kh, int kw, int cin, int cout, Act a);
  void reg(ModelGraph& g, const std::string& prefix);
  Tensor4 forward(const Tensor4& x, bool train);
  Tensor4 backward(const Tensor4& grad);
};

struct Block {
  virtual ~Block() = default;
  virtual Tensor4 forward(const Tensor4& x, bool train) = 0;
  virtual Tensor4 backward(const Tensor4& grad) = 0;
  virtual void reg(ModelGraph& g, const std::string& prefix) = 0;
};

struct TwoConvBlock final : Block {
  ConvUnit c1, c2;
  TwoConvBlock(int cin, int f);
  Tensor4 forward(const Tensor4& x, bool train) override;
  Tensor4 backward(const Tensor4& grad) override;
  void reg(ModelGraph& g, const std::string& prefix) override;
};

// Four parallel branches, F/4 output channels each, ReLU after every conv.
struct InceptionModule {
  ConvUnit b1, b2, b3a, b3b, b4a, b4b, b4c;
  int quarter = 0;
  InceptionModule(int cin, int f, int mid_a, int mid_b);
  Tensor4 forward(const Tensor4& x, bool train);
  Tensor4 backward(const Tensor4& grad);
  void reg(ModelGraph& g, const std::string& prefix);
};

struct InceptionBlock final : Block {
  std::vector<InceptionModule> mods;
  InceptionBlock(int cin, int f, int mid_a, int mid_b, int n_modules);
  Tensor4 forward(const Tensor4& x, bool train) override;
  Tensor4 backward(const Tensor4& grad) override;
  void reg(ModelGraph& g, const std::string& prefix) override;
};

struct BatchNorm {
  int channels = 0;
  double momentum = 0.99, eps = 1e-5;
  std::vector<double> gamma, beta, running_mean, running_var;
  Parameter *pg = nullptr, *pb = nullptr;
  Tensor4 xhat_cache;
  std::vector<double> invstd_cache;

  void init(int c);
  void reg(ModelGraph& g, const std::string& prefix);
  Tensor4 forward(const Tensor4& x, bool train);
  Tensor4 backward(const Tensor4& grad);
};

struct Dropout {
  double rate = 0.0;
  uint64_t seed = 0, layer_id = 0, step = 0;
  std::vector<uint8_t> mask;

  Tensor4 forward(const Tensor4& x, bool train);
  Tensor4 backward(const Tensor4& grad);
};

struct Fusion {
  virtual ~Fusion() = default;
  virtual Tensor4 fuse(const Tensor4& enc, const Tensor4& dec, bool train) = 0;
  // returns (grad_enc, grad_dec)
  virtual std::pair<Tensor4, Tensor4> backward(const Tensor4& grad) = 0;
  virtual void reg(ModelGraph& g, const std::string& prefix) {}
  virtual int out_channels(int level_channels) const = 0;
};

struct ConcatFusion final : Fusion {
  int c_dec = 0;
  Tensor4 fuse(const Tensor4& enc, const Tensor4& dec, bool train) override;
  std::pair<Tensor4, Tensor4> backward(const Tensor4& grad) override;
  int out_channels(int level_channels) const override { return 2 * level_channels; }
};

struct LstmFusion final : Fusion {
  BConvLSTMParams p;
  BConvLSTMCache cache;
  int fused_c = 0;
  // gate order i, f, c, o
  struct DirSlots {
    Parameter* xw[4] = {};
    Parameter* xb[4] = {};
    Parameter* hw[4] = {};
    Parameter* peep[3] = {};
  };
  DirSlots sf, sb;
  Parameter *py_fw = nullptr, *py_fb = nullptr, *py_bw = nullptr;

  LstmFusion(int channels, int hidden, int fused_out);
  Tensor4 fuse(const Tensor4& enc, const Tensor4& dec, bool train) override;
  std::pair<Tensor4, Tensor4> backward(const Tensor4& grad) override;
  void reg(ModelGraph& g, const std::string& prefix) override;
  int out_channels(int level_channels) const override { return fused_c; }
};

struct UpConv {
  Kernel4 k;
  Parameter *pw = nullptr, *pb = nullptr;
  Tensor4 in_cache;

  void init(int cin, int cout);
  void reg(ModelGraph& g, const std::string& prefix);
  Tensor4 forward(const Tensor4& x, bool train);
  Tensor4 backward(const Tensor4& grad);
};

}  // namespace detail

class ModelGraph {
 public:
  explicit ModelGraph(const NetworkSpec& spec);
  ModelGraph(const ModelGraph&) = delete;
  ModelGraph& operator=(const ModelGraph&) = delete;

  const NetworkSpec& spec() const { return spec_; }

  Tensor4 forward(const Tensor4& batch, bool train);
  void backward(const Tensor4& grad_loss);
  void zero_grads();

  std::deque<Parameter>& params() { return params_; }
  const std::deque<Parameter>& params() const { return params_; }

  Parameter& reg(std::string name, std::vector<int> dims, std::vector<double>* value,
                 bool trainable = true);

 private:
  friend std::unique_ptr<ModelGraph> build_model(const NetworkSpec&);
  void init_params();

  NetworkSpec spec_;
  struct EncLevel {
    std::unique_ptr<detail::Block> block;
    std::vector<int> pool_argmax;
    Tensor4 skip;
    int in_h = 0, in_w = 0;
  };
  struct DecLevel {
    detail::UpConv up;
    detail::BatchNorm bn;
    std::unique_ptr<detail::Fusion> fuse;
    std::unique_ptr<detail::Block> block;
    detail::Dropout drop;
  };
  std::array<EncLevel, 3> enc_;
  std::vector<std::unique_ptr<detail::Block>> bottleneck_;
  Tensor4 bott_out1_, bott_out2_;
  std::array<DecLevel, 3> dec_;
  detail::ConvUnit head_;
  std::deque<Parameter> params_;
  bool has_cache_ = false;
};

std::unique_ptr<ModelGraph> build_model(const NetworkSpec& spec);

// Nudges every trainable parameter by a signed offset in [0.05, 0.15] so
// gradient checks evaluate at a point in general position. Freshly
// initialized models have zero biases, which puts many relu pre-activations
// exactly on their kink (one-sided derivatives differ there and central
// finite differences disagree with any valid subgradient).
void jitter_parameters(ModelGraph& graph, uint64_t seed = 13);

struct LayerCount {
  std::string name;
  std::vector<int> dims;
  size_t count;
};
struct ParamAudit {
  size_t total = 0;
  std::vector<LayerCount> per_layer;
};
ParamAudit count_parameters(const ModelGraph& graph);

// Checkpoint file: "INSG" magic, u16 version, length-prefixed canonical spec,
// then per-parameter records, all little-endian, scalars as 8-byte IEEE-754.
void save_checkpoint(const ModelGraph& graph, const std::string& path);
std::unique_ptr<ModelGraph> load_checkpoint(const std::string& path,
                                            const NetworkSpec& expected_spec);
// reads only the embedded spec
NetworkSpec checkpoint_spec(const std::string& path);

}  // namespace iseg
