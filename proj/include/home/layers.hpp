// Parameterized blocks: linear stacks, experts, gates, towers, feature gates.
#pragma once

#include "home/tensor.hpp"

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace home {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Rng = std::mt19937_64;

enum class Init { he_uniform, glorot_uniform, zeros };

struct Linear {
  Parameter weight;  // in × out
  Parameter bias;    // 1 × out, empty when the layer has no bias
  bool has_bias = true;

  Linear() = default;
  Linear(const std::string& name, int in, int out, Init init, Rng& rng, bool with_bias = true);

  int in_width() const { return static_cast<int>(weight.value.rows()); }
  int out_width() const { return static_cast<int>(weight.value.cols()); }
  Var forward(const Var& x);
  void collect(std::vector<Parameter*>& out);
};

/// Linear layers with `hidden_activation` between them and none after the last.
class Mlp {
 public:
  Mlp() = default;
  Mlp(const std::string& name, int in, const std::vector<int>& hidden, int out, Activation hidden_activation,
      Init hidden_init, Init output_init, Rng& rng, bool output_bias = true);

  Var forward(const Var& x);
  int in_width() const { return layers_.front().in_width(); }
  int out_width() const { return layers_.back().out_width(); }
  std::vector<Linear>& layers() { return layers_; }
  void collect(std::vector<Parameter*>& out);

 private:
  std::vector<Linear> layers_;
  Activation hidden_activation_ = Activation::relu;
};

struct ExpertConfig {
  int in = 0;
  std::vector<int> hidden{128};
  int width = 8;
  Activation activation = Activation::swish;
  bool normalize = true;
  // Batch norm followed by relu is rejected unless this is set; the pairing
  // only exists to reproduce the zero-activation pathology.
  bool allow_norm_relu = false;
  double bn_epsilon = 1e-9;
  double bn_momentum = 0.99;
};

/// activation(batch_norm(MLP(x))) with normalization, activation(MLP(x)) without.
class ExpertUnit {
 public:
  struct Output {
    Var pre;         // MLP output z
    Var normalized;  // (z − μ)/√(δ² + ε); invalid without normalization
    Var post;        // expert output
  };

  ExpertUnit() = default;
  ExpertUnit(const std::string& name, const ExpertConfig& config, Rng& rng);

  Output forward(const Var& x, Mode mode);
  const ExpertConfig& config() const { return config_; }
  const std::string& name() const { return name_; }
  Mlp& mlp() { return mlp_; }
  BatchNormStats& bn_stats() { return stats_; }
  Parameter& gamma() { return gamma_; }
  Parameter& beta() { return beta_; }
  void collect(std::vector<Parameter*>& out);
  void collect_stats(std::vector<std::pair<std::string, BatchNormStats*>>& out);

 private:
  std::string name_;
  ExpertConfig config_;
  Mlp mlp_;
  Parameter gamma_;
  Parameter beta_;
  BatchNormStats stats_;
};

enum class GateActivation { softmax, sigmoid };

/// Routing weights: softmax over N outputs, or a single sigmoid when N == 1.
/// The final layer starts at zero, so routing starts uniform.
class GateUnit {
 public:
  GateUnit() = default;
  GateUnit(const std::string& name, int in, int arity, GateActivation activation, const std::vector<int>& hidden,
           Rng& rng);

  Var forward(const Var& x);
  int arity() const { return arity_; }
  GateActivation activation() const { return activation_; }
  Mlp& mlp() { return mlp_; }
  void collect(std::vector<Parameter*>& out);

 private:
  Mlp mlp_;
  int arity_ = 0;
  GateActivation activation_ = GateActivation::softmax;
};

/// Self gates use sigmoid for a single expert and softmax otherwise.
inline GateActivation self_gate_activation(int experts) {
  return experts == 1 ? GateActivation::sigmoid : GateActivation::softmax;
}

/// Sigmoid head emitting one probability per row.
class TowerUnit {
 public:
  TowerUnit() = default;
  TowerUnit(const std::string& name, int in, const std::vector<int>& hidden, Activation hidden_activation,
            bool zero_init_output, Rng& rng);

  Var forward(const Var& x);
  Mlp& mlp() { return mlp_; }
  void collect(std::vector<Parameter*>& out);

 private:
  Mlp mlp_;
};

/// 2·σ(v·(B·A)) with B: |v|×d and A: d×|v|. B starts at zero (identity gate).
class FeaLoRAUnit {
 public:
  FeaLoRAUnit() = default;
  FeaLoRAUnit(const std::string& name, int width, int rank, Rng& rng);

  Var forward(const Var& v);
  int width() const { return static_cast<int>(down_.value.rows()); }
  int rank() const { return static_cast<int>(down_.value.cols()); }
  Parameter& b() { return down_; }
  Parameter& a() { return up_; }
  void collect(std::vector<Parameter*>& out);

 private:
  Parameter down_;  // B
  Parameter up_;    // A
};

/// Softmax mixture of L low-rank importance gates, each of rank |v|/L.
class FeatureGate {
 public:
  struct Output {
    Var importance;  // B×|v|, values in (0, 2)
    Var mixture;     // B×L routing over the LoRA units
  };

  FeatureGate() = default;
  FeatureGate(const std::string& name, int width, int lora_count, Rng& rng);

  Output forward(const Var& v);
  std::vector<FeaLoRAUnit>& loras() { return loras_; }
  GateUnit& gate() { return gate_; }
  void collect(std::vector<Parameter*>& out);

 private:
  std::vector<FeaLoRAUnit> loras_;
  GateUnit gate_;
};

/// v ⊙ g.
Var apply_feature_gate(const Var& v, const Var& g);

/// Mixes a group's own experts with its self gate; the caller adds the result
/// to the group's main representation.
Var self_gate_forward(GateUnit& gate, const std::vector<Var>& expert_outputs, const Var& gate_input);

}  // namespace home
