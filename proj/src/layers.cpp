#include "home/layers.hpp"

#include <cmath>

namespace home {
namespace {

Matrix init_matrix(int rows, int cols, Init init, Rng& rng) {
  double bound = 0.0;
  switch (init) {
    case Init::zeros: return Matrix::Zero(rows, cols);
    case Init::he_uniform: bound = std::sqrt(6.0 / rows); break;
    case Init::glorot_uniform: bound = std::sqrt(6.0 / (rows + cols)); break;
  }
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

void require_width(const Var& x, int width, const std::string& who) {
  if (x.cols() != width)
    throw DimensionError(who + ": expected input width " + std::to_string(width) + ", got " +
                         std::to_string(x.cols()));
}

}  // namespace

Linear::Linear(const std::string& name, int in, int out, Init init, Rng& rng, bool with_bias)
    : weight(name + ".W", init_matrix(in, out, init, rng)), has_bias(with_bias) {
  if (in <= 0 || out <= 0) throw ConfigError(name + ": layer widths must be positive");
  if (with_bias) bias = Parameter(name + ".b", Matrix::Zero(1, out));
}

Var Linear::forward(const Var& x) {
  auto& tape = x.tape();
  Var y = matmul(x, tape.parameter(weight));
  return has_bias ? add_row(y, tape.parameter(bias)) : y;
}

void Linear::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  if (has_bias) out.push_back(&bias);
}

Mlp::Mlp(const std::string& name, int in, const std::vector<int>& hidden, int out, Activation hidden_activation,
         Init hidden_init, Init output_init, Rng& rng, bool output_bias)
    : hidden_activation_(hidden_activation) {
  int width = in;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    layers_.emplace_back(name + ".fc" + std::to_string(i), width, hidden[i], hidden_init, rng);
    width = hidden[i];
  }
  layers_.emplace_back(name + ".fc" + std::to_string(hidden.size()), width, out, output_init, rng, output_bias);
}

Var Mlp::forward(const Var& x) {
  Var h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i].forward(h);
    if (i + 1 < layers_.size()) h = activate(hidden_activation_, h);
  }
  return h;
}

void Mlp::collect(std::vector<Parameter*>& out) {
  for (auto& l : layers_) l.collect(out);
}

ExpertUnit::ExpertUnit(const std::string& name, const ExpertConfig& config, Rng& rng)
    : name_(name), config_(config) {
  if (config.normalize && config.activation == Activation::relu && !config.allow_norm_relu)
    throw ConfigError(name + ": normalized experts use swish; set allow_norm_relu to pair batch norm with relu");
  if (config.activation == Activation::sigmoid) throw ConfigError(name + ": expert activation must be relu or swish");
  mlp_ = Mlp(name + ".mlp", config.in, config.hidden, config.width, config.activation, Init::he_uniform,
             Init::he_uniform, rng, !config.normalize);
  if (config.normalize) {
    gamma_ = Parameter(name + ".bn.gamma", Matrix::Ones(1, config.width));
    beta_ = Parameter(name + ".bn.beta", Matrix::Zero(1, config.width));
    stats_ = BatchNormStats(config.width, config.bn_epsilon, config.bn_momentum);
  }
}

ExpertUnit::Output ExpertUnit::forward(const Var& x, Mode mode) {
  require_width(x, mlp_.in_width(), name_);
  Output out;
  out.pre = mlp_.forward(x);
  Var z = out.pre;
  if (config_.normalize) {
    auto& tape = x.tape();
    out.normalized = batch_normalize(out.pre, stats_, mode);
    z = affine(out.normalized, tape.parameter(gamma_), tape.parameter(beta_));
  }
  out.post = activate(config_.activation, z);
  return out;
}

void ExpertUnit::collect(std::vector<Parameter*>& out) {
  mlp_.collect(out);
  if (config_.normalize) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }
}

void ExpertUnit::collect_stats(std::vector<std::pair<std::string, BatchNormStats*>>& out) {
  if (config_.normalize) out.emplace_back(name_ + ".bn", &stats_);
}

GateUnit::GateUnit(const std::string& name, int in, int arity, GateActivation activation,
                   const std::vector<int>& hidden, Rng& rng)
    : arity_(arity), activation_(activation) {
  if (arity < 1) throw ConfigError(name + ": gate arity must be at least 1");
  if (activation == GateActivation::sigmoid && arity != 1)
    throw ConfigError(name + ": sigmoid gates need arity 1, got " + std::to_string(arity));
  mlp_ = Mlp(name, in, hidden, arity, Activation::relu, Init::he_uniform, Init::zeros, rng);
}

Var GateUnit::forward(const Var& x) {
  Var logits = mlp_.forward(x);
  return activation_ == GateActivation::softmax ? softmax(logits) : sigmoid(logits);
}

void GateUnit::collect(std::vector<Parameter*>& out) { mlp_.collect(out); }

TowerUnit::TowerUnit(const std::string& name, int in, const std::vector<int>& hidden, Activation hidden_activation,
                     bool zero_init_output, Rng& rng)
    : mlp_(name, in, hidden, 1, hidden_activation, Init::glorot_uniform,
           zero_init_output ? Init::zeros : Init::glorot_uniform, rng) {}

Var TowerUnit::forward(const Var& x) { return sigmoid(mlp_.forward(x)); }

void TowerUnit::collect(std::vector<Parameter*>& out) { mlp_.collect(out); }

FeaLoRAUnit::FeaLoRAUnit(const std::string& name, int width, int rank, Rng& rng)
    : down_(name + ".B", Matrix::Zero(width, rank)), up_(name + ".A", init_matrix(rank, width, Init::glorot_uniform, rng)) {
  if (width <= 0 || rank <= 0) throw ConfigError(name + ": width and rank must be positive");
}

Var FeaLoRAUnit::forward(const Var& v) {
  require_width(v, width(), "fea_lora");
  auto& tape = v.tape();
  Var logits = matmul(matmul(v, tape.parameter(down_)), tape.parameter(up_));
  return scale(sigmoid(logits), 2.0);
}

void FeaLoRAUnit::collect(std::vector<Parameter*>& out) {
  out.push_back(&down_);
  out.push_back(&up_);
}

FeatureGate::FeatureGate(const std::string& name, int width, int lora_count, Rng& rng) {
  if (lora_count < 1) throw ConfigError(name + ": LoRA count must be at least 1");
  if (width % lora_count != 0)
    throw ConfigError(name + ": LoRA count " + std::to_string(lora_count) + " does not divide input width " +
                      std::to_string(width));
  const int rank = width / lora_count;
  for (int i = 0; i < lora_count; ++i) loras_.emplace_back(name + ".lora" + std::to_string(i), width, rank, rng);
  gate_ = GateUnit(name + ".gate", width, lora_count, GateActivation::softmax, {}, rng);
}

FeatureGate::Output FeatureGate::forward(const Var& v) {
  std::vector<Var> parts;
  parts.reserve(loras_.size());
  for (auto& l : loras_) parts.push_back(l.forward(v));
  Output out;
  out.mixture = gate_.forward(v);
  out.importance = weighted_sum(out.mixture, parts);
  return out;
}

void FeatureGate::collect(std::vector<Parameter*>& out) {
  for (auto& l : loras_) l.collect(out);
  gate_.collect(out);
}

Var apply_feature_gate(const Var& v, const Var& g) { return mul(v, g); }

Var self_gate_forward(GateUnit& gate, const std::vector<Var>& expert_outputs, const Var& gate_input) {
  if (gate.arity() != static_cast<int>(expert_outputs.size()))
    throw DimensionError("self_gate: arity " + std::to_string(gate.arity()) + " for " +
                         std::to_string(expert_outputs.size()) + " experts");
  return weighted_sum(gate.forward(gate_input), expert_outputs);
}

}  // namespace home
