// Multi-task models: shared-bottom, MMoE, CGC and the two-layer HoME network.
#pragma once

#include "home/layers.hpp"

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace home {

enum class TaskCategory { interaction, watch };

struct TaskSpec {
  std::string name;
  TaskCategory category = TaskCategory::interaction;
  double positive_rate = 0.1;  // only used for synthetic data
};

enum class Architecture { shared_bottom, mmoe, cgc, home };

struct ModelConfig {
  Architecture architecture = Architecture::home;
  int input_width = 32;
  int expert_width = 8;
  // Experts per group: the shared pool for mmoe, shared and per-task counts for
  // cgc, every meta and task-level group for home.
  int experts_per_group = 1;
  int lora_count = 2;
  std::vector<int> expert_hidden{128};
  std::vector<int> tower_hidden{64};
  std::vector<int> gate_hidden{};
  Activation expert_activation = Activation::swish;
  bool expert_normalization = true;
  bool allow_norm_relu = false;
  double bn_epsilon = 1e-9;
  double bn_momentum = 0.99;
  bool use_feature_gate_layer1 = true;
  bool use_feature_gate_layer2 = true;
  bool use_self_gate = true;
  bool use_hierarchy_mask = true;
  bool zero_init_tower_output = true;
  std::uint64_t seed = 1;

  void validate(const std::vector<TaskSpec>& tasks) const;
};

/// Applies a named ablation: home, wo_fg2, wo_fg, wo_fg_sg, wo_fg_sg_mask,
/// plus the baselines mmoe (relu experts), mmoe_star, cgc_star.
ModelConfig apply_variant(ModelConfig config, std::string_view variant);
std::vector<std::string> variant_names();

std::string to_string(Architecture a);
Architecture architecture_from_string(std::string_view s);
std::string to_string(TaskCategory c);
TaskCategory category_from_string(std::string_view s);
std::string to_string(Activation a);
Activation activation_from_string(std::string_view s);

enum class GateKind { task, meta, self, feature_mix };
enum class ExpertRole { shared, specific };

struct GateTrace {
  std::string name;
  GateKind kind = GateKind::task;
  int task = -1;                     // owning task for task/self gates at the task level
  std::vector<std::string> experts;  // column labels
  bool stochastic = true;            // softmax rows sum to one
  Var weights;                       // B×N
};

struct ExpertTrace {
  std::string id;
  std::string group;
  int layer = 1;
  ExpertRole role = ExpertRole::shared;
  int owner_task = -1;
  ExpertUnit::Output output;
};

struct FeatureGateTrace {
  std::string name;
  Var importance;
};

struct ForwardTrace {
  std::vector<Var> predictions;  // per task, B×1
  std::vector<GateTrace> gates;
  std::vector<ExpertTrace> experts;
  std::vector<FeatureGateTrace> feature_gates;

  Matrix probabilities() const;  // B×T
};

class Model {
 public:
  Model(ModelConfig config, std::vector<TaskSpec> tasks);
  virtual ~Model() = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  /// Records the forward pass on `tape`. Infer mode leaves the model untouched.
  virtual ForwardTrace forward(Tape& tape, const Matrix& features, Mode mode) = 0;

  const ModelConfig& config() const { return config_; }
  const std::vector<TaskSpec>& tasks() const { return tasks_; }
  std::span<Parameter* const> parameters() const { return params_; }
  std::span<const std::pair<std::string, BatchNormStats*>> bn_stats() const { return stats_; }
  Parameter* find_parameter(std::string_view name) const;
  void zero_grad();

 protected:
  // Called by subclasses once every unit is in place.
  virtual void collect(std::vector<Parameter*>& params, std::vector<std::pair<std::string, BatchNormStats*>>& stats) = 0;
  void finalize();
  ExpertConfig expert_config(int in) const;

  ModelConfig config_;
  std::vector<TaskSpec> tasks_;
  Rng rng_;

 private:
  std::vector<Parameter*> params_;
  std::vector<std::pair<std::string, BatchNormStats*>> stats_;
};

std::unique_ptr<Model> build_model(const ModelConfig& config, const std::vector<TaskSpec>& tasks);

std::size_t parameter_count(const Model& model);

/// Inference-mode probabilities (rows × tasks), evaluated in chunks.
Matrix predict(Model& model, const Matrix& features, int chunk = 4096);

}  // namespace home
