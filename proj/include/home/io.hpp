// Run configuration documents, model checkpoints, and report files.
#pragma once

#include "home/diagnostics.hpp"
#include "home/gradcheck.hpp"
#include "home/train.hpp"

#include "json.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace home {

using Json = nlohmann::ordered_json;

struct RunConfig {
  DatasetSpec dataset = demo_dataset_spec();
  ModelConfig model;
  std::string variant;  // optional named ablation applied on top of `model`
  TrainConfig train;
  PathologyThresholds thresholds;
  std::map<std::string, double> ranking_weights;  // empty: 1.0 per task
  GradCheckOptions grad_check;

  void validate() const;
};

/// Parses a configuration document. Every section is optional; unknown keys
/// are errors. `model.input_width` defaults to `dataset.feature_width`.
RunConfig parse_run_config(const Json& doc);
Json to_json(const RunConfig& config);

/// Applies `section.key=value` overrides; values parse as JSON, else as strings.
void apply_overrides(Json& doc, const std::vector<std::string>& overrides);
Json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

DatasetSpec parse_dataset_spec(const Json& doc);
Json to_json(const DatasetSpec& spec);
Json to_json(const ModelConfig& config);
ModelConfig parse_model_config(const Json& doc, int default_input_width);
std::vector<TaskSpec> parse_tasks(const Json& doc);
Json to_json(const std::vector<TaskSpec>& tasks);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Self-describing JSON: model config, tasks, named parameter blobs and
/// batch-norm running statistics. Doubles round-trip bit-exactly.
void save_checkpoint(const Model& model, const std::filesystem::path& path);
std::unique_ptr<Model> load_checkpoint(const std::filesystem::path& path);

Json to_json(const EvalReport& report);
Json to_json(const GateReport& report);
Json to_json(const PathologyFlags& flags, const PathologyThresholds& thresholds);
Json to_json(const PathologyThresholds& thresholds);
/// Task × expert mean gate weights for the task-routed experts.
std::string gate_weights_csv(const GateReport& report);

}  // namespace home
