// Gate-weight and expert-output statistics, and detectors for expert
// collapse, degradation and underfitting.
#pragma once

#include "home/data.hpp"

#include <span>
#include <string>
#include <vector>

namespace home {

struct ExpertSummary {
  std::string id;
  std::string group;
  int layer = 1;
  ExpertRole role = ExpertRole::shared;
  int owner_task = -1;
  bool routed = false;  // appears in at least one task gate
  double mean = 0.0;    // post-activation output, over rows and columns
  double stddev = 0.0;
  double zero_fraction = 0.0;
};

struct GateSummary {
  std::string name;
  GateKind kind = GateKind::task;
  int task = -1;
  std::vector<std::string> experts;
  std::vector<double> mean_weights;
};

struct GateReport {
  std::size_t rows = 0;
  std::vector<std::string> tasks;
  std::vector<ExpertSummary> experts;
  Matrix task_weights;  // tasks × experts, mean task-gate weight (0 outside the gate)
  Matrix mass_share;    // experts × tasks, each routed expert's weight mass split by task
  std::vector<GateSummary> gates;
};

GateReport collect_gate_report(Model& model, std::span<const Matrix> batches);
GateReport collect_gate_report(Model& model, const Dataset& ds, int batch_size = 2048);

struct PathologyThresholds {
  double zero_fraction = 0.9;   // collapse: dead activations
  double monopoly = 0.98;       // collapse: weight an expert takes from one task
  double dispersion = 10.0;     // collapse: output scale versus the median expert
  double degradation = 0.9;     // degradation: one task's share of a shared expert
  double underfitting = 0.05;   // underfitting: weight a task puts on its own experts
};

struct CollapseFlag {
  std::string expert;
  std::string reason;  // "zero_activation" or "monopolized"
  double value = 0.0;  // zero fraction, or the disparity ratio
};

struct DegradationFlag {
  std::string expert;
  std::string task;
  double share = 0.0;
};

struct UnderfittingFlag {
  std::string task;
  double specific_weight = 0.0;
};

struct PathologyFlags {
  std::vector<CollapseFlag> collapse;
  std::vector<DegradationFlag> degradation;
  std::vector<UnderfittingFlag> underfitting;

  bool empty() const { return collapse.empty() && degradation.empty() && underfitting.empty(); }
  std::size_t count() const { return collapse.size() + degradation.size() + underfitting.size(); }
};

/// Max of the std and |mean| ratios (either direction) against the median
/// over task-routed experts.
double output_disparity(const GateReport& report, std::size_t expert);

PathologyFlags detect_pathologies(const GateReport& report, const PathologyThresholds& thresholds = {});

}  // namespace home
