// Ranking metrics and serving-score fusion.
#pragma once

#include "home/data.hpp"

#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace home {

class MetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Probability that a random positive outranks a random negative (ties count
/// one half), via the rank-sum statistic. Throws MetricError without both classes.
double auc(std::span<const double> scores, std::span<const double> labels);

/// Σ_u w_u·AUC_u with w_u = #logs_u / Σ #logs over users that have both
/// classes; single-class users are dropped from numerator and denominator.
double gauc(std::span<const double> scores, std::span<const double> labels, std::span<const std::int64_t> user_ids);

/// Σ weight·probability over the provided tasks.
double ranking_score(const std::map<std::string, double>& xtrs, const std::map<std::string, double>& weights);

struct TaskMetrics {
  std::string task;
  double auc = 0.0;   // NaN when undefined
  double gauc = 0.0;  // NaN when undefined
  double positive_rate = 0.0;
};

struct EvalReport {
  std::size_t rows = 0;
  std::vector<TaskMetrics> tasks;
};

EvalReport evaluate(Model& model, const Dataset& ds, int chunk = 4096);
EvalReport evaluate_predictions(const Matrix& probabilities, const Dataset& ds);

}  // namespace home
