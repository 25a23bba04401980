#include "home/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_map>

namespace home {

double auc(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) throw DimensionError("auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  double positives = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // Tied block occupies ranks i+1..j; each gets the average.
    const double avg = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      const double y = labels[order[k]];
      if (y != 0.0 && y != 1.0) throw MetricError("auc: labels must be 0 or 1");
      if (y == 1.0) {
        rank_sum += avg;
        positives += 1.0;
      }
    }
    i = j;
  }
  const double negatives = static_cast<double>(n) - positives;
  if (positives == 0.0 || negatives == 0.0) throw MetricError("auc: undefined without both positive and negative labels");
  return (rank_sum - positives * (positives + 1.0) / 2.0) / (positives * negatives);
}

double gauc(std::span<const double> scores, std::span<const double> labels, std::span<const std::int64_t> user_ids) {
  if (scores.size() != labels.size() || scores.size() != user_ids.size())
    throw DimensionError("gauc: scores, labels and user ids differ in length");
  std::unordered_map<std::int64_t, std::vector<std::size_t>> groups;
  std::vector<std::int64_t> order;
  for (std::size_t i = 0; i < user_ids.size(); ++i) {
    auto [it, fresh] = groups.try_emplace(user_ids[i]);
    if (fresh) order.push_back(user_ids[i]);
    it->second.push_back(i);
  }
  std::sort(order.begin(), order.end());
  double weighted = 0.0;
  double logs = 0.0;
  std::vector<double> s;
  std::vector<double> y;
  for (auto u : order) {
    const auto& rows = groups[u];
    s.clear();
    y.clear();
    double pos = 0.0;
    for (auto r : rows) {
      s.push_back(scores[r]);
      y.push_back(labels[r]);
      pos += labels[r];
    }
    if (pos == 0.0 || pos == static_cast<double>(rows.size())) continue;
    const double n = static_cast<double>(rows.size());
    weighted += n * auc(s, y);
    logs += n;
  }
  if (logs == 0.0) throw MetricError("gauc: no user has both positive and negative labels");
  return weighted / logs;
}

double ranking_score(const std::map<std::string, double>& xtrs, const std::map<std::string, double>& weights) {
  double score = 0.0;
  for (const auto& [task, p] : xtrs) {
    auto it = weights.find(task);
    if (it == weights.end()) throw ConfigError("ranking_score: no coefficient for task '" + task + "'");
    score += it->second * p;
  }
  return score;
}

EvalReport evaluate_predictions(const Matrix& probabilities, const Dataset& ds) {
  if (probabilities.rows() != ds.rows() || probabilities.cols() != ds.labels.cols())
    throw DimensionError("evaluate: prediction matrix does not match dataset");
  EvalReport report;
  report.rows = static_cast<std::size_t>(ds.rows());
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (Eigen::Index t = 0; t < probabilities.cols(); ++t) {
    const Eigen::VectorXd p = probabilities.col(t);
    const Eigen::VectorXd y = ds.labels.col(t);
    std::span<const double> ps(p.data(), static_cast<std::size_t>(p.size()));
    std::span<const double> ys(y.data(), static_cast<std::size_t>(y.size()));
    TaskMetrics m;
    m.task = ds.task_names[static_cast<std::size_t>(t)];
    m.positive_rate = ds.rows() > 0 ? y.mean() : 0.0;
    try {
      m.auc = auc(ps, ys);
    } catch (const MetricError&) {
      m.auc = nan;
    }
    try {
      m.gauc = gauc(ps, ys, ds.user_ids);
    } catch (const MetricError&) {
      m.gauc = nan;
    }
    report.tasks.push_back(m);
  }
  return report;
}

EvalReport evaluate(Model& model, const Dataset& ds, int chunk) {
  if (ds.task_names.size() != model.tasks().size()) throw ConfigError("evaluate: dataset and model task sets differ");
  for (std::size_t t = 0; t < ds.task_names.size(); ++t)
    if (ds.task_names[t] != model.tasks()[t].name)
      throw ConfigError("evaluate: dataset task '" + ds.task_names[t] + "' does not match model task '" +
                        model.tasks()[t].name + "'");
  return evaluate_predictions(predict(model, ds.features, chunk), ds);
}

}  // namespace home
