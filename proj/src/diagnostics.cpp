#include "home/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace home {

GateReport collect_gate_report(Model& model, std::span<const Matrix> batches) {
  if (batches.empty()) throw ConfigError("collect_gate_report: need at least one batch");
  GateReport report;
  for (const auto& t : model.tasks()) report.tasks.push_back(t.name);
  const auto n_tasks = static_cast<Eigen::Index>(report.tasks.size());

  std::map<std::string, std::size_t> index;
  std::vector<double> sum;
  std::vector<double> sum_sq;
  std::vector<double> zeros;
  std::vector<double> count;
  std::vector<std::vector<double>> gate_sums;

  for (const Matrix& features : batches) {
    Tape tape;
    ForwardTrace trace = model.forward(tape, features, Mode::infer);
    if (report.experts.empty()) {
      for (const auto& e : trace.experts) {
        index[e.id] = report.experts.size();
        report.experts.push_back({e.id, e.group, e.layer, e.role, e.owner_task, false, 0.0, 0.0, 0.0});
      }
      for (const auto& g : trace.gates) {
        report.gates.push_back({g.name, g.kind, g.task, g.experts, {}});
        gate_sums.emplace_back(g.experts.size(), 0.0);
      }
      sum.assign(report.experts.size(), 0.0);
      sum_sq = zeros = count = sum;
    }
    for (const auto& e : trace.experts) {
      const std::size_t i = index.at(e.id);
      const Matrix& out = e.output.post.value();
      sum[i] += out.sum();
      sum_sq[i] += out.squaredNorm();
      zeros[i] += static_cast<double>((out.array() == 0.0).count());
      count[i] += static_cast<double>(out.size());
    }
    for (std::size_t g = 0; g < trace.gates.size(); ++g) {
      const Matrix& w = trace.gates[g].weights.value();
      for (Eigen::Index c = 0; c < w.cols(); ++c) gate_sums[g][static_cast<std::size_t>(c)] += w.col(c).sum();
    }
    report.rows += static_cast<std::size_t>(features.rows());
  }

  const double rows = static_cast<double>(report.rows);
  for (std::size_t i = 0; i < report.experts.size(); ++i) {
    auto& e = report.experts[i];
    e.mean = sum[i] / count[i];
    e.stddev = std::sqrt(std::max(0.0, sum_sq[i] / count[i] - e.mean * e.mean));
    e.zero_fraction = zeros[i] / count[i];
  }
  report.task_weights = Matrix::Zero(n_tasks, static_cast<Eigen::Index>(report.experts.size()));
  for (std::size_t g = 0; g < report.gates.size(); ++g) {
    auto& gs = report.gates[g];
    for (double s : gate_sums[g]) gs.mean_weights.push_back(s / rows);
    if (gs.kind != GateKind::task) continue;
    for (std::size_t c = 0; c < gs.experts.size(); ++c) {
      const std::size_t e = index.at(gs.experts[c]);
      report.experts[e].routed = true;
      report.task_weights(gs.task, static_cast<Eigen::Index>(e)) = gs.mean_weights[c];
    }
  }
  report.mass_share = Matrix::Zero(static_cast<Eigen::Index>(report.experts.size()), n_tasks);
  for (Eigen::Index e = 0; e < report.task_weights.cols(); ++e) {
    const double mass = report.task_weights.col(e).sum();
    if (mass > 0.0) report.mass_share.row(e) = report.task_weights.col(e).transpose() / mass;
  }
  return report;
}

GateReport collect_gate_report(Model& model, const Dataset& ds, int batch_size) {
  std::vector<Matrix> batches;
  for (Eigen::Index start = 0; start < ds.rows(); start += batch_size)
    batches.emplace_back(ds.features.middleRows(start, std::min<Eigen::Index>(batch_size, ds.rows() - start)));
  return collect_gate_report(model, batches);
}

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double ratio(double a, double b) {
  if (a == b) return 1.0;
  if (a == 0.0 || b == 0.0) return std::numeric_limits<double>::infinity();
  return std::max(a / b, b / a);
}

}  // namespace

double output_disparity(const GateReport& report, std::size_t expert) {
  std::vector<double> stds;
  std::vector<double> means;
  for (const auto& e : report.experts)
    if (e.routed) {
      stds.push_back(e.stddev);
      means.push_back(std::abs(e.mean));
    }
  const auto& e = report.experts.at(expert);
  return std::max(ratio(e.stddev, median(stds)), ratio(std::abs(e.mean), median(means)));
}

PathologyFlags detect_pathologies(const GateReport& report, const PathologyThresholds& th) {
  PathologyFlags flags;
  const auto n_tasks = report.task_weights.rows();
  for (std::size_t i = 0; i < report.experts.size(); ++i) {
    const auto& e = report.experts[i];
    const auto col = static_cast<Eigen::Index>(i);
    if (e.zero_fraction > th.zero_fraction) {
      flags.collapse.push_back({e.id, "zero_activation", e.zero_fraction});
      continue;
    }
    if (e.routed && n_tasks > 0 && report.task_weights.col(col).maxCoeff() > th.monopoly) {
      const double disparity = output_disparity(report, i);
      if (disparity > th.dispersion) flags.collapse.push_back({e.id, "monopolized", disparity});
    }
  }
  for (std::size_t i = 0; i < report.experts.size(); ++i) {
    const auto& e = report.experts[i];
    const auto col = static_cast<Eigen::Index>(i);
    if (e.role != ExpertRole::shared || !e.routed) continue;
    int users = 0;
    for (Eigen::Index t = 0; t < n_tasks; ++t) users += report.task_weights(t, col) > 0.0 ? 1 : 0;
    if (users < 2) continue;
    Eigen::Index top = 0;
    const double share = report.mass_share.row(col).maxCoeff(&top);
    if (share > th.degradation) flags.degradation.push_back({e.id, report.tasks[static_cast<std::size_t>(top)], share});
  }
  for (Eigen::Index t = 0; t < n_tasks; ++t) {
    bool has_own = false;
    double own = 0.0;
    for (std::size_t i = 0; i < report.experts.size(); ++i) {
      const auto& e = report.experts[i];
      if (e.role == ExpertRole::specific && e.owner_task == t && e.routed) {
        has_own = true;
        own += report.task_weights(t, static_cast<Eigen::Index>(i));
      }
    }
    if (has_own && own < th.underfitting) flags.underfitting.push_back({report.tasks[static_cast<std::size_t>(t)], own});
  }
  return flags;
}

}  // namespace home
