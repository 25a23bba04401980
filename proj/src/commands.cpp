#include "home/commands.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <ostream>
#include <sstream>

namespace home {
namespace {

std::string fixed(double v, int digits = 4) {
  if (!std::isfinite(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void require_file(const fs::path& path, const char* what) {
  if (!fs::is_regular_file(path)) throw DataError(std::string(what) + " '" + path.string() + "' does not exist");
}

void print_metrics(const EvalReport& report, std::ostream& log) {
  log << "task            rate      auc     gauc\n";
  for (const auto& t : report.tasks) {
    char line[128];
    std::snprintf(line, sizeof(line), "%-12s %7s %8s %8s\n", t.task.c_str(), fixed(t.positive_rate).c_str(),
                  fixed(t.auc).c_str(), fixed(t.gauc).c_str());
    log << line;
  }
}

Json metrics_json(Model& model, const Dataset& ds, const EvalReport& report, const std::map<std::string, double>& weights) {
  Json doc = to_json(report);
  const Matrix p = predict(model, ds.features);
  std::map<std::string, double> w = weights;
  for (const auto& t : model.tasks()) w.emplace(t.name, 1.0);
  double total = 0.0;
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    std::map<std::string, double> xtrs;
    for (std::size_t t = 0; t < model.tasks().size(); ++t) xtrs[model.tasks()[t].name] = p(r, static_cast<Eigen::Index>(t));
    total += ranking_score(xtrs, w);
  }
  doc["ranking_weights"] = w;
  doc["mean_ranking_score"] = p.rows() > 0 ? Json(total / static_cast<double>(p.rows())) : Json(nullptr);
  return doc;
}

}  // namespace

RunConfig load_run_config(const fs::path& path, const std::vector<std::string>& overrides) {
  Json doc = read_json_file(path);
  apply_overrides(doc, overrides);
  return parse_run_config(doc);
}

Dataset cmd_gen_data(const fs::path& spec_path, const fs::path& out, std::ostream& log) {
  const Json doc = read_json_file(spec_path);
  DatasetSpec spec;
  if (doc.is_object() && doc.contains("dataset"))
    spec = load_run_config(spec_path).dataset;
  else
    spec = parse_dataset_spec(doc);
  Dataset ds = generate_dataset(spec);
  write_dataset(ds, out);
  log << "wrote " << ds.rows() << " rows for " << ds.task_names.size() << " tasks to " << out.string() << "\n";
  log << "task          target  realized\n";
  for (std::size_t t = 0; t < ds.task_names.size(); ++t) {
    char line[128];
    std::snprintf(line, sizeof(line), "%-12s %7s %9s\n", ds.task_names[t].c_str(), fixed(spec.tasks[t].positive_rate).c_str(),
                  fixed(ds.positive_rate(t)).c_str());
    log << line;
  }
  return ds;
}

TrainOutcome cmd_train(const fs::path& config_path, const std::vector<std::string>& overrides, const fs::path& data_path,
                       const fs::path& out_dir, std::ostream& log) {
  const RunConfig rc = load_run_config(config_path, overrides);
  require_file(data_path, "data file");
  const Dataset ds = read_dataset(data_path);
  if (ds.task_names.size() != rc.dataset.tasks.size())
    throw ConfigError("data file has " + std::to_string(ds.task_names.size()) + " tasks, config has " +
                      std::to_string(rc.dataset.tasks.size()));
  for (std::size_t t = 0; t < ds.task_names.size(); ++t)
    if (ds.task_names[t] != rc.dataset.tasks[t].name)
      throw ConfigError("data file task '" + ds.task_names[t] + "' does not match config task '" + rc.dataset.tasks[t].name + "'");

  fs::create_directories(out_dir);
  write_text_file(out_dir / "config.json", read_bytes(config_path));
  write_text_file(out_dir / "config.resolved.json", to_json(rc).dump(2) + "\n");

  auto [train_set, eval_set] = split_by_user(ds, rc.train.eval_fraction, rc.train.seed);
  auto model = build_model(rc.model, rc.dataset.tasks);
  TrainOutcome outcome;
  outcome.parameters = parameter_count(*model);
  log << "model " << to_string(rc.model.architecture) << (rc.variant.empty() ? "" : " (" + rc.variant + ")") << ", "
      << outcome.parameters << " parameters; " << train_set.rows() << " train rows, " << eval_set.rows() << " eval rows\n";

  outcome.result = train(*model, train_set, eval_set.rows() > 0 ? &eval_set : nullptr, rc.train);
  const Dataset& scored = eval_set.rows() > 0 ? eval_set : train_set;
  outcome.metrics = evaluate(*model, scored);

  save_checkpoint(*model, out_dir / "checkpoint.json");
  write_history(outcome.result.history, out_dir / "history.csv");
  write_text_file(out_dir / "metrics.json", metrics_json(*model, scored, outcome.metrics, rc.ranking_weights).dump(2) + "\n");
  log << outcome.result.steps << " steps, final loss " << fixed(outcome.result.step_loss.empty() ? NAN : outcome.result.step_loss.back())
      << "\n";
  print_metrics(outcome.metrics, log);
  return outcome;
}

EvalReport cmd_eval(const fs::path& checkpoint, const fs::path& data, const fs::path& out, std::ostream& log) {
  auto model = load_checkpoint(checkpoint);
  require_file(data, "data file");
  const Dataset ds = read_dataset(data);
  EvalReport report = evaluate(*model, ds);
  const std::string text = metrics_json(*model, ds, report, {}).dump(2) + "\n";
  if (!out.empty()) {
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_text_file(out, text);
  }
  print_metrics(report, log);
  return report;
}

PathologyFlags cmd_diagnose(const fs::path& checkpoint, const fs::path& data, const fs::path& out_dir, const fs::path& config,
                            std::ostream& log) {
  PathologyThresholds thresholds;
  if (!config.empty()) thresholds = load_run_config(config).thresholds;
  auto model = load_checkpoint(checkpoint);
  require_file(data, "data file");
  const Dataset ds = read_dataset(data);
  const GateReport report = collect_gate_report(*model, ds);
  const PathologyFlags flags = detect_pathologies(report, thresholds);

  fs::create_directories(out_dir);
  write_text_file(out_dir / "gate_report.json", to_json(report).dump(2) + "\n");
  write_text_file(out_dir / "pathology_flags.json", to_json(flags, thresholds).dump(2) + "\n");
  write_text_file(out_dir / "gate_weights.csv", gate_weights_csv(report));

  log << "expert                       zero%     mean      std\n";
  for (const auto& e : report.experts) {
    char line[160];
    std::snprintf(line, sizeof(line), "%-26s %7s %8s %8s\n", e.id.c_str(), fixed(100.0 * e.zero_fraction, 1).c_str(),
                  fixed(e.mean).c_str(), fixed(e.stddev).c_str());
    log << line;
  }
  for (const auto& c : flags.collapse) log << "collapse: " << c.expert << " (" << c.reason << ", " << fixed(c.value) << ")\n";
  for (const auto& d : flags.degradation) log << "degradation: " << d.expert << " dominated by " << d.task << " (" << fixed(d.share) << ")\n";
  for (const auto& u : flags.underfitting) log << "underfitting: " << u.task << " (own experts " << fixed(u.specific_weight) << ")\n";
  if (flags.empty()) log << "no pathologies flagged\n";
  return flags;
}

bool cmd_grad_check(const fs::path& config, const std::vector<std::string>& overrides, std::ostream& log) {
  const RunConfig rc = load_run_config(config, overrides);
  auto model = build_model(rc.model, rc.dataset.tasks);
  const auto rows = run_grad_check(*model, rc.grad_check);
  bool ok = true;
  log << "block                                   size      grad_norm    rel_error  result\n";
  for (const auto& r : rows) {
    char line[200];
    std::snprintf(line, sizeof(line), "%-38s %6lld %14.6e %12.3e  %s\n", r.name.c_str(), static_cast<long long>(r.size), r.grad_norm,
                  r.relative_error, r.passed ? "ok" : "FAIL");
    log << line;
    ok = ok && r.passed;
  }
  log << rows.size() << " blocks, " << (ok ? "all passed" : "FAILED") << " (tolerance " << rc.grad_check.tolerance << ")\n";
  return ok;
}

}  // namespace home
