#include "home/io.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace home {
namespace {

// Reads keys from one JSON object and rejects any key nobody asked for.
class Section {
 public:
  Section(const Json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
    if (!doc_.is_object()) throw ConfigError("'" + path_ + "' must be an object");
  }

  template <typename T>
  bool get(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = doc_.find(key);
    if (it == doc_.end()) return false;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("'" + qualified(key) + "': " + e.what());
    }
    return true;
  }

  const Json* child(const std::string& key) {
    seen_.insert(key);
    auto it = doc_.find(key);
    return it == doc_.end() ? nullptr : &*it;
  }

  std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = doc_.begin(); it != doc_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("unknown key '" + qualified(it.key()) + "'");
  }

 private:
  const Json& doc_;
  std::string path_;
  std::set<std::string> seen_;
};

Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

Json matrix_rows(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string to_string(GateKind k) {
  switch (k) {
    case GateKind::task: return "task";
    case GateKind::meta: return "meta";
    case GateKind::self: return "self";
    case GateKind::feature_mix: return "feature_mix";
  }
  return "?";
}

}  // namespace

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

void apply_overrides(Json& doc, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + o + "' must look like section.key=value");
    const std::string key = o.substr(0, eq);
    const std::string raw = o.substr(eq + 1);
    Json value;
    try {
      value = Json::parse(raw);
    } catch (const nlohmann::json::parse_error&) {
      value = raw;
    }
    Json* node = &doc;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (part.empty()) throw ConfigError("override '" + o + "' has an empty key segment");
      if (!node->is_object()) *node = Json::object();
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      node = &(*node)[part];
      start = dot + 1;
    }
  }
}

std::vector<TaskSpec> parse_tasks(const Json& doc) {
  if (!doc.is_array()) throw ConfigError("'tasks' must be an array");
  std::vector<TaskSpec> tasks;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    Section s(doc[i], "tasks[" + std::to_string(i) + "]");
    TaskSpec t;
    std::string category = "interaction";
    if (!s.get("name", t.name)) throw ConfigError(s.qualified("name") + " is required");
    s.get("category", category);
    s.get("positive_rate", t.positive_rate);
    s.finish();
    t.category = category_from_string(category);
    tasks.push_back(t);
  }
  return tasks;
}

Json to_json(const std::vector<TaskSpec>& tasks) {
  Json out = Json::array();
  for (const auto& t : tasks)
    out.push_back({{"name", t.name}, {"category", to_string(t.category)}, {"positive_rate", t.positive_rate}});
  return out;
}

DatasetSpec parse_dataset_spec(const Json& doc) {
  DatasetSpec spec = demo_dataset_spec();
  Section s(doc, "dataset");
  s.get("n_users", spec.n_users);
  if (const Json* logs = s.child("logs_per_user")) {
    Section l(*logs, "dataset.logs_per_user");
    l.get("min", spec.min_logs);
    l.get("max", spec.max_logs);
    l.finish();
  }
  s.get("n_items", spec.n_items);
  s.get("feature_width", spec.feature_width);
  s.get("latent_dim", spec.latent_dim);
  s.get("distractor_fraction", spec.distractor_fraction);
  s.get("rho_in", spec.rho_in);
  s.get("rho_cross", spec.rho_cross);
  s.get("signal_scale", spec.signal_scale);
  s.get("noise_scale", spec.noise_scale);
  s.get("view_noise", spec.view_noise);
  s.get("seed", spec.seed);
  if (const Json* tasks = s.child("tasks")) spec.tasks = parse_tasks(*tasks);
  s.finish();
  spec.validate();
  return spec;
}

Json to_json(const DatasetSpec& spec) {
  return {{"n_users", spec.n_users},
          {"logs_per_user", {{"min", spec.min_logs}, {"max", spec.max_logs}}},
          {"n_items", spec.n_items},
          {"feature_width", spec.feature_width},
          {"latent_dim", spec.latent_dim},
          {"distractor_fraction", spec.distractor_fraction},
          {"rho_in", spec.rho_in},
          {"rho_cross", spec.rho_cross},
          {"signal_scale", spec.signal_scale},
          {"noise_scale", spec.noise_scale},
          {"view_noise", spec.view_noise},
          {"seed", spec.seed},
          {"tasks", to_json(spec.tasks)}};
}

ModelConfig parse_model_config(const Json& doc, int default_input_width) {
  ModelConfig c;
  c.input_width = default_input_width;
  Section s(doc, "model");
  std::string arch = to_string(c.architecture);
  std::string act = to_string(c.expert_activation);
  s.get("architecture", arch);
  s.get("input_width", c.input_width);
  s.get("expert_width", c.expert_width);
  s.get("experts_per_group", c.experts_per_group);
  s.get("lora_count", c.lora_count);
  s.get("expert_hidden", c.expert_hidden);
  s.get("tower_hidden", c.tower_hidden);
  s.get("gate_hidden", c.gate_hidden);
  s.get("expert_activation", act);
  s.get("expert_normalization", c.expert_normalization);
  s.get("allow_norm_relu", c.allow_norm_relu);
  s.get("bn_epsilon", c.bn_epsilon);
  s.get("bn_momentum", c.bn_momentum);
  s.get("use_feature_gate_layer1", c.use_feature_gate_layer1);
  s.get("use_feature_gate_layer2", c.use_feature_gate_layer2);
  s.get("use_self_gate", c.use_self_gate);
  s.get("use_hierarchy_mask", c.use_hierarchy_mask);
  s.get("zero_init_tower_output", c.zero_init_tower_output);
  s.get("seed", c.seed);
  s.child("variant");  // handled by parse_run_config
  s.finish();
  c.architecture = architecture_from_string(arch);
  c.expert_activation = activation_from_string(act);
  return c;
}

Json to_json(const ModelConfig& c) {
  return {{"architecture", to_string(c.architecture)},
          {"input_width", c.input_width},
          {"expert_width", c.expert_width},
          {"experts_per_group", c.experts_per_group},
          {"lora_count", c.lora_count},
          {"expert_hidden", c.expert_hidden},
          {"tower_hidden", c.tower_hidden},
          {"gate_hidden", c.gate_hidden},
          {"expert_activation", to_string(c.expert_activation)},
          {"expert_normalization", c.expert_normalization},
          {"allow_norm_relu", c.allow_norm_relu},
          {"bn_epsilon", c.bn_epsilon},
          {"bn_momentum", c.bn_momentum},
          {"use_feature_gate_layer1", c.use_feature_gate_layer1},
          {"use_feature_gate_layer2", c.use_feature_gate_layer2},
          {"use_self_gate", c.use_self_gate},
          {"use_hierarchy_mask", c.use_hierarchy_mask},
          {"zero_init_tower_output", c.zero_init_tower_output},
          {"seed", c.seed}};
}

void RunConfig::validate() const {
  dataset.validate();
  model.validate(dataset.tasks);
  train.validate();
  if (model.input_width != dataset.feature_width)
    throw ConfigError("model.input_width " + std::to_string(model.input_width) + " differs from dataset.feature_width " +
                      std::to_string(dataset.feature_width));
  for (const auto& [task, w] : ranking_weights) {
    bool known = false;
    for (const auto& t : dataset.tasks) known = known || t.name == task;
    if (!known) throw ConfigError("ranking_weights names unknown task '" + task + "'");
    if (!std::isfinite(w)) throw ConfigError("ranking weight for '" + task + "' must be finite");
  }
  if (grad_check.batch_size < 2) throw ConfigError("grad_check.batch_size must be at least 2");
  if (!(grad_check.step > 0.0) || !(grad_check.tolerance > 0.0)) throw ConfigError("grad_check step and tolerance must be positive");
}

RunConfig parse_run_config(const Json& doc) {
  RunConfig rc;
  Section s(doc, "");
  if (const Json* d = s.child("dataset")) rc.dataset = parse_dataset_spec(*d);
  rc.model = parse_model_config(Json::object(), rc.dataset.feature_width);
  if (const Json* m = s.child("model")) {
    rc.model = parse_model_config(*m, rc.dataset.feature_width);
    if (m->contains("variant")) {
      if (!(*m)["variant"].is_string()) throw ConfigError("'model.variant' must be a string");
      rc.variant = (*m)["variant"].get<std::string>();
      rc.model = apply_variant(rc.model, rc.variant);
    }
  }
  if (const Json* t = s.child("train")) {
    Section ts(*t, "train");
    ts.get("batch_size", rc.train.batch_size);
    ts.get("epochs", rc.train.epochs);
    ts.get("max_steps", rc.train.max_steps);
    ts.get("learning_rate", rc.train.learning_rate);
    ts.get("beta1", rc.train.beta1);
    ts.get("beta2", rc.train.beta2);
    ts.get("adam_epsilon", rc.train.adam_epsilon);
    ts.get("clamp", rc.train.clamp);
    ts.get("eval_every", rc.train.eval_every);
    ts.get("eval_fraction", rc.train.eval_fraction);
    ts.get("seed", rc.train.seed);
    ts.finish();
  }
  if (const Json* th = s.child("thresholds")) {
    Section ts(*th, "thresholds");
    ts.get("zero_fraction", rc.thresholds.zero_fraction);
    ts.get("monopoly", rc.thresholds.monopoly);
    ts.get("dispersion", rc.thresholds.dispersion);
    ts.get("degradation", rc.thresholds.degradation);
    ts.get("underfitting", rc.thresholds.underfitting);
    ts.finish();
  }
  s.get("ranking_weights", rc.ranking_weights);
  if (const Json* g = s.child("grad_check")) {
    Section gs(*g, "grad_check");
    gs.get("batch_size", rc.grad_check.batch_size);
    gs.get("step", rc.grad_check.step);
    gs.get("tolerance", rc.grad_check.tolerance);
    gs.get("param_scale", rc.grad_check.param_scale);
    gs.get("seed", rc.grad_check.seed);
    gs.finish();
  }
  s.finish();
  rc.validate();
  return rc;
}

Json to_json(const PathologyThresholds& th) {
  return {{"zero_fraction", th.zero_fraction},
          {"monopoly", th.monopoly},
          {"dispersion", th.dispersion},
          {"degradation", th.degradation},
          {"underfitting", th.underfitting}};
}

Json to_json(const RunConfig& rc) {
  Json model = to_json(rc.model);
  if (!rc.variant.empty()) model["variant"] = rc.variant;
  return {{"dataset", to_json(rc.dataset)},
          {"model", model},
          {"train",
           {{"batch_size", rc.train.batch_size},
            {"epochs", rc.train.epochs},
            {"max_steps", rc.train.max_steps},
            {"learning_rate", rc.train.learning_rate},
            {"beta1", rc.train.beta1},
            {"beta2", rc.train.beta2},
            {"adam_epsilon", rc.train.adam_epsilon},
            {"clamp", rc.train.clamp},
            {"eval_every", rc.train.eval_every},
            {"eval_fraction", rc.train.eval_fraction},
            {"seed", rc.train.seed}}},
          {"thresholds", to_json(rc.thresholds)},
          {"ranking_weights", rc.ranking_weights},
          {"grad_check",
           {{"batch_size", rc.grad_check.batch_size},
            {"step", rc.grad_check.step},
            {"tolerance", rc.grad_check.tolerance},
            {"param_scale", rc.grad_check.param_scale},
            {"seed", rc.grad_check.seed}}}};
}

// ---------------------------------------------------------------------------
// Checkpoints

constexpr const char* kCheckpointFormat = "home-moe-checkpoint";
constexpr int kCheckpointVersion = 1;

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  Json doc;
  doc["format"] = kCheckpointFormat;
  doc["version"] = kCheckpointVersion;
  doc["model"] = to_json(model.config());
  doc["tasks"] = to_json(model.tasks());
  Json params = Json::array();
  for (const Parameter* p : model.parameters()) {
    Json data = Json::array();
    for (Eigen::Index i = 0; i < p->value.size(); ++i) data.push_back(p->value.data()[i]);
    params.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}, {"data", std::move(data)}});
  }
  doc["parameters"] = std::move(params);
  Json stats = Json::array();
  for (const auto& [name, s] : model.bn_stats()) {
    Json mean = Json::array();
    Json var = Json::array();
    for (Eigen::Index i = 0; i < s->running_mean.size(); ++i) {
      mean.push_back(s->running_mean[i]);
      var.push_back(s->running_var[i]);
    }
    stats.push_back({{"name", name}, {"running_mean", std::move(mean)}, {"running_var", std::move(var)}});
  }
  doc["batch_norm"] = std::move(stats);
  write_text_file(path, doc.dump() + "\n");
}

std::unique_ptr<Model> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  try {
    const Json doc = Json::parse(in);
    if (doc.value("format", std::string()) != kCheckpointFormat)
      throw CheckpointError("'" + path.string() + "' is not a checkpoint");
    if (doc.at("version").get<int>() != kCheckpointVersion)
      throw CheckpointError("unsupported checkpoint version " + doc.at("version").dump());
    const auto tasks = parse_tasks(doc.at("tasks"));
    const ModelConfig config = parse_model_config(doc.at("model"), 0);
    auto model = build_model(config, tasks);

    std::set<std::string> loaded;
    for (const Json& p : doc.at("parameters")) {
      const std::string name = p.at("name").get<std::string>();
      Parameter* target = model->find_parameter(name);
      if (target == nullptr) throw CheckpointError("unexpected parameter '" + name + "'");
      const auto rows = p.at("rows").get<Eigen::Index>();
      const auto cols = p.at("cols").get<Eigen::Index>();
      const Json& data = p.at("data");
      if (rows != target->value.rows() || cols != target->value.cols() ||
          data.size() != static_cast<std::size_t>(rows * cols))
        throw CheckpointError("parameter '" + name + "' has the wrong shape");
      for (std::size_t i = 0; i < data.size(); ++i) target->value.data()[i] = data[i].get<double>();
      loaded.insert(name);
    }
    for (const Parameter* p : model->parameters())
      if (!loaded.count(p->name)) throw CheckpointError("missing parameter '" + p->name + "'");

    std::set<std::string> stats_loaded;
    for (const Json& s : doc.at("batch_norm")) {
      const std::string name = s.at("name").get<std::string>();
      BatchNormStats* target = nullptr;
      for (const auto& [n, st] : model->bn_stats())
        if (n == name) target = st;
      if (target == nullptr) throw CheckpointError("unexpected batch-norm state '" + name + "'");
      const auto mean = s.at("running_mean").get<std::vector<double>>();
      const auto var = s.at("running_var").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(mean.size()) != target->running_mean.size() || var.size() != mean.size())
        throw CheckpointError("batch-norm state '" + name + "' has the wrong width");
      for (std::size_t i = 0; i < mean.size(); ++i) {
        target->running_mean[static_cast<Eigen::Index>(i)] = mean[i];
        target->running_var[static_cast<Eigen::Index>(i)] = var[i];
      }
      stats_loaded.insert(name);
    }
    for (const auto& [n, st] : model->bn_stats())
      if (!stats_loaded.count(n)) throw CheckpointError("missing batch-norm state '" + n + "'");
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("corrupt checkpoint '" + path.string() + "': " + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError("corrupt checkpoint '" + path.string() + "': " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Reports

Json to_json(const EvalReport& report) {
  Json tasks = Json::array();
  double auc_sum = 0.0;
  double gauc_sum = 0.0;
  int auc_n = 0;
  int gauc_n = 0;
  for (const auto& t : report.tasks) {
    tasks.push_back({{"task", t.task},
                     {"positive_rate", t.positive_rate},
                     {"auc", number_or_null(t.auc)},
                     {"gauc", number_or_null(t.gauc)}});
    if (std::isfinite(t.auc)) {
      auc_sum += t.auc;
      ++auc_n;
    }
    if (std::isfinite(t.gauc)) {
      gauc_sum += t.gauc;
      ++gauc_n;
    }
  }
  return {{"schema", "home-moe/metrics/v1"},
          {"rows", report.rows},
          {"tasks", std::move(tasks)},
          {"mean_auc", auc_n ? Json(auc_sum / auc_n) : Json(nullptr)},
          {"mean_gauc", gauc_n ? Json(gauc_sum / gauc_n) : Json(nullptr)}};
}

Json to_json(const GateReport& r) {
  Json experts = Json::array();
  for (const auto& e : r.experts)
    experts.push_back({{"id", e.id},
                       {"group", e.group},
                       {"layer", e.layer},
                       {"role", e.role == ExpertRole::shared ? "shared" : "specific"},
                       {"owner_task", e.owner_task >= 0 ? Json(r.tasks[static_cast<std::size_t>(e.owner_task)]) : Json(nullptr)},
                       {"routed", e.routed},
                       {"mean", e.mean},
                       {"std", e.stddev},
                       {"zero_fraction", e.zero_fraction}});
  Json gates = Json::array();
  for (const auto& g : r.gates)
    gates.push_back({{"name", g.name},
                     {"kind", to_string(g.kind)},
                     {"task", g.task >= 0 ? Json(r.tasks[static_cast<std::size_t>(g.task)]) : Json(nullptr)},
                     {"experts", g.experts},
                     {"mean_weights", g.mean_weights}});
  return {{"schema", "home-moe/gate-report/v1"},
          {"rows", r.rows},
          {"tasks", r.tasks},
          {"experts", std::move(experts)},
          {"task_weights", matrix_rows(r.task_weights)},
          {"mass_share", matrix_rows(r.mass_share)},
          {"gates", std::move(gates)}};
}

Json to_json(const PathologyFlags& f, const PathologyThresholds& th) {
  Json collapse = Json::array();
  for (const auto& c : f.collapse) collapse.push_back({{"expert", c.expert}, {"reason", c.reason}, {"value", number_or_null(c.value)}});
  Json degradation = Json::array();
  for (const auto& d : f.degradation) degradation.push_back({{"expert", d.expert}, {"task", d.task}, {"share", d.share}});
  Json underfitting = Json::array();
  for (const auto& u : f.underfitting) underfitting.push_back({{"task", u.task}, {"specific_weight", u.specific_weight}});
  return {{"schema", "home-moe/pathology-flags/v1"},
          {"thresholds", to_json(th)},
          {"collapse", std::move(collapse)},
          {"degradation", std::move(degradation)},
          {"underfitting", std::move(underfitting)}};
}

std::string gate_weights_csv(const GateReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "task";
  for (const auto& e : r.experts)
    if (e.routed) os << ',' << e.id;
  os << '\n';
  for (std::size_t t = 0; t < r.tasks.size(); ++t) {
    os << r.tasks[t];
    for (std::size_t e = 0; e < r.experts.size(); ++e)
      if (r.experts[e].routed) os << ',' << r.task_weights(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(e));
    os << '\n';
  }
  return os.str();
}

}  // namespace home
