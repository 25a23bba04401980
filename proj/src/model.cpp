#include "home/model.hpp"

#include <algorithm>
#include <array>
#include <set>

namespace home {

std::string to_string(Architecture a) {
  switch (a) {
    case Architecture::shared_bottom: return "shared_bottom";
    case Architecture::mmoe: return "mmoe";
    case Architecture::cgc: return "cgc";
    case Architecture::home: return "home";
  }
  return "?";
}

Architecture architecture_from_string(std::string_view s) {
  if (s == "shared_bottom") return Architecture::shared_bottom;
  if (s == "mmoe") return Architecture::mmoe;
  if (s == "cgc") return Architecture::cgc;
  if (s == "home") return Architecture::home;
  throw ConfigError("unknown architecture '" + std::string(s) + "' (shared_bottom | mmoe | cgc | home)");
}

std::string to_string(TaskCategory c) { return c == TaskCategory::interaction ? "interaction" : "watch"; }

TaskCategory category_from_string(std::string_view s) {
  if (s == "interaction") return TaskCategory::interaction;
  if (s == "watch") return TaskCategory::watch;
  throw ConfigError("unknown task category '" + std::string(s) + "' (interaction | watch)");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::swish: return "swish";
  }
  return "?";
}

Activation activation_from_string(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "swish") return Activation::swish;
  throw ConfigError("unknown activation '" + std::string(s) + "'");
}

void ModelConfig::validate(const std::vector<TaskSpec>& tasks) const {
  if (input_width <= 0) throw ConfigError("model.input_width must be positive");
  if (expert_width <= 0) throw ConfigError("model.expert_width must be positive");
  if (experts_per_group < 1) throw ConfigError("model.experts_per_group must be at least 1");
  if (lora_count < 1) throw ConfigError("model.lora_count must be at least 1");
  for (int h : expert_hidden)
    if (h <= 0) throw ConfigError("model.expert_hidden widths must be positive");
  for (int h : tower_hidden)
    if (h <= 0) throw ConfigError("model.tower_hidden widths must be positive");
  for (int h : gate_hidden)
    if (h <= 0) throw ConfigError("model.gate_hidden widths must be positive");
  if (expert_activation == Activation::sigmoid) throw ConfigError("model.expert_activation must be relu or swish");
  if (expert_normalization && expert_activation == Activation::relu && !allow_norm_relu)
    throw ConfigError("normalized experts use swish; set model.allow_norm_relu to pair batch norm with relu");
  if (!(bn_epsilon > 0.0)) throw ConfigError("model.bn_epsilon must be positive");
  if (!(bn_momentum >= 0.0 && bn_momentum < 1.0)) throw ConfigError("model.bn_momentum must be in [0, 1)");
  if (tasks.empty()) throw ConfigError("at least one task is required");
  std::set<std::string> names;
  for (const auto& t : tasks) {
    if (t.name.empty()) throw ConfigError("task names must be non-empty");
    if (!names.insert(t.name).second) throw ConfigError("duplicate task name '" + t.name + "'");
  }
  if (architecture == Architecture::home) {
    if (use_feature_gate_layer1 && input_width % lora_count != 0)
      throw ConfigError("model.lora_count " + std::to_string(lora_count) + " does not divide input width " +
                        std::to_string(input_width));
    if (use_feature_gate_layer2 && expert_width % lora_count != 0)
      throw ConfigError("model.lora_count " + std::to_string(lora_count) + " does not divide expert width " +
                        std::to_string(expert_width));
  }
}

std::vector<std::string> variant_names() {
  return {"home", "wo_fg2", "wo_fg", "wo_fg_sg", "wo_fg_sg_mask", "mmoe", "mmoe_star", "cgc_star"};
}

ModelConfig apply_variant(ModelConfig c, std::string_view variant) {
  std::string v(variant);
  if (v.rfind("w/o ", 0) == 0) v = "wo_" + v.substr(4);
  std::replace(v.begin(), v.end(), '-', '_');
  auto normalized_experts = [&c] {
    c.expert_activation = Activation::swish;
    c.expert_normalization = true;
  };
  auto home_flags = [&c](bool fg1, bool fg2, bool sg, bool mask) {
    c.architecture = Architecture::home;
    c.use_feature_gate_layer1 = fg1;
    c.use_feature_gate_layer2 = fg2;
    c.use_self_gate = sg;
    c.use_hierarchy_mask = mask;
  };
  if (v == "home") {
    normalized_experts();
    home_flags(true, true, true, true);
  } else if (v == "wo_fg2") {
    normalized_experts();
    home_flags(true, false, true, true);
  } else if (v == "wo_fg") {
    normalized_experts();
    home_flags(false, false, true, true);
  } else if (v == "wo_fg_sg") {
    normalized_experts();
    home_flags(false, false, false, true);
  } else if (v == "wo_fg_sg_mask") {
    normalized_experts();
    home_flags(false, false, false, false);
  } else if (v == "mmoe") {
    c.architecture = Architecture::mmoe;
    c.expert_activation = Activation::relu;
    c.expert_normalization = false;
  } else if (v == "mmoe_star") {
    c.architecture = Architecture::mmoe;
    normalized_experts();
  } else if (v == "cgc_star") {
    c.architecture = Architecture::cgc;
    normalized_experts();
  } else {
    throw ConfigError("unknown variant '" + std::string(variant) + "'");
  }
  return c;
}

Matrix ForwardTrace::probabilities() const {
  if (predictions.empty()) return Matrix();
  Matrix out(predictions[0].rows(), static_cast<Eigen::Index>(predictions.size()));
  for (std::size_t t = 0; t < predictions.size(); ++t) out.col(static_cast<Eigen::Index>(t)) = predictions[t].value().col(0);
  return out;
}

Model::Model(ModelConfig config, std::vector<TaskSpec> tasks)
    : config_(std::move(config)), tasks_(std::move(tasks)), rng_(config_.seed) {
  config_.validate(tasks_);
}

void Model::finalize() {
  params_.clear();
  stats_.clear();
  collect(params_, stats_);
}

Parameter* Model::find_parameter(std::string_view name) const {
  for (Parameter* p : params_)
    if (p->name == name) return p;
  return nullptr;
}

void Model::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

ExpertConfig Model::expert_config(int in) const {
  ExpertConfig e;
  e.in = in;
  e.hidden = config_.expert_hidden;
  e.width = config_.expert_width;
  e.activation = config_.expert_activation;
  e.normalize = config_.expert_normalization;
  e.allow_norm_relu = config_.allow_norm_relu;
  e.bn_epsilon = config_.bn_epsilon;
  e.bn_momentum = config_.bn_momentum;
  return e;
}

namespace {

// Single shared expert feeding every tower.
class SharedBottomModel final : public Model {
 public:
  SharedBottomModel(ModelConfig config, std::vector<TaskSpec> tasks) : Model(std::move(config), std::move(tasks)) {
    bottom_ = ExpertUnit("bottom", expert_config(config_.input_width), rng_);
    for (const auto& t : tasks_)
      towers_.emplace_back("tower." + t.name, config_.expert_width, config_.tower_hidden, config_.expert_activation,
                           config_.zero_init_tower_output, rng_);
    finalize();
  }

  ForwardTrace forward(Tape& tape, const Matrix& features, Mode mode) override {
    ForwardTrace trace;
    Var v = tape.constant(features);
    auto out = bottom_.forward(v, mode);
    trace.experts.push_back({"bottom", "shared", 1, ExpertRole::shared, -1, out});
    for (auto& tower : towers_) trace.predictions.push_back(tower.forward(out.post));
    return trace;
  }

 protected:
  void collect(std::vector<Parameter*>& p, std::vector<std::pair<std::string, BatchNormStats*>>& s) override {
    bottom_.collect(p);
    bottom_.collect_stats(s);
    for (auto& t : towers_) t.collect(p);
  }

 private:
  ExpertUnit bottom_;
  std::vector<TowerUnit> towers_;
};

// MMoE (shared pool only) and CGC (shared pool plus per-task experts).
class GatedMixtureModel final : public Model {
 public:
  GatedMixtureModel(ModelConfig config, std::vector<TaskSpec> tasks) : Model(std::move(config), std::move(tasks)) {
    const int e = config_.experts_per_group;
    const bool cgc = config_.architecture == Architecture::cgc;
    for (int i = 0; i < e; ++i)
      shared_.emplace_back("shared." + std::to_string(i), expert_config(config_.input_width), rng_);
    specific_.resize(tasks_.size());
    for (std::size_t t = 0; t < tasks_.size(); ++t) {
      if (cgc)
        for (int i = 0; i < e; ++i)
          specific_[t].emplace_back("specific." + tasks_[t].name + "." + std::to_string(i),
                                    expert_config(config_.input_width), rng_);
      const int arity = e + static_cast<int>(specific_[t].size());
      gates_.emplace_back("gate." + tasks_[t].name, config_.input_width, arity, GateActivation::softmax,
                          config_.gate_hidden, rng_);
      towers_.emplace_back("tower." + tasks_[t].name, config_.expert_width, config_.tower_hidden,
                           config_.expert_activation, config_.zero_init_tower_output, rng_);
    }
    finalize();
  }

  ForwardTrace forward(Tape& tape, const Matrix& features, Mode mode) override {
    ForwardTrace trace;
    Var v = tape.constant(features);
    std::vector<Var> shared_out;
    std::vector<std::string> shared_ids;
    for (auto& ex : shared_) {
      auto o = ex.forward(v, mode);
      trace.experts.push_back({ex.name(), "shared", 1, ExpertRole::shared, -1, o});
      shared_out.push_back(o.post);
      shared_ids.push_back(ex.name());
    }
    for (std::size_t t = 0; t < tasks_.size(); ++t) {
      std::vector<Var> pool = shared_out;
      std::vector<std::string> ids = shared_ids;
      for (auto& ex : specific_[t]) {
        auto o = ex.forward(v, mode);
        trace.experts.push_back({ex.name(), "specific." + tasks_[t].name, 1, ExpertRole::specific, static_cast<int>(t), o});
        pool.push_back(o.post);
        ids.push_back(ex.name());
      }
      Var w = gates_[t].forward(v);
      trace.gates.push_back({"gate." + tasks_[t].name, GateKind::task, static_cast<int>(t), ids, true, w});
      trace.predictions.push_back(towers_[t].forward(weighted_sum(w, pool)));
    }
    return trace;
  }

 protected:
  void collect(std::vector<Parameter*>& p, std::vector<std::pair<std::string, BatchNormStats*>>& s) override {
    for (auto& ex : shared_) {
      ex.collect(p);
      ex.collect_stats(s);
    }
    for (std::size_t t = 0; t < tasks_.size(); ++t) {
      for (auto& ex : specific_[t]) {
        ex.collect(p);
        ex.collect_stats(s);
      }
      gates_[t].collect(p);
      towers_[t].collect(p);
    }
  }

 private:
  std::vector<ExpertUnit> shared_;
  std::vector<std::vector<ExpertUnit>> specific_;
  std::vector<GateUnit> gates_;
  std::vector<TowerUnit> towers_;
};

// Meta group indices in layer 1.
constexpr int kShared = 0;
constexpr int kInter = 1;
constexpr int kWatch = 2;
constexpr std::array<const char*, 3> kGroupNames{"shared", "inter", "watch"};

int category_group(TaskCategory c) { return c == TaskCategory::interaction ? kInter : kWatch; }

// Two-layer hierarchy: meta expert groups {shared, inter, watch} produce
// category representations; task-level experts are restricted to the task's
// category (plus global-shared experts) when the hierarchy mask is on.
class HomeModel final : public Model {
 public:
  HomeModel(ModelConfig config, std::vector<TaskSpec> tasks) : Model(std::move(config), std::move(tasks)) {
    const int e = config_.experts_per_group;
    const int in = config_.input_width;
    const int d = config_.expert_width;
    const bool mask = config_.use_hierarchy_mask;

    for (int g = 0; g < 3; ++g) {
      const std::string name = std::string("meta.") + kGroupNames[g];
      for (int i = 0; i < e; ++i) meta_experts_[g].emplace_back(name + "." + std::to_string(i), expert_config(in), rng_);
      if (config_.use_feature_gate_layer1) meta_fg_[g] = FeatureGate("fg1." + std::string(kGroupNames[g]), in, config_.lora_count, rng_);
      if (config_.use_self_gate)
        meta_self_[g] = GateUnit("self1." + std::string(kGroupNames[g]), in, e, self_gate_activation(e), config_.gate_hidden, rng_);
    }
    for (int g = 0; g < 3; ++g) {
      const int arity = (g == kShared || !mask) ? 3 * e : 2 * e;
      meta_gates_[g] = GateUnit("gate1." + std::string(kGroupNames[g]), in, arity, GateActivation::softmax,
                                config_.gate_hidden, rng_);
    }

    for (int i = 0; i < e; ++i) global_.emplace_back("task.global." + std::to_string(i), expert_config(d), rng_);
    for (int c = 0; c < 2; ++c)
      for (int i = 0; i < e; ++i)
        category_[c].emplace_back(std::string("task.") + kGroupNames[c + 1] + "." + std::to_string(i), expert_config(d), rng_);
    if (config_.use_feature_gate_layer2) {
      global_fg_ = FeatureGate("fg2.global", d, config_.lora_count, rng_);
      for (int c = 0; c < 2; ++c) category_fg_[c] = FeatureGate(std::string("fg2.") + kGroupNames[c + 1], d, config_.lora_count, rng_);
    }
    const int total_layer2 = 3 * e + static_cast<int>(tasks_.size()) * e;
    for (const auto& t : tasks_) {
      auto& group = specific_.emplace_back();
      for (int i = 0; i < e; ++i) group.emplace_back("task.specific." + t.name + "." + std::to_string(i), expert_config(d), rng_);
      if (config_.use_feature_gate_layer2) task_fg_.emplace_back("fg2." + t.name, d, config_.lora_count, rng_);
      task_gates_.emplace_back("gate2." + t.name, 2 * d, mask ? 3 * e : total_layer2, GateActivation::softmax,
                               config_.gate_hidden, rng_);
      if (config_.use_self_gate)
        task_self_.emplace_back("self2." + t.name, d, e, self_gate_activation(e), config_.gate_hidden, rng_);
      towers_.emplace_back("tower." + t.name, d, config_.tower_hidden, config_.expert_activation,
                           config_.zero_init_tower_output, rng_);
    }
    finalize();
  }

  ForwardTrace forward(Tape& tape, const Matrix& features, Mode mode) override {
    ForwardTrace trace;
    const bool mask = config_.use_hierarchy_mask;
    Var v = tape.constant(features);

    // Layer 1: meta experts over (optionally feature-gated) raw input.
    std::array<std::vector<Var>, 3> meta_out;
    std::array<std::vector<std::string>, 3> meta_ids;
    for (int g = 0; g < 3; ++g) {
      Var input = v;
      if (config_.use_feature_gate_layer1)
        input = gate_input(meta_fg_[g], v, std::string("fg1.") + kGroupNames[g], -1, trace);
      for (auto& ex : meta_experts_[g]) {
        auto o = ex.forward(input, mode);
        trace.experts.push_back({ex.name(), std::string("meta.") + kGroupNames[g], 1, ExpertRole::shared, -1, o});
        meta_out[g].push_back(o.post);
        meta_ids[g].push_back(ex.name());
      }
    }
    std::array<Var, 3> z;
    for (int g = 0; g < 3; ++g) {
      std::vector<int> groups;
      if (g == kShared || !mask) groups = {kShared, kInter, kWatch};
      else groups = {kShared, g};
      std::vector<Var> pool;
      std::vector<std::string> ids;
      for (int src : groups) {
        pool.insert(pool.end(), meta_out[src].begin(), meta_out[src].end());
        ids.insert(ids.end(), meta_ids[src].begin(), meta_ids[src].end());
      }
      Var w = meta_gates_[g].forward(v);
      trace.gates.push_back({"gate1." + std::string(kGroupNames[g]), GateKind::meta, -1, ids, true, w});
      z[g] = weighted_sum(w, pool);
      if (config_.use_self_gate) {
        Var sw = meta_self_[g].forward(v);
        trace.gates.push_back({"self1." + std::string(kGroupNames[g]), GateKind::self, -1, meta_ids[g],
                               meta_self_[g].activation() == GateActivation::softmax, sw});
        z[g] = add(z[g], weighted_sum(sw, meta_out[g]));
      }
    }

    // Layer 2: global-shared, category-shared and task-specific experts.
    std::vector<Var> global_out;
    std::vector<std::string> global_ids;
    {
      Var input = z[kShared];
      if (config_.use_feature_gate_layer2) input = gate_input(global_fg_, z[kShared], "fg2.global", -1, trace);
      for (auto& ex : global_) {
        auto o = ex.forward(input, mode);
        trace.experts.push_back({ex.name(), "task.global", 2, ExpertRole::shared, -1, o});
        global_out.push_back(o.post);
        global_ids.push_back(ex.name());
      }
    }
    std::array<std::vector<Var>, 2> cat_out;
    std::array<std::vector<std::string>, 2> cat_ids;
    for (int c = 0; c < 2; ++c) {
      Var input = z[c + 1];
      if (config_.use_feature_gate_layer2)
        input = gate_input(category_fg_[c], z[c + 1], std::string("fg2.") + kGroupNames[c + 1], -1, trace);
      for (auto& ex : category_[c]) {
        auto o = ex.forward(input, mode);
        trace.experts.push_back({ex.name(), std::string("task.") + kGroupNames[c + 1], 2, ExpertRole::shared, -1, o});
        cat_out[c].push_back(o.post);
        cat_ids[c].push_back(ex.name());
      }
    }
    std::vector<std::vector<Var>> spec_out(tasks_.size());
    std::vector<std::vector<std::string>> spec_ids(tasks_.size());
    for (std::size_t t = 0; t < tasks_.size(); ++t) {
      const Var& zc = z[category_group(tasks_[t].category)];
      Var input = zc;
      if (config_.use_feature_gate_layer2)
        input = gate_input(task_fg_[t], zc, "fg2." + tasks_[t].name, static_cast<int>(t), trace);
      for (auto& ex : specific_[t]) {
        auto o = ex.forward(input, mode);
        trace.experts.push_back({ex.name(), "task.specific." + tasks_[t].name, 2, ExpertRole::specific,
                                 static_cast<int>(t), o});
        spec_out[t].push_back(o.post);
        spec_ids[t].push_back(ex.name());
      }
    }

    for (std::size_t t = 0; t < tasks_.size(); ++t) {
      const int cg = category_group(tasks_[t].category);
      std::vector<Var> pool = global_out;
      std::vector<std::string> ids = global_ids;
      auto append = [&pool, &ids](const std::vector<Var>& o, const std::vector<std::string>& i) {
        pool.insert(pool.end(), o.begin(), o.end());
        ids.insert(ids.end(), i.begin(), i.end());
      };
      if (mask) {
        append(cat_out[cg - 1], cat_ids[cg - 1]);
        append(spec_out[t], spec_ids[t]);
      } else {
        append(cat_out[0], cat_ids[0]);
        append(cat_out[1], cat_ids[1]);
        for (std::size_t u = 0; u < tasks_.size(); ++u) append(spec_out[u], spec_ids[u]);
      }
      Var w = task_gates_[t].forward(concat<Scalar>({z[cg], z[kShared]}, -1));
      trace.gates.push_back({"gate2." + tasks_[t].name, GateKind::task, static_cast<int>(t), ids, true, w});
      Var h = weighted_sum(w, pool);
      if (config_.use_self_gate) {
        Var sw = task_self_[t].forward(z[cg]);
        trace.gates.push_back({"self2." + tasks_[t].name, GateKind::self, static_cast<int>(t), spec_ids[t],
                               task_self_[t].activation() == GateActivation::softmax, sw});
        h = add(h, weighted_sum(sw, spec_out[t]));
      }
      trace.predictions.push_back(towers_[t].forward(h));
    }
    return trace;
  }

 protected:
  void collect(std::vector<Parameter*>& p, std::vector<std::pair<std::string, BatchNormStats*>>& s) override {
    auto experts = [&](std::vector<ExpertUnit>& group) {
      for (auto& ex : group) {
        ex.collect(p);
        ex.collect_stats(s);
      }
    };
    for (int g = 0; g < 3; ++g) {
      experts(meta_experts_[g]);
      if (config_.use_feature_gate_layer1) meta_fg_[g].collect(p);
      meta_gates_[g].collect(p);
      if (config_.use_self_gate) meta_self_[g].collect(p);
    }
    experts(global_);
    for (auto& c : category_) experts(c);
    if (config_.use_feature_gate_layer2) {
      global_fg_.collect(p);
      for (auto& fg : category_fg_) fg.collect(p);
    }
    for (std::size_t t = 0; t < tasks_.size(); ++t) {
      experts(specific_[t]);
      if (config_.use_feature_gate_layer2) task_fg_[t].collect(p);
      task_gates_[t].collect(p);
      if (config_.use_self_gate) task_self_[t].collect(p);
      towers_[t].collect(p);
    }
  }

 private:
  Var gate_input(FeatureGate& fg, const Var& x, const std::string& name, int task, ForwardTrace& trace) {
    auto out = fg.forward(x);
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < fg.loras().size(); ++i) ids.push_back(name + ".lora" + std::to_string(i));
    trace.gates.push_back({name + ".gate", GateKind::feature_mix, task, ids, true, out.mixture});
    trace.feature_gates.push_back({name, out.importance});
    return apply_feature_gate(x, out.importance);
  }

  std::array<std::vector<ExpertUnit>, 3> meta_experts_;
  std::array<FeatureGate, 3> meta_fg_;
  std::array<GateUnit, 3> meta_gates_;
  std::array<GateUnit, 3> meta_self_;
  std::vector<ExpertUnit> global_;
  std::array<std::vector<ExpertUnit>, 2> category_;
  FeatureGate global_fg_;
  std::array<FeatureGate, 2> category_fg_;
  std::vector<std::vector<ExpertUnit>> specific_;
  std::vector<FeatureGate> task_fg_;
  std::vector<GateUnit> task_gates_;
  std::vector<GateUnit> task_self_;
  std::vector<TowerUnit> towers_;
};

}  // namespace

std::unique_ptr<Model> build_model(const ModelConfig& config, const std::vector<TaskSpec>& tasks) {
  switch (config.architecture) {
    case Architecture::shared_bottom: return std::make_unique<SharedBottomModel>(config, tasks);
    case Architecture::mmoe:
    case Architecture::cgc: return std::make_unique<GatedMixtureModel>(config, tasks);
    case Architecture::home: return std::make_unique<HomeModel>(config, tasks);
  }
  throw ConfigError("unsupported architecture");
}

std::size_t parameter_count(const Model& model) {
  std::size_t n = 0;
  for (const Parameter* p : model.parameters()) n += static_cast<std::size_t>(p->size());
  return n;
}

Matrix predict(Model& model, const Matrix& features, int chunk) {
  Matrix out(features.rows(), static_cast<Eigen::Index>(model.tasks().size()));
  for (Eigen::Index start = 0; start < features.rows(); start += chunk) {
    const Eigen::Index n = std::min<Eigen::Index>(chunk, features.rows() - start);
    Tape tape;
    auto trace = model.forward(tape, features.middleRows(start, n), Mode::infer);
    out.middleRows(start, n) = trace.probabilities();
  }
  return out;
}

}  // namespace home
