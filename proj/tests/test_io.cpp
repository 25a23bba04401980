#include "home/commands.hpp"
#include "home/io.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

namespace home {
namespace {

using test::random_matrix;

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "home_moe_test_io" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string config_error(const Json& doc) {
  try {
    parse_run_config(doc).validate();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(Config, EmptyDocumentGivesDefaults) {
  const RunConfig c = parse_run_config(Json::object());
  EXPECT_EQ(c.dataset.tasks.size(), 8u);
  EXPECT_EQ(c.model.input_width, c.dataset.feature_width);
  EXPECT_EQ(c.model.architecture, Architecture::home);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, InputWidthFollowsFeatureWidth) {
  const RunConfig c = parse_run_config(Json::parse(R"({"dataset": {"feature_width": 20}})"));
  EXPECT_EQ(c.model.input_width, 20);
}

TEST(Config, UnknownKeysAreErrors) {
  EXPECT_NE(config_error(Json::parse(R"({"model": {"expert_widht": 4}})")).find("model.expert_widht"), std::string::npos);
  EXPECT_NE(config_error(Json::parse(R"({"trian": {}})")).find("trian"), std::string::npos);
  EXPECT_NE(config_error(Json::parse(R"({"dataset": {"logs_per_user": {"min": 1, "mx": 2}}})")).find("mx"), std::string::npos);
}

TEST(Config, TypeAndValueErrors) {
  EXPECT_FALSE(config_error(Json::parse(R"({"train": {"batch_size": "big"}})")).empty());
  EXPECT_FALSE(config_error(Json::parse(R"({"model": {"architecture": "moe9"}})")).empty());
  EXPECT_FALSE(config_error(Json::parse(R"({"model": {"input_width": 7}})")).empty());
  EXPECT_FALSE(config_error(Json::parse(R"({"ranking_weights": {"nope": 1.0}})")).empty());
  EXPECT_FALSE(config_error(Json::parse(R"({"grad_check": {"batch_size": 1}})")).empty());
  EXPECT_TRUE(config_error(Json::parse(R"({"ranking_weights": {"ctr": 2.0}})")).empty());
}

TEST(Config, VariantAppliesFlags) {
  const RunConfig c = parse_run_config(Json::parse(R"({"model": {"variant": "wo_fg"}})"));
  EXPECT_FALSE(c.model.use_feature_gate_layer1);
  EXPECT_FALSE(c.model.use_feature_gate_layer2);
  EXPECT_TRUE(c.model.use_self_gate);
  const RunConfig legacy = parse_run_config(Json::parse(R"({"model": {"variant": "mmoe"}})"));
  EXPECT_EQ(legacy.model.architecture, Architecture::mmoe);
  EXPECT_FALSE(legacy.model.expert_normalization);
  EXPECT_EQ(legacy.model.expert_activation, Activation::relu);
}

TEST(Config, OverridesPatchTheDocument) {
  Json doc = Json::parse(R"({"train": {"epochs": 3}})");
  apply_overrides(doc, {"train.epochs=1", "model.architecture=cgc", "train.learning_rate=0.01", "ranking_weights.ctr=2"});
  const RunConfig c = parse_run_config(doc);
  EXPECT_EQ(c.train.epochs, 1);
  EXPECT_EQ(c.train.learning_rate, 0.01);
  EXPECT_EQ(c.model.architecture, Architecture::cgc);
  EXPECT_EQ(c.ranking_weights.at("ctr"), 2.0);
  EXPECT_THROW(apply_overrides(doc, {"train.epochs"}), ConfigError);
  EXPECT_THROW(apply_overrides(doc, {"train..epochs=1"}), ConfigError);
}

TEST(Config, ResolvedJsonRoundTrips) {
  Json doc = Json::parse(R"({"model": {"variant": "wo_fg_sg", "expert_hidden": [16, 8]}, "train": {"seed": 9}})");
  const RunConfig a = parse_run_config(doc);
  const Json resolved = to_json(a);
  const RunConfig b = parse_run_config(resolved);
  EXPECT_EQ(to_json(b).dump(), resolved.dump());
  EXPECT_EQ(b.model.expert_hidden, (std::vector<int>{16, 8}));
  EXPECT_FALSE(b.model.use_self_gate);
  EXPECT_FALSE(b.model.use_feature_gate_layer1);
}

TEST(Config, ShippedConfigsParse) {
  for (const char* name : {"demo.json", "gradcheck.json"}) {
    EXPECT_NO_THROW(load_run_config(fs::path(HOME_MOE_SOURCE_DIR) / "configs" / name)) << name;
  }
}

class CheckpointTest : public ::testing::Test {
 protected:
  std::unique_ptr<Model> trained_model() {
    ModelConfig c;
    c.input_width = 6;
    c.expert_width = 4;
    c.expert_hidden = {5};
    c.tower_hidden = {3};
    auto m = build_model(c, tasks_);
    std::mt19937_64 rng(4);
    for (Parameter* p : m->parameters()) p->value = random_matrix(p->value.rows(), p->value.cols(), rng, 0.7);
    // A training-mode pass moves the running statistics off their defaults.
    Tape t;
    m->forward(t, random_matrix(16, 6, rng), Mode::train);
    return m;
  }
  std::vector<TaskSpec> tasks_{{"evtr", TaskCategory::watch, 0.2}, {"ctr", TaskCategory::interaction, 0.1}, {"like", TaskCategory::interaction, 0.02}};
};

TEST_F(CheckpointTest, RoundTripIsBitExact) {
  auto m = trained_model();
  const fs::path p = temp_dir("ckpt") / "model.json";
  save_checkpoint(*m, p);
  auto loaded = load_checkpoint(p);
  ASSERT_EQ(loaded->parameters().size(), m->parameters().size());
  for (std::size_t i = 0; i < m->parameters().size(); ++i) {
    EXPECT_EQ(loaded->parameters()[i]->name, m->parameters()[i]->name);
    EXPECT_EQ(loaded->parameters()[i]->value, m->parameters()[i]->value);
  }
  std::mt19937_64 rng(5);
  const Matrix x = random_matrix(9, 6, rng);
  EXPECT_EQ(predict(*loaded, x), predict(*m, x));
  const fs::path again = p.parent_path() / "again.json";
  save_checkpoint(*loaded, again);
  EXPECT_EQ(slurp(p), slurp(again));
}

TEST_F(CheckpointTest, DamagedFilesAreRejected) {
  const fs::path dir = temp_dir("ckpt_bad");
  EXPECT_THROW(load_checkpoint(dir / "missing.json"), CheckpointError);
  std::ofstream(dir / "trunc.json") << "{\"format\": \"home-moe-checkpoint\", \"vers";
  EXPECT_THROW(load_checkpoint(dir / "trunc.json"), CheckpointError);
  std::ofstream(dir / "other.json") << "{\"format\": \"something\"}";
  EXPECT_THROW(load_checkpoint(dir / "other.json"), CheckpointError);

  auto m = trained_model();
  save_checkpoint(*m, dir / "good.json");
  Json doc = read_json_file(dir / "good.json");
  Json dropped = doc;
  dropped["parameters"].erase(dropped["parameters"].begin());
  std::ofstream(dir / "dropped.json") << dropped.dump();
  EXPECT_THROW(load_checkpoint(dir / "dropped.json"), CheckpointError);
  Json reshaped = doc;
  reshaped["parameters"][0]["rows"] = 99;
  std::ofstream(dir / "reshaped.json") << reshaped.dump();
  EXPECT_THROW(load_checkpoint(dir / "reshaped.json"), CheckpointError);
}

TEST(Reports, MetricsSchemaWritesNullForUndefined) {
  EvalReport r;
  r.rows = 10;
  r.tasks = {{"ctr", 0.75, 0.5, 0.3}, {"follow", std::nan(""), std::nan(""), 0.0}};
  const Json j = to_json(r);
  EXPECT_EQ(j["schema"], "home-moe/metrics/v1");
  EXPECT_EQ(j["rows"], 10);
  EXPECT_TRUE(j["tasks"][1]["auc"].is_null());
  EXPECT_EQ(j["mean_auc"], 0.75);
  EXPECT_EQ(j["mean_gauc"], 0.5);
}

TEST(Reports, GateReportAndFlagsSchemas) {
  GateReport r;
  r.tasks = {"a", "b"};
  r.experts = {{"shared.0", "shared", 1, ExpertRole::shared, -1, true, 0.1, 1.0, 0.0},
               {"specific.b.0", "specific.b", 2, ExpertRole::specific, 1, true, 0.2, 1.0, 0.0}};
  r.task_weights = Matrix::Zero(2, 2);
  r.task_weights << 1.0, 0.0, 0.25, 0.75;
  r.mass_share = Matrix::Zero(2, 2);
  r.rows = 4;
  const Json g = to_json(r);
  EXPECT_EQ(g["schema"], "home-moe/gate-report/v1");
  EXPECT_EQ(g["experts"][1]["owner_task"], "b");
  EXPECT_TRUE(g["experts"][0]["owner_task"].is_null());
  EXPECT_EQ(gate_weights_csv(r), "task,shared.0,specific.b.0\na,1,0\nb,0.25,0.75\n");

  PathologyFlags f;
  f.collapse.push_back({"shared.0", "monopolized", 12.0});
  f.underfitting.push_back({"a", 0.0});
  const Json fj = to_json(f, PathologyThresholds{});
  EXPECT_EQ(fj["schema"], "home-moe/pathology-flags/v1");
  EXPECT_EQ(fj["collapse"][0]["reason"], "monopolized");
  EXPECT_EQ(fj["thresholds"]["monopoly"], 0.98);
  EXPECT_EQ(fj["underfitting"][0]["task"], "a");
}

TEST(Commands, TrainEvalDiagnoseRoundTrip) {
  const fs::path dir = temp_dir("cmd");
  std::ofstream(dir / "run.json") << R"({
    "dataset": {"n_users": 60, "logs_per_user": {"min": 20, "max": 20}, "feature_width": 12, "latent_dim": 6,
                "tasks": [{"name": "ctr", "category": "interaction", "positive_rate": 0.2},
                          {"name": "evtr", "category": "watch", "positive_rate": 0.3}]},
    "model": {"architecture": "home", "expert_width": 4, "expert_hidden": [8], "tower_hidden": [4]},
    "train": {"batch_size": 32, "epochs": 1, "eval_every": 10, "eval_fraction": 0.25}
  })";
  std::ostringstream log;
  const Dataset ds = cmd_gen_data(dir / "run.json", dir / "data.csv", log);
  EXPECT_EQ(ds.rows(), 1200);
  const TrainOutcome out = cmd_train(dir / "run.json", {}, dir / "data.csv", dir / "out", log);
  EXPECT_GT(out.result.steps, 0);
  for (const char* f : {"config.json", "config.resolved.json", "checkpoint.json", "history.csv", "metrics.json"})
    EXPECT_TRUE(fs::exists(dir / "out" / f)) << f;
  EXPECT_EQ(slurp(dir / "out" / "config.json"), slurp(dir / "run.json"));

  const EvalReport ev = cmd_eval(dir / "out" / "checkpoint.json", dir / "data.csv", dir / "eval.json", log);
  EXPECT_EQ(ev.rows, 1200u);
  EXPECT_EQ(read_json_file(dir / "eval.json")["schema"], "home-moe/metrics/v1");

  cmd_diagnose(dir / "out" / "checkpoint.json", dir / "data.csv", dir / "diag", dir / "run.json", log);
  for (const char* f : {"gate_report.json", "pathology_flags.json", "gate_weights.csv"})
    EXPECT_TRUE(fs::exists(dir / "diag" / f)) << f;

  EXPECT_THROW(cmd_train(dir / "run.json", {}, dir / "nope.csv", dir / "out2", log), DataError);
  DatasetSpec other = parse_dataset_spec(read_json_file(dir / "run.json")["dataset"]);
  other.tasks[0].name = "like";
  write_dataset(generate_dataset(other), dir / "other.csv");
  EXPECT_THROW(cmd_train(dir / "run.json", {}, dir / "other.csv", dir / "out3", log), ConfigError);
}

}  // namespace
}  // namespace home
