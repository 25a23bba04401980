#include "home/commands.hpp"

#include "CLI11.hpp"

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Multi-task mixture-of-experts training and diagnostics"};
  app.require_subcommand(1);

  std::string spec, out, config, data, checkpoint;
  std::vector<std::string> overrides;
  bool corrupt = false;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic multi-task dataset");
  gen->add_option("--spec", spec, "Dataset spec or run config (JSON)")->required();
  gen->add_option("--out", out, "Output CSV file")->required();

  auto* tr = app.add_subcommand("train", "Train a model into a run directory");
  tr->add_option("--config", config, "Run config (JSON)")->required();
  tr->add_option("--data", data, "Dataset CSV")->required();
  tr->add_option("--out", out, "Run directory")->required();
  tr->add_option("--set", overrides, "Override, e.g. model.variant=wo_fg");

  auto* ev = app.add_subcommand("eval", "Per-task AUC and GAUC of a checkpoint");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  ev->add_option("--data", data, "Dataset CSV")->required();
  ev->add_option("--out", out, "Write the metrics report here");

  auto* dg = app.add_subcommand("diagnose", "Gate report and pathology flags");
  dg->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  dg->add_option("--data", data, "Dataset CSV")->required();
  dg->add_option("--out", out, "Output directory")->required();
  dg->add_option("--config", config, "Run config supplying thresholds");

  auto* gc = app.add_subcommand("grad-check", "Compare autodiff gradients with finite differences");
  gc->add_option("--config", config, "Run config (JSON)")->required();
  gc->add_option("--set", overrides, "Override, e.g. grad_check.tolerance=1e-6");
  gc->add_flag("--corrupt-backward", corrupt)->group("");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      home::cmd_gen_data(spec, out, std::cout);
    } else if (*tr) {
      home::cmd_train(config, overrides, data, out, std::cout);
    } else if (*ev) {
      home::cmd_eval(checkpoint, data, out, std::cout);
    } else if (*dg) {
      home::cmd_diagnose(checkpoint, data, out, config, std::cout);
    } else if (*gc) {
      home::testing::corrupt_swish_backward = corrupt;
      return home::cmd_grad_check(config, overrides, std::cout) ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
