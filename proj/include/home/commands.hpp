// The home-moe subcommands as library calls. Each throws on failure; the
// command-line front end maps exceptions to a nonzero exit status.
#pragma once

#include "home/io.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace home {

namespace fs = std::filesystem;

/// Loads a config file, applies overrides and validates it.
RunConfig load_run_config(const fs::path& path, const std::vector<std::string>& overrides = {});

/// `spec` is a run config (its dataset section is used) or a bare dataset object.
Dataset cmd_gen_data(const fs::path& spec, const fs::path& out, std::ostream& log);

struct TrainOutcome {
  TrainResult result;
  EvalReport metrics;
  std::size_t parameters = 0;
};

/// Writes config.json (verbatim), config.resolved.json, checkpoint.json,
/// history.csv and metrics.json into `out_dir`.
TrainOutcome cmd_train(const fs::path& config, const std::vector<std::string>& overrides, const fs::path& data,
                       const fs::path& out_dir, std::ostream& log);

/// Prints the metrics report, and writes it to `out` when non-empty.
EvalReport cmd_eval(const fs::path& checkpoint, const fs::path& data, const fs::path& out, std::ostream& log);

/// Writes gate_report.json, pathology_flags.json and gate_weights.csv.
/// Thresholds come from `config` when given, else the defaults.
PathologyFlags cmd_diagnose(const fs::path& checkpoint, const fs::path& data, const fs::path& out_dir,
                            const fs::path& config, std::ostream& log);

/// Prints one row per parameter block; returns true when every block passes.
bool cmd_grad_check(const fs::path& config, const std::vector<std::string>& overrides, std::ostream& log);

}  // namespace home
