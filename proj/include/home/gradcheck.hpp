// Finite-difference verification of every parameter block of a model.
#pragma once

#include "home/model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace home {

struct GradCheckOptions {
  int batch_size = 8;
  double step = 1e-5;
  double tolerance = 1e-4;
  double param_scale = 0.5;  // parameters are redrawn from U(−s, s) (γ around 1)
  std::uint64_t seed = 3;
};

struct BlockCheck {
  std::string name;
  Eigen::Index size = 0;
  double relative_error = 0.0;
  double grad_norm = 0.0;
  bool passed = false;
};

/// Randomizes the model's parameters, draws a random batch with random
/// labels, and compares the taped gradient of the summed task loss with
/// central differences, one row per parameter block.
std::vector<BlockCheck> run_grad_check(Model& model, const GradCheckOptions& options);

}  // namespace home
