// Multi-task binary cross-entropy, Adam, and the minibatch training loop.
#pragma once

#include "home/metrics.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace home {

struct TrainConfig {
  int batch_size = 256;
  int epochs = 3;
  long max_steps = 0;  // 0: no cap beyond epochs
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double clamp = 1e-7;  // predictions clamped to [clamp, 1 − clamp] before logs
  long eval_every = 100;
  double eval_fraction = 0.2;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Mean over rows of −[y·log ŷ + (1−y)·log(1−ŷ)] for one task (B×1 inputs).
Var bce_loss(const Var& prediction, const Matrix& labels, double clamp = 1e-7);

struct MultiTaskLoss {
  Var total;                  // unweighted sum over tasks
  std::vector<Var> per_task;  // each a batch mean
};

MultiTaskLoss bce_loss(const std::vector<Var>& predictions, const Matrix& labels, double clamp = 1e-7);

class Adam {
 public:
  Adam(std::span<Parameter* const> params, const TrainConfig& config);

  /// Applies one bias-corrected update from each parameter's grad.
  /// Throws std::runtime_error naming the parameter on a non-finite gradient.
  void step();
  long steps() const { return step_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  double lr_, beta1_, beta2_, eps_;
  long step_ = 0;
};

struct HistoryRow {
  long step = 0;
  std::string task;
  double loss = 0.0;  // mean train loss since the previous row
  double auc = 0.0;   // held-out; NaN when unavailable
  double gauc = 0.0;
};

struct TrainResult {
  long steps = 0;
  std::vector<HistoryRow> history;
  std::vector<double> step_loss;  // total loss per step
};

/// Shuffled minibatches, partial trailing batches dropped. `eval` may be null.
TrainResult train(Model& model, const Dataset& data, const Dataset* eval, const TrainConfig& config);

void write_history(const std::vector<HistoryRow>& history, const std::filesystem::path& path);

}  // namespace home
