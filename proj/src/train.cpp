#include "home/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace home {

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("train.batch_size must be at least 2 (batch norm)");
  if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
  if (max_steps < 0) throw ConfigError("train.max_steps must be non-negative");
  if (!(learning_rate >= 0.0)) throw ConfigError("train.learning_rate must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train.beta1/beta2 must be in [0, 1)");
  if (!(adam_epsilon > 0.0)) throw ConfigError("train.adam_epsilon must be positive");
  if (!(clamp > 0.0 && clamp < 0.5)) throw ConfigError("train.clamp must be in (0, 0.5)");
  if (eval_every < 1) throw ConfigError("train.eval_every must be at least 1");
  if (!(eval_fraction >= 0.0 && eval_fraction < 1.0)) throw ConfigError("train.eval_fraction must be in [0, 1)");
}

Var bce_loss(const Var& prediction, const Matrix& labels, double clamp) {
  if (prediction.cols() != 1 || labels.cols() != 1 || labels.rows() != prediction.rows())
    throw DimensionError("bce_loss: expected matching B×1 predictions and labels");
  for (Eigen::Index i = 0; i < labels.rows(); ++i)
    if (labels(i, 0) != 0.0 && labels(i, 0) != 1.0) throw MetricError("bce_loss: labels must be 0 or 1");
  const Matrix& p = prediction.value();
  const double n = static_cast<double>(p.rows());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double q = std::clamp(p(i, 0), clamp, 1.0 - clamp);
    loss -= labels(i, 0) * std::log(q) + (1.0 - labels(i, 0)) * std::log(1.0 - q);
  }
  Matrix out(1, 1);
  out(0, 0) = loss / n;
  return prediction.tape().record(std::move(out), {prediction},
                                  [prediction, labels, clamp, n](Tape& t, const Matrix& g, const Matrix&) {
                                    const Matrix& pv = prediction.value();
                                    Matrix d(pv.rows(), 1);
                                    for (Eigen::Index i = 0; i < pv.rows(); ++i) {
                                      const double q = pv(i, 0);
                                      if (q < clamp || q > 1.0 - clamp) {
                                        d(i, 0) = 0.0;
                                        continue;
                                      }
                                      const double y = labels(i, 0);
                                      d(i, 0) = g(0, 0) * (-y / q + (1.0 - y) / (1.0 - q)) / n;
                                    }
                                    t.accumulate(prediction, d);
                                  });
}

MultiTaskLoss bce_loss(const std::vector<Var>& predictions, const Matrix& labels, double clamp) {
  if (predictions.empty() || static_cast<Eigen::Index>(predictions.size()) != labels.cols())
    throw DimensionError("bce_loss: " + std::to_string(predictions.size()) + " predictions for " +
                         std::to_string(labels.cols()) + " label columns");
  MultiTaskLoss out;
  for (std::size_t t = 0; t < predictions.size(); ++t) {
    out.per_task.push_back(bce_loss(predictions[t], labels.col(static_cast<Eigen::Index>(t)), clamp));
    out.total = t == 0 ? out.per_task.back() : add(out.total, out.per_task.back());
  }
  return out;
}

Adam::Adam(std::span<Parameter* const> params, const TrainConfig& config)
    : params_(params.begin(), params.end()),
      lr_(config.learning_rate),
      beta1_(config.beta1),
      beta2_(config.beta2),
      eps_(config.adam_epsilon) {
  for (Parameter* p : params_) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::step() {
  for (Parameter* p : params_)
    if (!p->grad.allFinite()) throw std::runtime_error("non-finite gradient in parameter '" + p->name + "'");
  ++step_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Matrix& g = params_[i]->grad;
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    params_[i]->value.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

TrainResult train(Model& model, const Dataset& data, const Dataset* eval, const TrainConfig& config) {
  config.validate();
  const auto& tasks = model.tasks();
  if (data.task_names.size() != tasks.size()) throw ConfigError("train: dataset and model task sets differ");
  for (std::size_t t = 0; t < tasks.size(); ++t)
    if (data.task_names[t] != tasks[t].name)
      throw ConfigError("train: dataset task '" + data.task_names[t] + "' does not match model task '" + tasks[t].name + "'");
  if (data.features.cols() != model.config().input_width)
    throw ConfigError("train: dataset has " + std::to_string(data.features.cols()) + " features, model expects " +
                      std::to_string(model.config().input_width));
  if (data.rows() < config.batch_size) throw ConfigError("train: dataset smaller than one batch");

  Rng rng(config.seed);
  Adam adam(model.parameters(), config);
  TrainResult result;
  std::vector<double> window(tasks.size(), 0.0);
  long window_steps = 0;
  const double nan = std::numeric_limits<double>::quiet_NaN();

  auto flush = [&](long step) {
    if (window_steps == 0) return;
    EvalReport report;
    if (eval != nullptr && eval->rows() > 0) report = evaluate(model, *eval);
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      HistoryRow row{step, tasks[t].name, window[t] / static_cast<double>(window_steps), nan, nan};
      if (!report.tasks.empty()) {
        row.auc = report.tasks[t].auc;
        row.gauc = report.tasks[t].gauc;
      }
      result.history.push_back(row);
    }
    std::fill(window.begin(), window.end(), 0.0);
    window_steps = 0;
  };

  std::vector<Eigen::Index> order(static_cast<std::size_t>(data.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const std::size_t per_epoch = order.size() / static_cast<std::size_t>(config.batch_size);
  bool done = false;
  for (int epoch = 0; epoch < config.epochs && !done; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < per_epoch; ++b) {
      if (config.max_steps > 0 && result.steps >= config.max_steps) {
        done = true;
        break;
      }
      const std::span<const Eigen::Index> rows(order.data() + b * static_cast<std::size_t>(config.batch_size),
                                               static_cast<std::size_t>(config.batch_size));
      const Batch batch = data.batch(rows);
      model.zero_grad();
      Tape tape;
      ForwardTrace trace = model.forward(tape, batch.features, Mode::train);
      MultiTaskLoss loss = bce_loss(trace.predictions, batch.labels, config.clamp);
      tape.backward(loss.total);
      adam.step();
      ++result.steps;
      ++window_steps;
      result.step_loss.push_back(loss.total.value()(0, 0));
      for (std::size_t t = 0; t < tasks.size(); ++t) window[t] += loss.per_task[t].value()(0, 0);
      if (result.steps % config.eval_every == 0) flush(result.steps);
    }
  }
  flush(result.steps);
  return result;
}

namespace {
std::string fmt_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace

void write_history(const std::vector<HistoryRow>& history, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << "step,task,loss,auc,gauc\n";
  for (const auto& r : history)
    out << r.step << ',' << r.task << ',' << fmt_number(r.loss) << ',' << fmt_number(r.auc) << ',' << fmt_number(r.gauc) << '\n';
}

}  // namespace home
