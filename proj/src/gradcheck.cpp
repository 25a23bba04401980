#include "home/gradcheck.hpp"

#include "home/train.hpp"

namespace home {

std::vector<BlockCheck> run_grad_check(Model& model, const GradCheckOptions& options) {
  if (options.batch_size < 2) throw ConfigError("grad_check.batch_size must be at least 2");
  Rng rng(options.seed);
  std::uniform_real_distribution<double> unit(-options.param_scale, options.param_scale);
  for (Parameter* p : model.parameters()) {
    const bool is_gamma = p->name.size() >= 6 && p->name.compare(p->name.size() - 6, 6, ".gamma") == 0;
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = (is_gamma ? 1.0 : 0.0) + unit(rng);
  }
  std::normal_distribution<double> normal;
  std::bernoulli_distribution coin(0.5);
  Matrix x(options.batch_size, model.config().input_width);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
  Matrix y(options.batch_size, static_cast<Eigen::Index>(model.tasks().size()));
  for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = coin(rng) ? 1.0 : 0.0;

  auto loss_value = [&] {
    Tape tape;
    auto trace = model.forward(tape, x, Mode::train);
    return bce_loss(trace.predictions, y, 1e-12).total.value()(0, 0);
  };

  model.zero_grad();
  {
    Tape tape;
    auto trace = model.forward(tape, x, Mode::train);
    tape.backward(bce_loss(trace.predictions, y, 1e-12).total);
  }

  std::vector<BlockCheck> out;
  for (Parameter* p : model.parameters()) {
    const Matrix numeric = finite_diff_grad(loss_value, *p, options.step);
    BlockCheck c;
    c.name = p->name;
    c.size = p->size();
    c.relative_error = relative_error(p->grad, numeric);
    c.grad_norm = p->grad.norm();
    c.passed = c.relative_error < options.tolerance;
    out.push_back(c);
  }
  return out;
}

}  // namespace home
