#pragma once

#include "home/tensor.hpp"

#include <functional>
#include <random>
#include <vector>

namespace home::test {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Projects the op output onto a fixed random direction so every output
// entry contributes to the scalar being differentiated.
inline double op_grad_error(std::vector<Parameter*> params, const std::function<Var(Tape&)>& op, std::mt19937_64& rng) {
  Matrix probe;
  {
    Tape t;
    const Var out = op(t);
    probe = random_matrix(out.rows(), out.cols(), rng);
  }
  auto loss = [&](Tape& t) { return sum(mul(op(t), t.constant(probe))); };
  for (Parameter* p : params) p->grad.setZero();
  {
    Tape t;
    t.backward(loss(t));
  }
  double worst = 0.0;
  for (Parameter* p : params) {
    auto f = [&] {
      Tape t;
      return loss(t).value()(0, 0);
    };
    const Matrix numeric = finite_diff_grad(f, *p, 1e-5);
    worst = std::max(worst, relative_error(p->grad, numeric));
  }
  return worst;
}

}  // namespace home::test
