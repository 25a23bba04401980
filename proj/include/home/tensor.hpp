// Dense reverse-mode autodiff over Eigen matrices.
//
// Every value is a row-major 2-D matrix (a batch of rows); vectors are 1×n.
// Operations append nodes to a BasicTape; BasicTape::backward replays them in
// reverse and flushes leaf gradients into the bound BasicParameter objects.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace home {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

enum class Activation { relu, sigmoid, swish };
enum class Mode { train, infer };

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {
template <typename Scalar>
std::string shape_str(const MatrixX<Scalar>& m) {
  std::ostringstream os;
  os << '[' << m.rows() << "x" << m.cols() << ']';
  return os.str();
}
}  // namespace detail

namespace testing {
// Scales the swish derivative by 1.01 so gradient checks can prove they fail.
inline std::atomic<bool> corrupt_swish_backward{false};
}  // namespace testing

/// A named trainable matrix together with its accumulated gradient.
template <typename Scalar>
struct BasicParameter {
  std::string name;
  MatrixX<Scalar> value;
  MatrixX<Scalar> grad;

  BasicParameter() = default;
  BasicParameter(std::string n, MatrixX<Scalar> v)
      : name(std::move(n)), value(std::move(v)), grad(MatrixX<Scalar>::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Eigen::Index size() const { return value.size(); }
};

/// Running statistics for batch normalization (train/infer split).
template <typename Scalar>
struct BasicBatchNormStats {
  RowVectorX<Scalar> running_mean;
  RowVectorX<Scalar> running_var;
  Scalar epsilon = Scalar(1e-5);
  Scalar momentum = Scalar(0.99);

  BasicBatchNormStats() = default;
  BasicBatchNormStats(Eigen::Index width, Scalar eps, Scalar mom)
      : running_mean(RowVectorX<Scalar>::Zero(width)),
        running_var(RowVectorX<Scalar>::Ones(width)),
        epsilon(eps),
        momentum(mom) {}
};

template <typename Scalar>
class BasicTape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <typename Scalar>
class BasicVar {
 public:
  BasicVar() = default;

  const MatrixX<Scalar>& value() const { return tape_->value(id_); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  BasicTape<Scalar>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class BasicTape<Scalar>;
  BasicVar(BasicTape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  BasicTape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename Scalar>
class BasicTape {
 public:
  using Matrix = MatrixX<Scalar>;
  using Var = BasicVar<Scalar>;
  using Parameter = BasicParameter<Scalar>;
  // Receives the gradient that reached a node plus the node's own output and
  // pushes contributions to the node's inputs.
  using BackwardFn = std::function<void(BasicTape&, const Matrix& grad, const Matrix& out)>;

  BasicTape() = default;
  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  Var constant(Matrix value) { return push(std::move(value), false, {}, nullptr); }

  /// Leaf bound to `p`; backward() adds the leaf's gradient into p.grad.
  Var parameter(Parameter& p) { return push(p.value, true, {}, &p); }

  Var record(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(std::move(value), std::vector<Var>(inputs), std::move(fn));
  }

  Var record(Matrix value, const std::vector<Var>& inputs, BackwardFn fn) {
    bool needs = false;
    for (const Var& v : inputs) {
      check_owned(v);
      needs = needs || nodes_[v.id()].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{}, nullptr);
  }

  const Matrix& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(const Var& v) const { return nodes_.at(v.id()).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  template <typename Derived>
  void accumulate(const Var& v, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[v.id()];
    if (!n.requires_grad) return;
    if (g.rows() != n.value.rows() || g.cols() != n.value.cols())
      throw DimensionError("gradient shape mismatch on tape node");
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
    } else {
      n.grad += g;
    }
  }

  /// Reverse sweep from a scalar loss. Each node is visited once; a tape
  /// can be swept only once because parameter gradients are accumulated.
  void backward(const Var& loss) {
    check_owned(loss);
    if (swept_) throw std::logic_error("backward: tape already swept");
    const Matrix& lv = nodes_[loss.id()].value;
    if (lv.rows() != 1 || lv.cols() != 1)
      throw DimensionError("backward: loss must be scalar, got " + detail::shape_str(lv));
    swept_ = true;
    accumulate(loss, Matrix::Ones(1, 1));
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_grad) continue;
      if (n.backward) n.backward(*this, n.grad, n.value);
      if (n.param) n.param->grad += n.grad;
    }
  }

  /// Gradient reached at a node after backward(); zeros when unreachable.
  Matrix grad(const Var& v) const {
    const Node& n = nodes_.at(v.id());
    if (!n.has_grad) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  Var push(Matrix value, bool requires_grad, BackwardFn fn, Parameter* param) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = std::move(fn);
    n.param = param;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  void check_owned(const Var& v) const {
    if (!v.valid() || &v.tape() != this || v.id() >= nodes_.size())
      throw std::logic_error("variable does not belong to this tape");
  }

  std::deque<Node> nodes_;
  bool swept_ = false;
};

// ---------------------------------------------------------------------------
// Element-wise scalar functions.

template <typename Scalar>
Scalar stable_sigmoid(Scalar x) {
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
Scalar activate_scalar(Activation kind, Scalar x) {
  switch (kind) {
    case Activation::relu: return x > Scalar(0) ? x : Scalar(0);
    case Activation::sigmoid: return stable_sigmoid(x);
    case Activation::swish: return x * stable_sigmoid(x);
  }
  return x;
}

template <typename Scalar>
Scalar activate_derivative(Activation kind, Scalar x) {
  switch (kind) {
    case Activation::relu: return x > Scalar(0) ? Scalar(1) : Scalar(0);
    case Activation::sigmoid: {
      const Scalar s = stable_sigmoid(x);
      return s * (Scalar(1) - s);
    }
    case Activation::swish: {
      const Scalar s = stable_sigmoid(x);
      const Scalar d = s + x * s * (Scalar(1) - s);
      return testing::corrupt_swish_backward.load() ? d * Scalar(1.01) : d;
    }
  }
  return Scalar(1);
}

// ---------------------------------------------------------------------------
// Differentiable operations.

template <typename Scalar>
BasicVar<Scalar> matmul(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner dimensions differ, " + detail::shape_str(a.value()) + " vs " +
                         detail::shape_str(b.value()));
  auto& tape = a.tape();
  MatrixX<Scalar> out = a.value() * b.value();
  return tape.record(std::move(out), {a, b}, [a, b](BasicTape<Scalar>& t, const MatrixX<Scalar>& g, const MatrixX<Scalar>&) {
    if (t.requires_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.requires_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

template <typename Scalar>
BasicVar<Scalar> add(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("add: shapes differ, " + detail::shape_str(a.value()) + " vs " + detail::shape_str(b.value()));
  MatrixX<Scalar> out = a.value() + b.value();
  return a.tape().record(std::move(out), {a, b}, [a, b](BasicTape<Scalar>& t, const MatrixX<Scalar>& g, const MatrixX<Scalar>&) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

/// x[B×n] + bias[1×n] broadcast over rows.
template <typename Scalar>
BasicVar<Scalar> add_row(const BasicVar<Scalar>& x, const BasicVar<Scalar>& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols())
    throw DimensionError("add_row: bias " + detail::shape_str(bias.value()) + " does not fit " +
                         detail::shape_str(x.value()));
  MatrixX<Scalar> out = x.value().rowwise() + bias.value().row(0);
  return x.tape().record(std::move(out), {x, bias}, [x, bias](BasicTape<Scalar>& t, const MatrixX<Scalar>& g, const MatrixX<Scalar>&) {
    t.accumulate(x, g);
    if (t.requires_grad(bias)) t.accumulate(bias, g.colwise().sum());
  });
}

/// Element-wise (Hadamard) product.
template <typename Scalar>
BasicVar<Scalar> mul(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("mul: shapes differ, " + detail::shape_str(a.value()) + " vs " + detail::shape_str(b.value()));
  MatrixX<Scalar> out = a.value().cwiseProduct(b.value());
  return a.tape().record(std::move(out), {a, b}, [a, b](BasicTape<Scalar>& t, const MatrixX<Scalar>& g, const MatrixX<Scalar>&) {
    if (t.requires_grad(a)) t.accumulate(a, g.cwiseProduct(b.value()));
    if (t.requires_grad(b)) t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

template <typename Scalar>
BasicVar<Scalar> scale(const BasicVar<Scalar>& x, Scalar factor) {
  MatrixX<Scalar> out = x.value() * factor;
  return x.tape().record(std::move(out), {x}, [x, factor](BasicTape<Scalar>& t, const MatrixX<Scalar>& g, const MatrixX<Scalar>&) {
    t.accumulate(x, g * factor);
  });
}

template <typename Scalar>
BasicVar<Scalar> activate(Activation kind, const BasicVar<Scalar>& x) {
  MatrixX<Scalar> out = x.value().unaryExpr([kind](Scalar v) { return activate_scalar(kind, v); });
  return x.tape().record(std::move(out), {x}, [kind, x](BasicTape<Scalar>& t, const MatrixX<Scalar>& g, const MatrixX<Scalar>&) {
    t.accumulate(x, g.cwiseProduct(x.value().unaryExpr([kind](Scalar v) { return activate_derivative(kind, v); })));
  });
}

template <typename Scalar>
BasicVar<Scalar> relu(const BasicVar<Scalar>& x) { return activate(Activation::relu, x); }
template <typename Scalar>
BasicVar<Scalar> sigmoid(const BasicVar<Scalar>& x) { return activate(Activation::sigmoid, x); }
template <typename Scalar>
BasicVar<Scalar> swish(const BasicVar<Scalar>& x) { return activate(Activation::swish, x); }

/// Row-wise softmax over the last axis, max-subtracted.
template <typename Scalar>
MatrixX<Scalar> softmax_rows(const MatrixX<Scalar>& x) {
  MatrixX<Scalar> out = (x.colwise() - x.rowwise().maxCoeff()).array().exp().matrix();
  out.array().colwise() /= out.rowwise().sum().array();
  return out;
}

template <typename Scalar>
BasicVar<Scalar> softmax(const BasicVar<Scalar>& x) {
  if (x.cols() < 1) throw DimensionError("softmax: empty last axis");
  return x.tape().record(softmax_rows<Scalar>(x.value()), {x},
                         [x](BasicTape<Scalar>& t, const MatrixX<Scalar>& g, const MatrixX<Scalar>& s) {
                           const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dots = g.cwiseProduct(s).rowwise().sum();
                           t.accumulate(x, s.cwiseProduct(g.colwise() - dots));
                         });
}

/// Normalizes each column: train mode uses biased batch statistics and updates
/// the running estimates, infer mode uses the running estimates.
template <typename Scalar>
BasicVar<Scalar> batch_normalize(const BasicVar<Scalar>& z, BasicBatchNormStats<Scalar>& stats, Mode mode) {
  const MatrixX<Scalar>& zv = z.value();
  const Eigen::Index batch = zv.rows();
  if (stats.running_mean.size() != zv.cols())
    throw DimensionError("batch_norm: state width " + std::to_string(stats.running_mean.size()) +
                         " does not match input " + detail::shape_str(zv));
  auto& tape = z.tape();
  if (mode == Mode::infer) {
    RowVectorX<Scalar> inv = (stats.running_var.array() + stats.epsilon).rsqrt().matrix();
    MatrixX<Scalar> out = (zv.rowwise() - stats.running_mean).array().rowwise() * inv.array();
    return tape.record(std::move(out), {z}, [z, inv](BasicTape<Scalar>& t, const MatrixX<Scalar>& g, const MatrixX<Scalar>&) {
      t.accumulate(z, (g.array().rowwise() * inv.array()).matrix());
    });
  }
  if (batch < 2) throw DimensionError("batch_norm: train mode needs at least 2 rows, got " + std::to_string(batch));
  const RowVectorX<Scalar> mu = zv.colwise().mean();
  const MatrixX<Scalar> centered = zv.rowwise() - mu;
  const RowVectorX<Scalar> var = centered.array().square().colwise().mean().matrix();
  const RowVectorX<Scalar> inv = (var.array() + stats.epsilon).rsqrt().matrix();
  stats.running_mean = stats.momentum * stats.running_mean + (Scalar(1) - stats.momentum) * mu;
  stats.running_var = stats.momentum * stats.running_var + (Scalar(1) - stats.momentum) * var;
  MatrixX<Scalar> xhat = centered.array().rowwise() * inv.array();
  return tape.record(std::move(xhat), {z},
                     [z, inv](BasicTape<Scalar>& t, const MatrixX<Scalar>& g, const MatrixX<Scalar>& saved) {
                       // dz = inv * (g - mean(g) - xhat * mean(g * xhat)), column-wise
                       const RowVectorX<Scalar> g_mean = g.colwise().mean();
                       const RowVectorX<Scalar> gx_mean = g.cwiseProduct(saved).colwise().mean();
                       MatrixX<Scalar> d = (g.rowwise() - g_mean) - (saved.array().rowwise() * gx_mean.array()).matrix();
                       d.array().rowwise() *= inv.array();
                       t.accumulate(z, d);
                     });
}

/// gamma ⊙ x + beta with gamma, beta of shape 1×D.
template <typename Scalar>
BasicVar<Scalar> affine(const BasicVar<Scalar>& x, const BasicVar<Scalar>& gamma, const BasicVar<Scalar>& beta) {
  if (gamma.rows() != 1 || gamma.cols() != x.cols() || beta.rows() != 1 || beta.cols() != x.cols())
    throw DimensionError("affine: scale/shift must be 1x" + std::to_string(x.cols()));
  MatrixX<Scalar> out = (x.value().array().rowwise() * gamma.value().row(0).array()).matrix().rowwise() + beta.value().row(0);
  return x.tape().record(std::move(out), {x, gamma, beta},
                         [x, gamma, beta](BasicTape<Scalar>& t, const MatrixX<Scalar>& g, const MatrixX<Scalar>&) {
                           if (t.requires_grad(x)) t.accumulate(x, (g.array().rowwise() * gamma.value().row(0).array()).matrix());
                           if (t.requires_grad(gamma)) t.accumulate(gamma, g.cwiseProduct(x.value()).colwise().sum());
                           if (t.requires_grad(beta)) t.accumulate(beta, g.colwise().sum());
                         });
}

template <typename Scalar>
BasicVar<Scalar> batch_norm(const BasicVar<Scalar>& z, const BasicVar<Scalar>& gamma, const BasicVar<Scalar>& beta,
                            BasicBatchNormStats<Scalar>& stats, Mode mode) {
  return affine(batch_normalize(z, stats, mode), gamma, beta);
}

/// Concatenation along axis 0 (rows) or 1 / -1 (columns, the last axis).
template <typename Scalar>
BasicVar<Scalar> concat(const std::vector<BasicVar<Scalar>>& parts, int axis = -1) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const bool cols = axis == 1 || axis == -1;
  if (!cols && axis != 0) throw DimensionError("concat: axis must be 0, 1 or -1");
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    if (cols ? p.rows() != parts[0].rows() : p.cols() != parts[0].cols())
      throw DimensionError("concat: " + detail::shape_str(p.value()) + " does not align with " +
                           detail::shape_str(parts[0].value()));
    total += cols ? p.cols() : p.rows();
  }
  MatrixX<Scalar> out(cols ? parts[0].rows() : total, cols ? total : parts[0].cols());
  Eigen::Index offset = 0;
  for (const auto& p : parts) {
    if (cols) out.middleCols(offset, p.cols()) = p.value();
    else out.middleRows(offset, p.rows()) = p.value();
    offset += cols ? p.cols() : p.rows();
  }
  return parts[0].tape().record(std::move(out), parts, [parts, cols](BasicTape<Scalar>& t, const MatrixX<Scalar>& g, const MatrixX<Scalar>&) {
    Eigen::Index off = 0;
    for (const auto& p : parts) {
      const Eigen::Index n = cols ? p.cols() : p.rows();
      if (cols) t.accumulate(p, g.middleCols(off, n));
      else t.accumulate(p, g.middleRows(off, n));
      off += n;
    }
  });
}

/// Σᵢ weights[:, i] ⊙ items[i], each item B×D, weights B×N.
template <typename Scalar>
BasicVar<Scalar> weighted_sum(const BasicVar<Scalar>& weights, const std::vector<BasicVar<Scalar>>& items) {
  if (items.empty() || weights.cols() != static_cast<Eigen::Index>(items.size()))
    throw DimensionError("weighted_sum: " + std::to_string(weights.cols()) + " weights for " +
                         std::to_string(items.size()) + " inputs");
  const auto& w = weights.value();
  MatrixX<Scalar> out = MatrixX<Scalar>::Zero(items[0].rows(), items[0].cols());
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& e = items[i].value();
    if (e.rows() != out.rows() || e.cols() != out.cols() || w.rows() != e.rows())
      throw DimensionError("weighted_sum: input " + std::to_string(i) + " is " + detail::shape_str(e) +
                           ", weights " + detail::shape_str(w));
    out.array() += e.array().colwise() * w.col(static_cast<Eigen::Index>(i)).array();
  }
  std::vector<BasicVar<Scalar>> inputs(items);
  inputs.push_back(weights);
  return weights.tape().record(std::move(out), inputs, [weights, items](BasicTape<Scalar>& t, const MatrixX<Scalar>& g, const MatrixX<Scalar>&) {
    const auto& wv = weights.value();
    const bool need_w = t.requires_grad(weights);
    MatrixX<Scalar> dw;
    if (need_w) dw.resize(wv.rows(), wv.cols());
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto col = static_cast<Eigen::Index>(i);
      if (t.requires_grad(items[i])) t.accumulate(items[i], (g.array().colwise() * wv.col(col).array()).matrix());
      if (need_w) dw.col(col) = g.cwiseProduct(items[i].value()).rowwise().sum();
    }
    if (need_w) t.accumulate(weights, dw);
  });
}

/// Sum of all elements as a 1×1 value.
template <typename Scalar>
BasicVar<Scalar> sum(const BasicVar<Scalar>& x) {
  MatrixX<Scalar> out(1, 1);
  out(0, 0) = x.value().sum();
  return x.tape().record(std::move(out), {x}, [x](BasicTape<Scalar>& t, const MatrixX<Scalar>& g, const MatrixX<Scalar>&) {
    t.accumulate(x, MatrixX<Scalar>::Constant(x.rows(), x.cols(), g(0, 0)));
  });
}

template <typename Scalar>
BasicVar<Scalar> mean(const BasicVar<Scalar>& x) {
  return scale(sum(x), Scalar(1) / static_cast<Scalar>(x.value().size()));
}

// ---------------------------------------------------------------------------
// Gradient-check oracle.

/// Central differences of `f` with respect to every coordinate of `theta`.
/// `f` must read theta.value; it is restored after each probe.
template <typename Scalar, typename F>
MatrixX<Scalar> finite_diff_grad(F&& f, BasicParameter<Scalar>& theta, Scalar h) {
  if (!(h > Scalar(0))) throw std::invalid_argument("finite_diff_grad: step must be positive");
  MatrixX<Scalar> out(theta.value.rows(), theta.value.cols());
  for (Eigen::Index i = 0; i < theta.value.size(); ++i) {
    Scalar& slot = theta.value.data()[i];
    const Scalar saved = slot;
    slot = saved + h;
    const Scalar up = f();
    slot = saved - h;
    const Scalar down = f();
    slot = saved;
    out.data()[i] = (up - down) / (Scalar(2) * h);
  }
  return out;
}

/// ‖a − b‖ / max(‖a‖, ‖b‖); zero when both vanish.
template <typename Scalar>
Scalar relative_error(const MatrixX<Scalar>& a, const MatrixX<Scalar>& b) {
  const Scalar denom = std::max(a.norm(), b.norm());
  if (denom == Scalar(0)) return Scalar(0);
  return (a - b).norm() / denom;
}

// Project-wide precision.
using Scalar = double;
using Matrix = MatrixX<double>;
using RowVector = RowVectorX<double>;
using Tape = BasicTape<double>;
using Var = BasicVar<double>;
using Parameter = BasicParameter<double>;
using BatchNormStats = BasicBatchNormStats<double>;

}  // namespace home
