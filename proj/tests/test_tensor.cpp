#include "home/tensor.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace home {
namespace {

using test::op_grad_error;
using test::random_matrix;

Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    Eigen::Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

TEST(Matmul, IdentityAndHandProduct) {
  Tape t;
  const Matrix a = mat({{1, 2}, {3, 4}});
  EXPECT_EQ(matmul(t.constant(Matrix::Identity(2, 2)), t.constant(a)).value(), a);
  EXPECT_EQ(matmul(t.constant(mat({{1, 2}})), t.constant(mat({{3}, {4}}))).value()(0, 0), 11.0);
}

TEST(Matmul, ShapeErrorNamesBothShapes) {
  Tape t;
  try {
    matmul(t.constant(Matrix::Zero(2, 3)), t.constant(Matrix::Zero(4, 5)));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("4x5"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientOfSumMatchesCentralDifferences) {
  std::mt19937_64 rng(11);
  Parameter a("a", random_matrix(3, 4, rng));
  const Matrix b = random_matrix(4, 2, rng);
  {
    Tape t;
    t.backward(sum(matmul(t.parameter(a), t.constant(b))));
  }
  auto f = [&] {
    Tape t;
    return sum(matmul(t.parameter(a), t.constant(b))).value()(0, 0);
  };
  EXPECT_LT(relative_error(a.grad, finite_diff_grad(f, a, 1e-5)), 1e-6);
}

TEST(Activation, KnownValues) {
  EXPECT_EQ(activate_scalar(Activation::swish, 0.0), 0.0);
  EXPECT_NEAR(activate_scalar(Activation::swish, 1.0), 0.7310585786300049, 1e-15);
  EXPECT_EQ(activate_scalar(Activation::relu, -3.0), 0.0);
  EXPECT_EQ(activate_scalar(Activation::relu, 3.0), 3.0);
  EXPECT_EQ(activate_scalar(Activation::sigmoid, 0.0), 0.5);
}

TEST(Activation, ExtremeInputsSaturateWithoutNan) {
  for (double x : {-1e4, -745.0, 745.0, 1e4}) {
    for (Activation k : {Activation::relu, Activation::sigmoid, Activation::swish}) {
      EXPECT_TRUE(std::isfinite(activate_scalar(k, x)));
      EXPECT_TRUE(std::isfinite(activate_derivative(k, x)));
    }
  }
  EXPECT_EQ(activate_scalar(Activation::sigmoid, -1e4), 0.0);
  EXPECT_EQ(activate_scalar(Activation::sigmoid, 1e4), 1.0);
}

TEST(Activation, SwishDerivativeIsExact) {
  for (double x : {-2.5, -0.3, 0.0, 0.7, 4.0}) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    EXPECT_NEAR(activate_derivative(Activation::swish, x), s + x * s * (1.0 - s), 1e-15);
  }
}

TEST(Softmax, KnownValues) {
  Tape t;
  const Matrix u = softmax(t.constant(mat({{0, 0, 0}}))).value();
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(u(0, i), 1.0 / 3.0, 1e-15);
  const Matrix p = softmax(t.constant(mat({{0, std::log(2.0)}}))).value();
  EXPECT_NEAR(p(0, 0), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(p(0, 1), 2.0 / 3.0, 1e-15);
  const Matrix big = softmax(t.constant(mat({{1000, 0}}))).value();
  EXPECT_TRUE(big.allFinite());
  EXPECT_NEAR(big(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(big(0, 1), 0.0, 1e-15);
}

TEST(Softmax, RowsArePositiveAndSumToOne) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Tape t;
    const Matrix s = softmax(t.constant(random_matrix(7, 1 + trial % 9, rng, 5.0))).value();
    EXPECT_TRUE((s.array() > 0.0).all());
    for (Eigen::Index r = 0; r < s.rows(); ++r) EXPECT_NEAR(s.row(r).sum(), 1.0, 1e-12);
  }
}

TEST(BatchNorm, ConstantBatchGivesBeta) {
  Tape t;
  BatchNormStats stats(3, 1e-5, 0.99);
  const Matrix z = Matrix::Constant(4, 3, 2.5);
  const Var out = batch_norm(t.constant(z), t.constant(Matrix::Ones(1, 3)), t.constant(Matrix::Constant(1, 3, 0.7)), stats,
                             Mode::train);
  for (Eigen::Index i = 0; i < out.value().size(); ++i) EXPECT_DOUBLE_EQ(out.value().data()[i], 0.7);
}

TEST(BatchNorm, TwoRowColumnWithSmallEpsilon) {
  Tape t;
  BatchNormStats stats(1, 1e-5, 0.99);
  const Var z = t.constant(mat({{1}, {3}}));
  const Matrix plain = batch_norm(z, t.constant(mat({{1}})), t.constant(mat({{0}})), stats, Mode::train).value();
  EXPECT_NEAR(plain(0, 0), -0.9999950000374997, 1e-12);
  EXPECT_NEAR(plain(1, 0), 0.9999950000374997, 1e-12);
  const Matrix scaled = batch_norm(z, t.constant(mat({{2}})), t.constant(mat({{1}})), stats, Mode::train).value();
  EXPECT_NEAR(scaled(0, 0), -0.9999900000749995, 1e-12);
  EXPECT_NEAR(scaled(1, 0), 2.9999900000749995, 1e-12);
}

TEST(BatchNorm, RunningStatisticsUseMomentum) {
  Tape t;
  BatchNormStats stats(1, 1e-5, 0.99);
  batch_normalize(t.constant(mat({{1}, {3}})), stats, Mode::train);
  EXPECT_NEAR(stats.running_mean(0), 0.01 * 2.0, 1e-15);
  EXPECT_NEAR(stats.running_var(0), 0.99 * 1.0 + 0.01 * 1.0, 1e-15);
  const Matrix inferred = batch_normalize(t.constant(mat({{0.02}})), stats, Mode::infer).value();
  EXPECT_NEAR(inferred(0, 0), 0.0, 1e-15);
}

TEST(BatchNorm, TrainModeNeedsTwoRows) {
  Tape t;
  BatchNormStats stats(2, 1e-5, 0.99);
  EXPECT_THROW(batch_normalize(t.constant(Matrix::Ones(1, 2)), stats, Mode::train), DimensionError);
  EXPECT_NO_THROW(batch_normalize(t.constant(Matrix::Ones(1, 2)), stats, Mode::infer));
}

TEST(BatchNorm, TrainOutputStatistics) {
  std::mt19937_64 rng(21);
  for (int b : {8, 9, 32, 257}) {
    Tape t;
    BatchNormStats stats(5, 1e-9, 0.99);
    Matrix z = random_matrix(b, 5, rng, 3.0);
    z.array() += 4.0;
    const Matrix x = batch_normalize(t.constant(z), stats, Mode::train).value();
    const RowVector m = x.colwise().mean();
    const RowVector v = (x.rowwise() - m).array().square().colwise().mean().matrix();
    for (Eigen::Index c = 0; c < 5; ++c) {
      EXPECT_LT(std::abs(m(c)), 1e-10);
      EXPECT_LT(std::abs(v(c) - 1.0), 1e-6);
    }
    const Matrix gamma = random_matrix(1, 5, rng);
    const Matrix y = affine(t.constant(x), t.constant(gamma), t.constant(Matrix::Zero(1, 5))).value();
    const RowVector vy = (y.rowwise() - y.colwise().mean()).array().square().colwise().mean().matrix();
    for (Eigen::Index c = 0; c < 5; ++c) EXPECT_NEAR(vy(c), gamma(0, c) * gamma(0, c), 1e-6 * std::max(1.0, gamma(0, c) * gamma(0, c)));
  }
}

TEST(Concat, ValuesShapesAndGradientSlices) {
  Tape t;
  Parameter a("a", mat({{1, 2}}));
  Parameter b("b", mat({{3}}));
  const Var c = concat(std::vector<Var>{t.parameter(a), t.parameter(b)});
  EXPECT_EQ(c.value(), mat({{1, 2, 3}}));
  t.backward(sum(mul(c, t.constant(mat({{4, 5, 6}})))));
  EXPECT_EQ(a.grad, mat({{4, 5}}));
  EXPECT_EQ(b.grad, mat({{6}}));

  Tape t2;
  const Var wide = concat(std::vector<Var>{t2.constant(Matrix::Zero(3, 8)), t2.constant(Matrix::Zero(3, 8))}, -1);
  EXPECT_EQ(wide.cols(), 16);
  EXPECT_EQ(concat(std::vector<Var>{t2.constant(Matrix::Zero(3, 8)), t2.constant(Matrix::Zero(2, 8))}, 0).rows(), 5);
  EXPECT_THROW(concat(std::vector<Var>{t2.constant(Matrix::Zero(3, 8)), t2.constant(Matrix::Zero(2, 8))}, -1), DimensionError);
}

TEST(Backward, SimpleGradients) {
  {
    Tape t;
    Parameter x("x", mat({{1, 2, 3}}));
    t.backward(sum(t.parameter(x)));
    EXPECT_EQ(x.grad, mat({{1, 1, 1}}));
  }
  {
    Tape t;
    Parameter x("x", mat({{1, 2}}));
    const Var v = t.parameter(x);
    t.backward(sum(mul(v, v)));
    EXPECT_EQ(x.grad, mat({{2, 4}}));
  }
}

TEST(Backward, UnreachedParameterGetsZeroGradient) {
  Tape t;
  Parameter used("used", mat({{1, 2}}));
  Parameter unused("unused", mat({{5, 6}}));
  const Var dangling = t.parameter(unused);
  t.backward(sum(t.parameter(used)));
  EXPECT_EQ(unused.grad, Matrix::Zero(1, 2));
  EXPECT_EQ(t.grad(dangling), Matrix::Zero(1, 2));
}

TEST(Backward, FanOutAccumulates) {
  Tape t;
  Parameter x("x", mat({{3}}));
  const Var v = t.parameter(x);
  t.backward(sum(add(add(v, v), scale(v, 4.0))));
  EXPECT_EQ(x.grad(0, 0), 6.0);
}

TEST(Backward, RejectsNonScalarLossAndSecondSweep) {
  Tape t;
  Parameter x("x", mat({{1, 2}}));
  const Var v = t.parameter(x);
  EXPECT_THROW(t.backward(v), DimensionError);
  const Var l = sum(v);
  t.backward(l);
  EXPECT_THROW(t.backward(l), std::logic_error);
}

TEST(FiniteDiff, Oracles) {
  Parameter theta("theta", mat({{3}}));
  auto square = [&] { return theta.value(0, 0) * theta.value(0, 0); };
  EXPECT_NEAR(finite_diff_grad(square, theta, 1e-5)(0, 0), 6.0, 1e-8);
  auto constant = [] { return 4.2; };
  EXPECT_EQ(finite_diff_grad(constant, theta, 1e-5), Matrix::Zero(1, 1));
  EXPECT_EQ(theta.value(0, 0), 3.0);
  EXPECT_THROW(finite_diff_grad(constant, theta, 0.0), std::invalid_argument);
}

TEST(FiniteDiff, MatchesBackwardOnTwoLayerMlp) {
  std::mt19937_64 rng(4);
  Parameter w1("w1", random_matrix(5, 7, rng)), b1("b1", random_matrix(1, 7, rng));
  Parameter w2("w2", random_matrix(7, 2, rng)), b2("b2", random_matrix(1, 2, rng));
  const Matrix x = random_matrix(6, 5, rng);
  auto op = [&](Tape& t) {
    const Var h = swish(add_row(matmul(t.constant(x), t.parameter(w1)), t.parameter(b1)));
    return add_row(matmul(h, t.parameter(w2)), t.parameter(b2));
  };
  EXPECT_LT(op_grad_error({&w1, &b1, &w2, &b2}, op, rng), 1e-4);
}

// Every differentiable op against central differences at 20 random points.
class OpGradient : public ::testing::TestWithParam<int> {};

TEST_P(OpGradient, AgreesWithFiniteDifferences) {
  std::mt19937_64 rng(1000 + GetParam());
  Parameter a("a", random_matrix(4, 3, rng)), b("b", random_matrix(4, 3, rng));
  Parameter k("k", random_matrix(3, 5, rng)), r("r", random_matrix(1, 3, rng));
  Parameter gamma("gamma", random_matrix(1, 3, rng)), beta("beta", random_matrix(1, 3, rng));
  Parameter w("w", random_matrix(4, 2, rng));
  BatchNormStats stats(3, 1e-5, 0.99);
  const double tol = 1e-4;
  auto p = [](Tape& t, Parameter& x) { return t.parameter(x); };

  EXPECT_LT(op_grad_error({&a, &k}, [&](Tape& t) { return matmul(p(t, a), p(t, k)); }, rng), tol) << "matmul";
  EXPECT_LT(op_grad_error({&a, &b}, [&](Tape& t) { return add(p(t, a), p(t, b)); }, rng), tol) << "add";
  EXPECT_LT(op_grad_error({&a, &r}, [&](Tape& t) { return add_row(p(t, a), p(t, r)); }, rng), tol) << "add_row";
  EXPECT_LT(op_grad_error({&a, &b}, [&](Tape& t) { return mul(p(t, a), p(t, b)); }, rng), tol) << "mul";
  EXPECT_LT(op_grad_error({&a}, [&](Tape& t) { return scale(p(t, a), -1.7); }, rng), tol) << "scale";
  EXPECT_LT(op_grad_error({&a}, [&](Tape& t) { return relu(p(t, a)); }, rng), tol) << "relu";
  EXPECT_LT(op_grad_error({&a}, [&](Tape& t) { return sigmoid(p(t, a)); }, rng), tol) << "sigmoid";
  EXPECT_LT(op_grad_error({&a}, [&](Tape& t) { return swish(p(t, a)); }, rng), tol) << "swish";
  EXPECT_LT(op_grad_error({&a}, [&](Tape& t) { return softmax(p(t, a)); }, rng), tol) << "softmax";
  EXPECT_LT(op_grad_error({&a}, [&](Tape& t) { return batch_normalize(p(t, a), stats, Mode::train); }, rng), tol)
      << "batch_normalize";
  EXPECT_LT(op_grad_error({&a, &gamma, &beta},
                          [&](Tape& t) { return batch_norm(p(t, a), p(t, gamma), p(t, beta), stats, Mode::train); }, rng),
            tol)
      << "batch_norm";
  EXPECT_LT(op_grad_error({&a, &b}, [&](Tape& t) { return concat(std::vector<Var>{p(t, a), p(t, b)}, -1); }, rng), tol)
      << "concat cols";
  EXPECT_LT(op_grad_error({&a, &b}, [&](Tape& t) { return concat(std::vector<Var>{p(t, a), p(t, b)}, 0); }, rng), tol)
      << "concat rows";
  EXPECT_LT(op_grad_error({&w, &a, &b},
                          [&](Tape& t) { return weighted_sum(p(t, w), std::vector<Var>{p(t, a), p(t, b)}); }, rng),
            tol)
      << "weighted_sum";
  EXPECT_LT(op_grad_error({&a}, [&](Tape& t) { return mean(p(t, a)); }, rng), tol) << "mean";
}

INSTANTIATE_TEST_SUITE_P(RandomPoints, OpGradient, ::testing::Range(0, 20));

TEST(Determinism, SameInputsSameOutputs) {
  std::mt19937_64 r1(3), r2(3);
  const Matrix x1 = random_matrix(5, 4, r1), x2 = random_matrix(5, 4, r2);
  Tape t1, t2;
  BatchNormStats s1(4, 1e-5, 0.99), s2(4, 1e-5, 0.99);
  EXPECT_EQ(softmax(batch_normalize(t1.constant(x1), s1, Mode::train)).value(),
            softmax(batch_normalize(t2.constant(x2), s2, Mode::train)).value());
}

TEST(Scalar, CoreIsTemplatedOnScalar) {
  BasicTape<float> t;
  BasicParameter<float> x("x", MatrixX<float>::Constant(1, 2, 1.5f));
  t.backward(sum(mul(t.parameter(x), t.parameter(x))));
  EXPECT_FLOAT_EQ(x.grad(0, 0), 3.0f);
}

}  // namespace
}  // namespace home
