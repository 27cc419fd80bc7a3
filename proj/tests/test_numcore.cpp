// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "idu/error.hpp"
#include "idu/gradcheck.hpp"
#include "idu/matrix.hpp"
#include "idu/rng.hpp"
#include "idu/tape.hpp"
#include "oracles.hpp"

using namespace idu;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (double& v : m.data()) v = rng.uniform(-scale, scale);
  return m;
}

}  // namespace

TEST(Matrix, IdentityTimesMatrix) {
  const Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
  EXPECT_EQ(matmul(Matrix::identity(2), a), a);
}

TEST(Matrix, RowTimesColumn) {
  const Matrix out = matmul(Matrix::from_rows({{1, 2}}), Matrix::from_rows({{3}, {4}}));
  ASSERT_EQ(out.rows(), 1u);
  ASSERT_EQ(out.cols(), 1u);
  EXPECT_EQ(out(0, 0), 11.0);
}

TEST(Matrix, MatmulMatchesTripleLoop) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = random_matrix(5, 4, rng), b = random_matrix(4, 3, rng);
    EXPECT_LT(max_abs_diff(matmul(a, b), oracle::naive_matmul(a, b)), 1e-12);
  }
}

TEST(Matrix, ShapeMismatchThrows) {
  EXPECT_THROW(matmul(Matrix(2, 3), Matrix(2, 3)), ShapeError);
  EXPECT_THROW(Matrix(2, 2, std::vector<double>(3)), ShapeError);
}

TEST(Matrix, NonFiniteRejected) {
  EXPECT_THROW(Matrix(1, 1, std::vector<double>{NAN}), NumericError);
  Matrix m(1, 2);
  m(0, 1) = INFINITY;
  EXPECT_THROW(activate(m, Activation::Sigmoid), NumericError);
  EXPECT_THROW(matmul(m, Matrix(2, 1)), NumericError);
}

TEST(Activations, Examples) {
  EXPECT_EQ(activate(Matrix(1, 1), Activation::Sigmoid)(0, 0), 0.5);
  const Matrix sm = activate(Matrix(1, 4), Activation::SoftmaxRows);
  for (double v : sm.data()) EXPECT_EQ(v, 0.25);
  const Matrix t = activate(Matrix::from_rows({{20, -20, 35, -1e3}}), Activation::Tanh);
  EXPECT_NEAR(t(0, 0), 1.0, 1e-9);
  EXPECT_NEAR(t(0, 1), -1.0, 1e-9);
  EXPECT_NEAR(t(0, 2), 1.0, 1e-9);
  EXPECT_NEAR(t(0, 3), -1.0, 1e-9);
}

TEST(Activations, RangesAndSimplex) {
  Rng rng(3);
  const Matrix x = random_matrix(6, 9, rng, 30.0);
  const Matrix sg = activate(x, Activation::Sigmoid);
  for (double v : sg.data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  const Matrix rl = activate(x, Activation::Relu);
  for (double v : rl.data()) EXPECT_GE(v, 0.0);
  const Matrix sm = activate(x, Activation::SoftmaxRows);
  for (std::size_t r = 0; r < sm.rows(); ++r) {
    double s = 0.0;
    for (double v : sm.row(r)) {
      EXPECT_GT(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Tape, SumGivesAllOnes) {
  for (auto [r, c] : {std::pair<std::size_t, std::size_t>{1, 1}, {3, 5}, {7, 2}}) {
    Matrix w(r, c, 0.3);
    Tape tape;
    Var p = tape.parameter(w);
    tape.backward(tape.sum(p));
    const Matrix grad = tape.gradient(p);
    for (double g : grad.data()) EXPECT_EQ(g, 1.0);
  }
}

TEST(Tape, SigmoidSquaredChainRule) {
  Matrix w(1, 1, 0.0);
  Tape tape;
  Var p = tape.parameter(w);
  Var s = sigmoid(p);
  tape.backward(tape.sum(s * s));
  EXPECT_NEAR(tape.gradient(p)(0, 0), 0.25, 1e-15);
}

TEST(Tape, NonScalarOutputRejected) {
  Matrix w(2, 2, 1.0);
  Tape tape;
  Var p = tape.parameter(w);
  EXPECT_THROW(tape.backward(p), ShapeError);
}

TEST(Tape, DisconnectedParameterHasZeroGradient) {
  Matrix a(2, 2, 1.0), b(3, 1, 2.0);
  Tape tape;
  Var pa = tape.parameter(a);
  Var pb = tape.parameter(b);
  tape.backward(tape.sum(pa));
  const Matrix g = tape.gradient(pb);
  EXPECT_EQ(g, Matrix(3, 1));
}

TEST(Tape, ReplayIsBitExact) {
  Rng rng(11);
  Matrix w = random_matrix(4, 6, rng);
  Matrix x = random_matrix(3, 4, rng);
  Tape tape;
  Var p = tape.parameter(w);
  Var h = matmul(tape.constant(x), p);
  Var out = tape.batch_norm(softmax_rows(h) + relu(h) * tanh(h));
  out = concat({out, tape.slice(sigmoid(out), 1, 4)});
  tape.backward(tape.sum(tape.log_clamped(tape.add_scalar(tape.scale(out * out, 0.5), 1.0))));
  EXPECT_TRUE(tape.replay_matches());
}

// Every primitive against central differences.
TEST(Tape, PrimitiveGradients) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Matrix a = random_matrix(3, 4, rng), b = random_matrix(4, 5, rng), c = random_matrix(3, 5, rng);
    std::vector<Matrix*> params = {&a, &b, &c};
    const auto report = check_graph_gradients(
        [](Tape& t, std::span<const Var> p) {
          Var h = matmul(p[0], p[1]);
          Var u = softmax_rows(h) + sigmoid(h) * p[2] - tanh(p[2]);
          Var v = concat({relu(u), t.slice(u, 1, 3), t.scale(u, -0.7)});
          Var w = t.slice_rows(v, 0, 2);
          Var bn = t.batch_norm(v);
          Var l = t.log_clamped(t.add_scalar(softmax_rows(w), 0.0));
          return t.add(t.sum(l), t.add(t.sum(t.sum_rows(bn * bn * v)), t.sum(t.add_scalar(v * v, 1.0))));
        },
        params);
    EXPECT_TRUE(report.passed()) << "seed " << seed << " err " << report.max_rel_error;
    EXPECT_EQ(report.coordinates, a.size() + b.size() + c.size());
  }
}

TEST(GradCheck, QuadraticIsExact) {
  Matrix w = Matrix::from_rows({{0.3, -1.2}, {2.0, 0.7}});
  std::vector<Matrix*> params = {&w};
  const auto f = [&] {
    double s = 0.0;
    for (double v : w.data()) s += 3.0 * v * v - v;
    return s;
  };
  Matrix grad(2, 2);
  for (std::size_t i = 0; i < 4; ++i) grad.data()[i] = 6.0 * w.data()[i] - 1.0;
  // Central differences are exact for quadratics; a wider step keeps roundoff small.
  const auto report = finite_diff_check(f, params, std::vector<Matrix>{grad}, 1e-3);
  EXPECT_LT(report.max_rel_error, 1e-10);
}

TEST(GradCheck, WrongGradientDetected) {
  Matrix w(1, 3, 0.5);
  std::vector<Matrix*> params = {&w};
  const auto f = [&] { return w(0, 0) * w(0, 1) + w(0, 2); };
  const Matrix wrong = Matrix::from_rows({{0.5, 0.5, 2.0}});
  EXPECT_FALSE(finite_diff_check(f, params, std::vector<Matrix>{wrong}).passed());
}

TEST(GradCheck, NonDeterminismDetected) {
  Matrix w(1, 1, 0.5);
  std::vector<Matrix*> params = {&w};
  int calls = 0;
  const auto f = [&] { return w(0, 0) + 1e-3 * (calls++); };
  EXPECT_THROW(finite_diff_check(f, params, std::vector<Matrix>{Matrix(1, 1, 1.0)}), NumericError);
}

TEST(GradCheck, KinkIsFlagged) {
  Matrix w(1, 1, 0.0);
  std::vector<Matrix*> params = {&w};
  const auto f = [&] { return std::max(0.0, w(0, 0)); };
  const auto report = finite_diff_check(f, params, std::vector<Matrix>{Matrix(1, 1, 0.0)});
  EXPECT_EQ(report.non_smooth, 1u);
}

TEST(Rng, SeedDeterminism) {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next();
    EXPECT_EQ(x, b.next());
    (void)c;
  }
  EXPECT_NE(Rng(1).next(), Rng(2).next());
  EXPECT_NE(Rng::mix(5, 1), Rng::mix(5, 2));
}

TEST(Rng, RangesAndMoments) {
  Rng rng(9);
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ASSERT_LT(rng.below(7), 7u);
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.05);
  EXPECT_NEAR(sq / n, 1.0, 0.05);
}
