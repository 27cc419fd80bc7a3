// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "idu/error.hpp"
#include "idu/gradcheck.hpp"
#include "idu/losses.hpp"
#include "idu/rng.hpp"
#include "oracles.hpp"

using namespace idu;

namespace {

Matrix random_simplex(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.uniform(-2.0, 2.0);
  return activate(m, Activation::SoftmaxRows);
}

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (double& v : m.data()) v = rng.uniform(-scale, scale);
  return m;
}

std::vector<int> random_labels(std::size_t n, std::size_t classes, Rng& rng) {
  std::vector<int> y(n);
  for (int& v : y) v = static_cast<int>(rng.below(classes));
  return y;
}

double scalar(Var v) { return v.value()(0, 0); }

}  // namespace

TEST(CrossEntropy, UniformGivesLogClassCount) {
  Tape tape;
  const std::vector<int> y = {0, 5, 20};
  Var p = tape.constant(Matrix(3, 21, 1.0 / 21.0));
  EXPECT_NEAR(scalar(cross_entropy(p, one_hot(y, 21))), std::log(21.0), 1e-12);
  EXPECT_NEAR(std::log(21.0), 3.0445, 1e-4);
}

TEST(CrossEntropy, ExactPredictionIsZero) {
  Tape tape;
  const Matrix y = one_hot(std::vector<int>{2, 0}, 4);
  EXPECT_NEAR(scalar(cross_entropy(tape.constant(y), y)), 0.0, 1e-15);
}

TEST(CrossEntropy, MatchesSummationOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const Matrix p = random_simplex(6, 5, rng);
    const auto y = random_labels(6, 5, rng);
    double want = 0.0;
    for (std::size_t b = 0; b < 6; ++b) want += oracle::cross_entropy(oracle::row(p, b), y[b]);
    want /= 6.0;
    Tape tape;
    EXPECT_NEAR(scalar(cross_entropy(tape.constant(p), one_hot(y, 5))), want, 1e-12);
  }
}

TEST(CrossEntropy, ClampsZeroProbability) {
  Tape tape;
  const Matrix p = Matrix::from_rows({{1.0, 0.0}});
  EXPECT_NEAR(scalar(cross_entropy(tape.constant(p), one_hot(std::vector<int>{1}, 2))), -std::log(1e-12), 1e-9);
}

TEST(CrossEntropy, WidthMismatch) {
  Tape tape;
  EXPECT_THROW(cross_entropy(tape.constant(Matrix(2, 3, 1.0 / 3)), Matrix(2, 4)), ShapeError);
  EXPECT_THROW(one_hot(std::vector<int>{4}, 4), ShapeError);
}

TEST(EarlyEmbeddingLoss, Examples) {
  Tape tape;
  const Matrix y = one_hot(std::vector<int>{3, 1}, 21);
  Var uniform = tape.constant(Matrix(2, 21, 1.0 / 21.0));
  EXPECT_NEAR(scalar(loss_ee(uniform, uniform, y, y)), 2.0 * std::log(21.0), 1e-12);
  Var exact = tape.constant(y);
  EXPECT_NEAR(scalar(loss_ee(exact, exact, y, y)), 0.0, 1e-15);

  Rng rng(4);
  const Matrix a = random_simplex(2, 21, rng), b = random_simplex(2, 21, rng);
  const auto ya = random_labels(2, 21, rng), yb = random_labels(2, 21, rng);
  double want = 0.0;
  for (std::size_t i = 0; i < 2; ++i) {
    want += oracle::cross_entropy(oracle::row(a, i), ya[i]) + oracle::cross_entropy(oracle::row(b, i), yb[i]);
  }
  EXPECT_NEAR(scalar(loss_ee(tape.constant(a), tape.constant(b), one_hot(ya, 21), one_hot(yb, 21))), want / 2.0, 1e-12);
}

TEST(ContrastiveLoss, HandExamples) {
  Tape tape;
  const std::vector<int> same = {1}, other = {2};
  Var a = tape.constant(Matrix::from_rows({{0.3, 0.4}}));
  Var zero = tape.constant(Matrix(1, 2));
  EXPECT_NEAR(scalar(loss_ct(a, zero, same, same, 1.0)), 0.25, 1e-15);
  EXPECT_EQ(scalar(loss_ct(a, a, same, same, 1.0)), 0.0);
  Var far = tape.constant(Matrix::from_rows({{1.0, 1.0}}));
  EXPECT_EQ(scalar(loss_ct(far, zero, same, other, 1.0)), 0.0);  // D^2 = 2 >= m
  EXPECT_NEAR(scalar(loss_ct(a, zero, same, other, 1.0)), 0.75, 1e-15);
}

TEST(ContrastiveLoss, MatchesOracleAndIsSymmetric) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const Matrix a = random_matrix(8, 3, rng), b = random_matrix(8, 3, rng);
    const auto ya = random_labels(8, 2, rng), yb = random_labels(8, 2, rng);
    double want = 0.0;
    for (std::size_t i = 0; i < 8; ++i) want += oracle::contrastive(oracle::row(a, i), oracle::row(b, i), ya[i] == yb[i], 1.5);
    Tape tape;
    const double ab = scalar(loss_ct(tape.constant(a), tape.constant(b), ya, yb, 1.5));
    const double ba = scalar(loss_ct(tape.constant(b), tape.constant(a), yb, ya, 1.5));
    EXPECT_NEAR(ab, want / 8.0, 1e-12);
    EXPECT_EQ(ab, ba);
    EXPECT_GE(ab, 0.0);
  }
}

TEST(ContrastiveLoss, BoundaryIsFlaggedAsNonSmooth) {
  // Different classes with D^2 exactly at the margin: the hinge kink.
  Matrix a = Matrix::from_rows({{0.5, 0.0}});
  Matrix b = Matrix::from_rows({{0.0, 0.0}});
  std::vector<Matrix*> params = {&a};
  const std::vector<int> ya = {1}, yb = {2};
  const auto report = check_graph_gradients(
      [&](Tape& tape, std::span<const Var> p) { return loss_ct(p[0], tape.constant(b), ya, yb, 0.25); }, params);
  EXPECT_GE(report.non_smooth, 1u);
  // Subgradient 0 on the boundary.
  Tape tape;
  Var pa = tape.parameter(a);
  tape.backward(loss_ct(pa, tape.constant(b), ya, yb, 0.25));
  EXPECT_EQ(tape.gradient(pa)(0, 0), 0.0);
}

TEST(AnticipationLoss, Examples) {
  Tape tape;
  std::vector<Var> q;
  std::vector<Matrix> y;
  for (int j = 0; j < 8; ++j) {
    q.push_back(tape.constant(Matrix(2, 21, 1.0 / 21.0)));
    y.push_back(one_hot(std::vector<int>{j, 20 - j}, 21));
  }
  EXPECT_NEAR(scalar(loss_aa(q, y)), 8.0 * std::log(21.0), 1e-12);
  std::vector<Var> exact;
  for (const Matrix& m : y) exact.push_back(tape.constant(m));
  EXPECT_NEAR(scalar(loss_aa(exact, y)), 0.0, 1e-15);

  Rng rng(3);
  std::vector<Var> rq;
  std::vector<Matrix> ry;
  double want = 0.0;
  for (int j = 0; j < 4; ++j) {
    const Matrix p = random_simplex(3, 6, rng);
    const auto labels = random_labels(3, 6, rng);
    for (std::size_t b = 0; b < 3; ++b) want += oracle::cross_entropy(oracle::row(p, b), labels[b]) / 3.0;
    rq.push_back(tape.constant(p));
    ry.push_back(one_hot(labels, 6));
  }
  EXPECT_NEAR(scalar(loss_aa(rq, ry)), want, 1e-12);
  EXPECT_THROW(loss_aa(std::span<const Var>(rq).first(3), ry), ShapeError);
}

namespace {

struct OadFixture {
  std::vector<Matrix> p, pe, xe;
  Matrix pe0, xe0;
  std::vector<std::vector<int>> labels;
};

OadFixture random_oad(std::size_t steps, std::size_t batch, std::size_t classes, std::size_t width, Rng& rng) {
  OadFixture f;
  for (std::size_t t = 0; t < steps; ++t) {
    f.p.push_back(random_simplex(batch, classes, rng));
    f.pe.push_back(random_simplex(batch, classes, rng));
    f.xe.push_back(random_matrix(batch, width, rng));
    f.labels.push_back(random_labels(batch, classes, rng));
  }
  f.pe0 = f.pe.back();
  f.xe0 = f.xe.back();
  return f;
}

OadLoss run_oad(Tape& tape, const OadFixture& f, std::size_t classes, double alpha) {
  OadTerms terms;
  for (std::size_t t = 0; t < f.p.size(); ++t) {
    terms.p.push_back(tape.constant(f.p[t]));
    terms.p_e.push_back(tape.constant(f.pe[t]));
    terms.x_e.push_back(tape.constant(f.xe[t]));
  }
  terms.p_0_e = terms.p_e.back();
  terms.x_0_e = terms.x_e.back();
  return loss_oad(terms, f.labels, classes, alpha, 1.0);
}

}  // namespace

TEST(OadLoss, RecombinesParts) {
  Rng rng(21);
  const OadFixture f = random_oad(16, 4, 5, 3, rng);
  Tape tape;
  const OadLoss loss = run_oad(tape, f, 5, 0.3);
  EXPECT_NEAR(loss.parts.l_total, loss.parts.l_ce + 0.3 * (loss.parts.l_ee + loss.parts.l_ct), 1e-12);

  // Independent recomputation of each part.
  double ce = 0.0, ee = 0.0, ct = 0.0;
  const auto& y0 = f.labels.back();
  for (std::size_t t = 0; t < 16; ++t) {
    for (std::size_t b = 0; b < 4; ++b) {
      ce += oracle::cross_entropy(oracle::row(f.p[t], b), f.labels[t][b]) / 4.0;
      ee += (oracle::cross_entropy(oracle::row(f.pe[t], b), f.labels[t][b]) +
             oracle::cross_entropy(oracle::row(f.pe0, b), y0[b])) / 4.0;
      ct += oracle::contrastive(oracle::row(f.xe[t], b), oracle::row(f.xe0, b), f.labels[t][b] == y0[b], 1.0) / 4.0;
    }
  }
  EXPECT_NEAR(loss.parts.l_ce, ce, 1e-12);
  EXPECT_NEAR(loss.parts.l_ee, ee, 1e-12);
  EXPECT_NEAR(loss.parts.l_ct, ct, 1e-12);
}

TEST(OadLoss, AlphaZeroIsCrossEntropyOnly) {
  Rng rng(22);
  const OadFixture f = random_oad(4, 3, 4, 2, rng);
  Tape tape;
  const OadLoss loss = run_oad(tape, f, 4, 0.0);
  EXPECT_EQ(loss.parts.l_total, loss.parts.l_ce);
  EXPECT_GT(loss.parts.l_ee, 0.0);
}

TEST(OadLoss, MonotoneInAlpha) {
  Rng rng(23);
  const OadFixture f = random_oad(4, 3, 4, 2, rng);
  double last = -1.0;
  for (double alpha : {0.0, 0.1, 0.3, 1.0, 2.0}) {
    Tape tape;
    const double v = run_oad(tape, f, 4, alpha).parts.l_total;
    EXPECT_GE(v, last);
    last = v;
  }
}

TEST(OadLoss, PerfectPredictionsGiveZero) {
  OadFixture f;
  const std::size_t classes = 3;
  for (int t = 0; t < 4; ++t) {
    f.labels.push_back({1, 2});
    const Matrix y = one_hot(f.labels.back(), classes);
    f.p.push_back(y);
    f.pe.push_back(y);
    f.xe.push_back(Matrix::from_rows({{1.0, 0.0}, {0.0, 1.0}}));
  }
  f.pe0 = f.pe.back();
  f.xe0 = f.xe.back();
  Tape tape;
  EXPECT_NEAR(run_oad(tape, f, classes, 0.3).parts.l_total, 0.0, 1e-12);
}

TEST(OadLoss, StepMismatch) {
  Rng rng(24);
  OadFixture f = random_oad(3, 2, 3, 2, rng);
  f.labels.pop_back();
  Tape tape;
  EXPECT_THROW(run_oad(tape, f, 3, 0.3), ShapeError);
}

TEST(LossGradients, AllLossesPassFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(300 + seed);
    const std::size_t B = 4, C = 4, W = 3, T = 3;
    std::vector<Matrix> logits, emb;
    for (std::size_t t = 0; t < T; ++t) {
      logits.push_back(random_matrix(B, C, rng));
      logits.push_back(random_matrix(B, C, rng));
      emb.push_back(random_matrix(B, W, rng));
    }
    std::vector<std::vector<int>> labels;
    for (std::size_t t = 0; t < T; ++t) labels.push_back(random_labels(B, C, rng));
    std::vector<Matrix*> params;
    for (auto& m : logits) params.push_back(&m);
    for (auto& m : emb) params.push_back(&m);

    const auto oad = check_graph_gradients(
        [&](Tape&, std::span<const Var> p) {
          OadTerms terms;
          for (std::size_t t = 0; t < T; ++t) {
            terms.p.push_back(softmax_rows(p[2 * t]));
            terms.p_e.push_back(softmax_rows(p[2 * t + 1]));
            terms.x_e.push_back(p[2 * T + t]);
          }
          terms.p_0_e = terms.p_e.back();
          terms.x_0_e = terms.x_e.back();
          return loss_oad(terms, labels, C, 0.3, 1.0).total;
        },
        params);
    EXPECT_TRUE(oad.passed()) << "oad seed " << seed << " err " << oad.max_rel_error;

    const auto aa = check_graph_gradients(
        [&](Tape&, std::span<const Var> p) {
          std::vector<Var> q;
          std::vector<Matrix> y;
          for (std::size_t j = 0; j < T; ++j) {
            q.push_back(softmax_rows(p[j]));
            y.push_back(one_hot(labels[j], C));
          }
          return loss_aa(q, y);
        },
        std::span<Matrix* const>(params).first(T));
    EXPECT_TRUE(aa.passed()) << "aa seed " << seed << " err " << aa.max_rel_error;

    const auto ct = check_graph_gradients(
        [&](Tape&, std::span<const Var> p) { return loss_ct(p[0], p[1], labels[0], labels[1], 1.0); },
        std::span<Matrix* const>(params).subspan(2 * T, 2));
    EXPECT_TRUE(ct.passed()) << "ct seed " << seed << " err " << ct.max_rel_error;
  }
}
