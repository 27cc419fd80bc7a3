// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

#include "idu/error.hpp"
#include "idu/train.hpp"

using namespace idu;

namespace {

FeatureStream toy_stream(std::uint64_t seed, std::size_t length = 400, double noise = 0.5) {
  SynthConfig cfg;
  cfg.action_classes = 3;
  cfg.feature_width = 8;
  cfg.length = length;
  cfg.action_length_mean = 6;
  cfg.background_fraction = 0.5;
  cfg.noise = noise;
  cfg.seed = seed;
  return gen_synthetic(cfg);
}

DetectorConfig toy_detector(CellKind kind = CellKind::Idu) {
  DetectorConfig c;
  c.cell = kind;
  c.feature_width = 8;
  c.hidden = 8;
  c.num_classes = 4;
  return c;
}

AnticipatorConfig toy_anticipator(CellKind kind = CellKind::Iiu, std::size_t horizon = 2) {
  AnticipatorConfig c;
  c.cell = kind;
  c.feature_width = 8;
  c.reduced_width = 8;
  c.label_width = 8;
  c.hidden = 8;
  c.num_classes = 4;
  c.horizon = horizon;
  c.head_hidden1 = 16;
  c.head_hidden2 = 16;
  return c;
}

TrainConfig quick_config(std::uint64_t seed) {
  TrainConfig t;
  t.epochs = 4;
  t.batch_size = 16;
  t.seed = seed;
  t.past = 4;
  t.horizon = 2;
  t.optimizer.lr = 0.1;
  t.log_every = 1;
  return t;
}

double mean_loss(const TrainLog& log, std::size_t epoch) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : log.records) {
    if (r.epoch == epoch) {
      sum += r.loss;
      ++n;
    }
  }
  return sum / static_cast<double>(n);
}

std::string log_text(const TrainLog& log) {
  std::ostringstream out;
  log.write(out);
  return out.str();
}

}  // namespace

TEST(Optimizers, SgdExample) {
  Matrix p = Matrix::from_rows({{1.0, 2.0}});
  Matrix* ps[] = {&p};
  const Matrix g[] = {Matrix::from_rows({{0.5, -1.0}})};
  sgd_step(ps, g, 0.1);
  EXPECT_DOUBLE_EQ(p(0, 0), 0.95);
  EXPECT_DOUBLE_EQ(p(0, 1), 2.1);
}

TEST(Optimizers, AdamFirstStepIsSignedLearningRate) {
  Matrix p = Matrix::from_rows({{1.0, -3.0, 0.0}});
  Matrix* ps[] = {&p};
  const Matrix g[] = {Matrix::from_rows({{0.2, -7.0, 0.0}})};
  AdamState s;
  s.lr = 1e-3;
  adam_step(s, ps, g);
  EXPECT_NEAR(p(0, 0), 1.0 - 1e-3, 1e-10);
  EXPECT_NEAR(p(0, 1), -3.0 + 1e-3, 1e-10);
  EXPECT_EQ(p(0, 2), 0.0);
  EXPECT_EQ(s.step, 1u);
}

TEST(Optimizers, AdamMatchesHandRecurrence) {
  Matrix p = Matrix::from_rows({{0.5}});
  Matrix* ps[] = {&p};
  AdamState s;
  s.lr = 0.01;
  double theta = 0.5, m = 0.0, v = 0.0;
  const double grads[] = {1.0, -0.5, 2.0, 0.25};
  for (int t = 1; t <= 4; ++t) {
    const double gv = grads[t - 1];
    const Matrix g[] = {Matrix::from_rows({{gv}})};
    adam_step(s, ps, g);
    m = 0.9 * m + 0.1 * gv;
    v = 0.999 * v + 0.001 * gv * gv;
    theta -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    EXPECT_NEAR(p(0, 0), theta, 1e-14);
  }
}

TEST(Optimizers, ZeroLearningRateLeavesParameters) {
  for (OptimizerKind kind : {OptimizerKind::Sgd, OptimizerKind::Adam}) {
    Matrix p = Matrix::from_rows({{0.3, -0.7}, {1.0, 2.0}});
    const Matrix before = p;
    Matrix* ps[] = {&p};
    const Matrix g[] = {Matrix::from_rows({{1.0, 2.0}, {-3.0, 0.5}})};
    Optimizer opt({kind, 0.0});
    for (int i = 0; i < 3; ++i) opt.step(ps, g);
    EXPECT_EQ(p, before);
    EXPECT_EQ(opt.steps(), 3u);
  }
}

TEST(Optimizers, Errors) {
  Matrix p(2, 2);
  Matrix* ps[] = {&p};
  const Matrix wrong[] = {Matrix(2, 3)};
  EXPECT_THROW(sgd_step(ps, wrong, 0.1), ShapeError);
  const Matrix nan[] = {Matrix(2, 2, std::numeric_limits<double>::quiet_NaN())};
  EXPECT_THROW(sgd_step(ps, nan, 0.1), NumericError);
  EXPECT_THROW(Optimizer({OptimizerKind::Adam, -1.0}), UsageError);
  EXPECT_THROW(parse_optimizer("rmsprop"), UsageError);
  EXPECT_EQ(parse_optimizer("adam"), OptimizerKind::Adam);
  EXPECT_EQ(to_string(OptimizerKind::Sgd), "sgd");
}

TEST(Clipping, GlobalNorm) {
  std::vector<Matrix> g = {Matrix::from_rows({{3.0}}), Matrix::from_rows({{0.0, 4.0}})};
  EXPECT_DOUBLE_EQ(global_norm(g), 5.0);
  EXPECT_FALSE(clip_global_norm(g, 10.0));
  EXPECT_FALSE(clip_global_norm(g, 0.0));
  EXPECT_TRUE(clip_global_norm(g, 1.0));
  EXPECT_DOUBLE_EQ(g[0](0, 0), 0.6);
  EXPECT_DOUBLE_EQ(g[1](0, 1), 0.8);
  EXPECT_NEAR(global_norm(g), 1.0, 1e-15);
}

TEST(TrainConfigs, ValidationAndDefaults) {
  TrainConfig t;
  t.epochs = 0;
  EXPECT_THROW(t.validate(), UsageError);
  t = TrainConfig{};
  t.alpha = -0.1;
  EXPECT_THROW(t.validate(), UsageError);
  const TrainConfig iin = iin_defaults();
  EXPECT_EQ(iin.batch_size, 32u);
  EXPECT_EQ(iin.optimizer.kind, OptimizerKind::Adam);
  EXPECT_EQ(iin.optimizer.lr, 1e-4);
  EXPECT_EQ(idn_defaults().clip_norm, 10.0);
  ConfigRecord r;
  iin.write(r);
  EXPECT_EQ(parse_double(r.at("train.lr"), "lr"), 1e-4);
  EXPECT_EQ(r.at("train.sampling"), "shuffle");
}

TEST(TrainDetector, LossDecreasesOnMostSeeds) {
  int improved = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const DetectorRun run = train_idn(quick_config(seed), toy_detector(), toy_stream(seed));
    improved += mean_loss(run.log, 3) < mean_loss(run.log, 0);
  }
  EXPECT_GE(improved, 4);
}

TEST(TrainDetector, LogsLossParts) {
  TrainConfig cfg = quick_config(1);
  cfg.epochs = 1;
  const DetectorRun run = train_idn(cfg, toy_detector(), toy_stream(1));
  ASSERT_FALSE(run.log.records.empty());
  for (const auto& r : run.log.records) {
    EXPECT_NEAR(r.loss, r.l_ce + cfg.alpha * (r.l_ee + r.l_ct), 1e-9);
    EXPECT_GT(r.l_ee, 0.0);
  }
  cfg.alpha = 0.0;
  const DetectorRun plain = train_idn(cfg, toy_detector(), toy_stream(1));
  for (const auto& r : plain.log.records) EXPECT_EQ(r.loss, r.l_ce);
}

TEST(TrainDetector, AlphaIgnoredWithoutEmbedding) {
  TrainConfig cfg = quick_config(2);
  cfg.epochs = 1;
  const DetectorRun a = train_idn(cfg, toy_detector(CellKind::Gru), toy_stream(2));
  cfg.alpha = 0.0;
  const DetectorRun b = train_idn(cfg, toy_detector(CellKind::Gru), toy_stream(2));
  EXPECT_EQ(encode_checkpoint(to_checkpoint(a.model)), encode_checkpoint(to_checkpoint(b.model)));
}

TEST(TrainDetector, BitIdenticalReruns) {
  const TrainConfig cfg = quick_config(3);
  const DetectorRun a = train_idn(cfg, toy_detector(), toy_stream(3));
  const DetectorRun b = train_idn(cfg, toy_detector(), toy_stream(3));
  EXPECT_EQ(encode_checkpoint(to_checkpoint(a.model)), encode_checkpoint(to_checkpoint(b.model)));
  EXPECT_EQ(log_text(a.log), log_text(b.log));
  TrainConfig other = cfg;
  other.seed = 4;
  const DetectorRun c = train_idn(other, toy_detector(), toy_stream(3));
  EXPECT_NE(encode_checkpoint(to_checkpoint(a.model)), encode_checkpoint(to_checkpoint(c.model)));
}

TEST(TrainDetector, ClippingCounted) {
  TrainConfig cfg = quick_config(5);
  cfg.epochs = 1;
  cfg.clip_norm = 1e-6;
  const DetectorRun run = train_idn(cfg, toy_detector(), toy_stream(5));
  EXPECT_GT(run.log.clipped_steps, 0u);
  for (const auto& r : run.log.records) EXPECT_TRUE(r.clipped);
  EXPECT_NE(log_text(run.log).find("clipped_steps="), std::string::npos);
}

TEST(TrainDetector, NonFiniteInputDiverges) {
  FeatureStream s = toy_stream(6);
  for (std::size_t j = 0; j < s.width(); ++j) s.features(s.length() / 2, j) = std::numeric_limits<double>::infinity();
  TrainConfig cfg = quick_config(6);
  cfg.sampling = Sampling::Shuffle;
  cfg.batch_size = 1000;
  EXPECT_THROW(train_idn(cfg, toy_detector(), s), NumericError);
}

TEST(TrainDetector, DataMismatch) {
  DetectorConfig wide = toy_detector();
  wide.feature_width = 9;
  EXPECT_THROW(train_idn(quick_config(0), wide, toy_stream(0)), FormatError);
  FeatureStream bg_only = toy_stream(0, 50);
  for (int& y : bg_only.labels) y = 0;
  EXPECT_THROW(train_idn(quick_config(0), toy_detector(), bg_only), UsageError);
}

// Labels repeat 0,0,1,1,2,2,3,3 with features sitting on the class means, so
// the next two labels are a function of the last two.
TEST(TrainAnticipator, OracleLearnsPeriodicStream) {
  FeatureStream s;
  s.num_classes = 4;
  const std::size_t n = 400;
  s.features = Matrix(n, 8);
  for (std::size_t i = 0; i < n; ++i) {
    s.labels.push_back(static_cast<int>((i / 2) % 4));
    s.features(i, static_cast<std::size_t>(s.labels.back())) = 3.0;
  }
  TrainConfig cfg = quick_config(0);
  cfg.epochs = 30;
  cfg.sampling = Sampling::Shuffle;
  cfg.optimizer = {OptimizerKind::Adam, 0.01};
  const AnticipatorRun run = train_iin(cfg, toy_anticipator(), s, label_track(s, LabelSource::Oracle, nullptr, 4));
  EXPECT_LT(run.log.records.back().loss, 0.05);
  EXPECT_LT(mean_loss(run.log, 29), 0.05);
}

TEST(TrainAnticipator, PseudoLabelsFromUntrainedDetector) {
  const FeatureStream s = toy_stream(7, 200);
  Rng rng(7);
  const DetectorModel det = DetectorModel::create(toy_detector(), rng);
  const auto track = label_track(s, LabelSource::Pseudo, &det, 4);
  ASSERT_EQ(track.size(), s.length());
  TrainConfig cfg = iin_defaults();
  cfg.past = 4;
  cfg.horizon = 2;
  cfg.max_batches = 3;
  const AnticipatorRun run = train_iin(cfg, toy_anticipator(), s, track);
  for (const auto& r : run.log.records) EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_THROW(label_track(s, LabelSource::Pseudo, nullptr, 4), UsageError);
}

TEST(TrainAnticipator, BitIdenticalRerunsAndStats) {
  const FeatureStream s = toy_stream(8, 200);
  TrainConfig cfg = iin_defaults();
  cfg.past = 4;
  cfg.horizon = 2;
  cfg.epochs = 2;
  cfg.seed = 8;
  const auto a = train_iin(cfg, toy_anticipator(), s, s.labels);
  const auto b = train_iin(cfg, toy_anticipator(), s, s.labels);
  EXPECT_EQ(encode_checkpoint(to_checkpoint(a.model)), encode_checkpoint(to_checkpoint(b.model)));
  EXPECT_EQ(log_text(a.log), log_text(b.log));
  // Running statistics moved away from their initial values.
  EXPECT_NE(a.model.buffers.at("G_1.mean"), Matrix(1, 8, 0.0));
}

TEST(TrainAnticipator, ConfigMismatches) {
  const FeatureStream s = toy_stream(9, 100);
  TrainConfig cfg = iin_defaults();
  cfg.horizon = 3;
  EXPECT_THROW(train_iin(cfg, toy_anticipator(), s, s.labels), UsageError);
  cfg.horizon = 2;
  const std::vector<int> short_track(s.length() - 1, 0);
  EXPECT_THROW(train_iin(cfg, toy_anticipator(), s, short_track), ShapeError);
  AnticipatorConfig wide = toy_anticipator();
  wide.num_classes = 5;
  EXPECT_THROW(train_iin(cfg, wide, s, s.labels), FormatError);
}
