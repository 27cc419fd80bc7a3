// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "idu/checkpoint.hpp"
#include "idu/data.hpp"
#include "idu/matrix.hpp"
#include "idu/networks.hpp"

namespace idu {

enum class OptimizerKind : std::uint8_t { Sgd, Adam };

std::string_view to_string(OptimizerKind kind) noexcept;
OptimizerKind parse_optimizer(std::string_view name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Sgd;
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// theta <- theta - lr * g
void sgd_step(std::span<Matrix* const> params, std::span<const Matrix> grads, double lr);

struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::uint64_t step = 0;
};

/// Bias-corrected Adam. Moments are allocated on the first step.
void adam_step(AdamState& state, std::span<Matrix* const> params, std::span<const Matrix> grads);

class Optimizer {
 public:
  explicit Optimizer(const OptimizerConfig& config);
  void step(std::span<Matrix* const> params, std::span<const Matrix> grads);
  std::uint64_t steps() const noexcept { return steps_; }

 private:
  OptimizerConfig config_;
  AdamState adam_;
  std::uint64_t steps_ = 0;
};

double global_norm(std::span<const Matrix> grads) noexcept;
/// Rescales `grads` to global norm `max_norm` when it is exceeded. Returns
/// true when clipping happened. max_norm <= 0 disables.
bool clip_global_norm(std::span<Matrix> grads, double max_norm);

enum class Sampling : std::uint8_t { Balanced, Shuffle };

struct TrainConfig {
  std::size_t epochs = 1;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  double alpha = 0.3;
  double margin = 1.0;
  OptimizerConfig optimizer;
  double clip_norm = 10.0;
  std::size_t past = 15;    // T
  std::size_t horizon = 8;  // T_a
  std::size_t stride = 1;
  Sampling sampling = Sampling::Balanced;
  std::size_t max_batches = 0;  // per epoch; 0 = all
  std::size_t log_every = 10;   // batches

  void validate() const;
  void write(ConfigRecord& out, std::string_view prefix = "train.") const;
};

TrainConfig idn_defaults();
TrainConfig iin_defaults();

struct LogRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss = 0.0;
  double l_ce = 0.0;
  double l_ee = 0.0;
  double l_ct = 0.0;
  double grad_norm = 0.0;
  bool clipped = false;
};

struct TrainLog {
  std::vector<LogRecord> records;
  std::size_t clipped_steps = 0;

  /// One "key=value" line per record.
  void write(std::ostream& out) const;
};

struct DetectorRun {
  DetectorModel model;
  TrainLog log;
};

struct AnticipatorRun {
  AnticipatorModel model;
  TrainLog log;
};

/// Trains a detector (IDN, or a baseline cell) under L_OAD. Alpha and margin
/// only matter for the IDU, the one cell with an early embedding.
DetectorRun train_idn(const TrainConfig& cfg, const DetectorConfig& model, const FeatureStream& data);

/// Trains an anticipator under L_AA with `label_track` as its per-chunk label
/// input (ground truth for the oracle, detector argmaxes for pseudo labels).
AnticipatorRun train_iin(const TrainConfig& cfg, const AnticipatorConfig& model, const FeatureStream& data,
                         const std::vector<int>& label_track);

/// Label track for an anticipator: ground truth, or pseudo labels from a
/// frozen detector.
std::vector<int> label_track(const FeatureStream& data, LabelSource source, const DetectorModel* detector,
                             std::size_t past);

}  // namespace idu
