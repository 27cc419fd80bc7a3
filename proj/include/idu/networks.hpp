// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "idu/cells.hpp"
#include "idu/data.hpp"
#include "idu/losses.hpp"
#include "idu/params.hpp"
#include "idu/tape.hpp"

namespace idu {

/// A model's weights recorded on a tape: the cell's and everything else.
struct ModelBinding {
  BoundParams cell;
  BoundParams head;

  /// Cell vars followed by head vars; the order of trainable().
  std::vector<Var> all() const;
};

// ---------------------------------------------------------------------------
// Online detection: a recurrent cell unrolled over t = -T .. 0 with a shared
// classification head W_hp applied at every step. With the IDU cell this is
// the IDN; rnn/lstm/gru/ci give the ablation baselines.

struct DetectorConfig {
  CellKind cell = CellKind::Idu;
  std::size_t feature_width = 3072;  // d_x
  std::size_t hidden = 512;          // e (IDU) or h
  std::size_t num_classes = 21;      // K + 1
};

struct DetectorModel {
  DetectorConfig config;
  ParamSet cell;
  ParamSet head;  // W_hp

  static DetectorModel create(const DetectorConfig& config, Rng& rng);
  static std::vector<ParamShape> head_layout(const DetectorConfig& config);
  CellDims cell_dims() const;
};

struct DetectorStep {
  Var p;    // softmax(h_t W_hp)
  Var p_e;  // IDU only
  Var x_e;  // IDU only
  Var r;
  Var z;
};

struct DetectorForward {
  std::vector<DetectorStep> steps;  // oldest first; back() is t = 0
  Var x_0_e;
  Var p_0_e;
  Var h_0;

  Var p_0() const { return steps.back().p; }
};

/// Unrolls from a zero state. The current chunk x_0 is embedded once and
/// reused by every step.
ModelBinding bind(Tape& tape, const DetectorModel& model);
std::vector<Matrix*> trainable(DetectorModel& model);

DetectorForward idn_forward(const DetectorModel& model, const ModelBinding& w,
                            const SequenceBatch& batch);
OadLoss detector_loss(const DetectorModel& model, const DetectorForward& fwd,
                      const SequenceBatch& batch, double alpha, double margin);

/// p_0 for every window in the batch (B x (K + 1)).
Matrix predict_current(const DetectorModel& model, const SequenceBatch& batch);

/// Argmax with ties to the lowest class index.
int argmax_row(std::span<const double> row) noexcept;

enum class LabelSource : std::uint8_t { Pseudo, Oracle };

/// Per-step labels for one window: argmax of p_t (Pseudo) or the ground
/// truth (Oracle).
std::vector<int> pseudo_labels(const DetectorModel& model, const ChunkSequence& seq,
                               LabelSource source = LabelSource::Pseudo);

/// Per-chunk pseudo labels for a whole stream, each chunk labelled by the
/// argmax of p_0 of the window that ends at it (online: no future chunks).
std::vector<int> stream_pseudo_labels(const DetectorModel& model, const FeatureStream& stream,
                                      std::size_t past);

// ---------------------------------------------------------------------------
// Anticipation: dimension reduction x_t = act(W_x feature_t), label features
// g_t = G(y_t), a recurrent cell, and a three-layer head predicting T_a
// future class distributions from h_0. With the IIU cell this is the IIN.

enum class ReductionActivation : std::uint8_t { Softmax, Relu };

std::string_view to_string(ReductionActivation a) noexcept;
ReductionActivation parse_reduction(std::string_view name);

struct AnticipatorConfig {
  CellKind cell = CellKind::Iiu;
  IntegrationMode integration = IntegrationMode::Full;
  std::size_t feature_width = 3072;  // d_x
  std::size_t reduced_width = 2048;  // d_v
  std::size_t label_width = 128;     // d_g
  std::size_t hidden = 2048;         // u
  std::size_t num_classes = 21;      // K + 1
  std::size_t horizon = 8;           // T_a
  std::size_t head_hidden1 = 1024;
  std::size_t head_hidden2 = 2048;
  ReductionActivation reduction = ReductionActivation::Softmax;
  double norm_momentum = 0.9;
};

struct AnticipatorModel {
  AnticipatorConfig config;
  ParamSet cell;
  ParamSet head;     // W_x, G_1, G_2, W_hq1, W_hq2, W_hq3
  ParamSet buffers;  // running mean/variance of the label-embedding normalizers

  static AnticipatorModel create(const AnticipatorConfig& config, Rng& rng);
  static std::vector<ParamShape> head_layout(const AnticipatorConfig& config);
  CellDims cell_dims() const;
};

enum class NormMode : std::uint8_t { Train, Eval };

/// Label feature extractor G: two bias-free linear layers, each followed by
/// normalization (batch statistics in Train mode, running statistics in
/// Eval mode) and relu. `labels` is a stack of one-hot rows.
ModelBinding bind(Tape& tape, const AnticipatorModel& model);
std::vector<Matrix*> trainable(AnticipatorModel& model);

Var label_embed(const AnticipatorModel& model, const ModelBinding& w, Var labels, NormMode mode);
/// Running-statistics update from the current batch of one-hot rows.
void update_label_norm_stats(AnticipatorModel& model, const Matrix& labels);

struct AnticipatorForward {
  std::vector<Var> q;  // T_a entries of B x (K + 1)
  Var h_0;
  std::vector<Var> s, f, z;  // per step, when the cell has them
};

/// Unrolls over the batch's `label_input` track from a zero state.
AnticipatorForward iin_forward(const AnticipatorModel& model, const ModelBinding& w,
                               const SequenceBatch& batch, NormMode mode);
/// iin_forward for a model built with a given integration ablation; the
/// mode must match the model's layout.
AnticipatorForward integration_ablation_forward(const AnticipatorModel& model, const ModelBinding& w,
                                                const SequenceBatch& batch, IntegrationMode mode,
                                                NormMode norm);
Var anticipator_loss(const AnticipatorModel& model, const AnticipatorForward& fwd,
                     const SequenceBatch& batch);

/// Eval-mode anticipation grids: T_a matrices of B x (K + 1).
std::vector<Matrix> predict_future(const AnticipatorModel& model, const SequenceBatch& batch);

}  // namespace idu
