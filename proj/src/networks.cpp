// SPDX-License-Identifier: Apache-2.0
#include "idu/networks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "idu/error.hpp"

namespace idu {

namespace {

constexpr std::size_t kInferenceBatch = 512;

std::vector<Matrix*> concat_pointers(ParamSet& a, ParamSet& b) {
  auto out = a.pointers();
  for (Matrix* p : b.pointers()) out.push_back(p);
  return out;
}

Matrix broadcast_row(const Matrix& row, std::size_t rows) {
  Matrix out(rows, row.cols());
  for (std::size_t r = 0; r < rows; ++r) std::copy(row.data().begin(), row.data().end(), out.row(r).begin());
  return out;
}

void column_stats(const Matrix& a, Matrix& mean, Matrix& var) {
  const double n = static_cast<double>(a.rows());
  mean = Matrix(1, a.cols());
  var = Matrix(1, a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < a.cols(); ++c) mean(0, c) += a(r, c);
  }
  for (double& v : mean.data()) v /= n;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < a.cols(); ++c) {
      const double d = a(r, c) - mean(0, c);
      var(0, c) += d * d;
    }
  }
  for (double& v : var.data()) v /= n;
}

Matrix stacked_one_hot(const std::vector<std::vector<int>>& labels, std::size_t classes) {
  std::vector<int> flat;
  for (const auto& step : labels) flat.insert(flat.end(), step.begin(), step.end());
  return one_hot(flat, classes);
}

void require_batch(const SequenceBatch& batch, std::size_t width) {
  if (batch.steps.empty()) throw ShapeError("empty sequence");
  for (const auto& s : batch.steps) {
    if (s.cols() != width) {
      throw ShapeError("feature width " + std::to_string(s.cols()) + " != model width " + std::to_string(width));
    }
  }
}

}  // namespace

std::vector<Var> ModelBinding::all() const {
  std::vector<Var> out(cell.vars().begin(), cell.vars().end());
  out.insert(out.end(), head.vars().begin(), head.vars().end());
  return out;
}

int argmax_row(std::span<const double> row) noexcept {
  std::size_t best = 0;
  for (std::size_t k = 1; k < row.size(); ++k) {
    if (row[k] > row[best]) best = k;
  }
  return static_cast<int>(best);
}

// --- detector ---------------------------------------------------------------

CellDims DetectorModel::cell_dims() const {
  CellDims d;
  d.input = config.feature_width;
  d.hidden = config.hidden;
  d.classes = config.num_classes;
  return d;
}

std::vector<ParamShape> DetectorModel::head_layout(const DetectorConfig& config) {
  return {{"W_hp", config.hidden, config.num_classes}};
}

DetectorModel DetectorModel::create(const DetectorConfig& config, Rng& rng) {
  if (uses_label_input(config.cell)) {
    throw UsageError(std::string(to_string(config.cell)) + " is an anticipation cell");
  }
  if (config.num_classes < 2) throw ShapeError("need at least background plus one action class");
  DetectorModel m;
  m.config = config;
  m.cell = make_cell_params(config.cell, m.cell_dims(), rng);
  m.head = init_params(head_layout(config), rng);
  return m;
}

ModelBinding bind(Tape& tape, const DetectorModel& model) {
  return {BoundParams(tape, model.cell), BoundParams(tape, model.head)};
}

std::vector<Matrix*> trainable(DetectorModel& model) { return concat_pointers(model.cell, model.head); }

DetectorForward idn_forward(const DetectorModel& model, const ModelBinding& w,
                            const SequenceBatch& batch) {
  require_batch(batch, model.config.feature_width);
  const CellKind kind = model.config.cell;
  Tape& tape = *w.head.vars().front().tape;
  const std::size_t b = batch.batch_size();

  DetectorForward out;
  Var x_0 = tape.constant(batch.steps.back());
  if (kind == CellKind::Idu) {
    IduEmbedding e0 = idu_embed(w.cell, x_0);
    out.x_0_e = e0.x_e;
    out.p_0_e = e0.p_e;
  }

  CellState state = zero_state(tape, kind, b, model.config.hidden);
  const std::size_t last = batch.steps.size() - 1;
  for (std::size_t t = 0; t <= last; ++t) {
    Var x_t = t == last ? x_0 : tape.constant(batch.steps[t]);
    DetectorStep step;
    StepInput in;
    if (kind == CellKind::Idu) {
      if (t == last) {
        step.x_e = out.x_0_e;
        step.p_e = out.p_0_e;
      } else {
        IduEmbedding e = idu_embed(w.cell, x_t);
        step.x_e = e.x_e;
        step.p_e = e.p_e;
      }
      in.x = step.x_e;
      in.x0 = out.x_0_e;
    } else {
      in.x = x_t;
      in.x0 = x_0;
    }
    StepResult r = cell_step(kind, w.cell, state, in);
    state = r.state;
    step.r = r.r;
    step.z = r.z;
    step.p = softmax_rows(matmul(state.h, w.head["W_hp"]));
    out.steps.push_back(step);
  }
  out.h_0 = state.h;
  return out;
}

OadLoss detector_loss(const DetectorModel& model, const DetectorForward& fwd,
                      const SequenceBatch& batch, double alpha, double margin) {
  OadTerms terms;
  for (const auto& s : fwd.steps) terms.p.push_back(s.p);
  if (model.config.cell == CellKind::Idu) {
    for (const auto& s : fwd.steps) {
      terms.p_e.push_back(s.p_e);
      terms.x_e.push_back(s.x_e);
    }
    terms.p_0_e = fwd.p_0_e;
    terms.x_0_e = fwd.x_0_e;
  }
  return loss_oad(terms, batch.labels, model.config.num_classes, alpha, margin);
}

Matrix predict_current(const DetectorModel& model, const SequenceBatch& batch) {
  Tape tape;
  ModelBinding w = bind(tape, model);
  return idn_forward(model, w, batch).p_0().value();
}

std::vector<int> pseudo_labels(const DetectorModel& model, const ChunkSequence& seq,
                               LabelSource source) {
  if (source == LabelSource::Oracle) return seq.labels;
  const ChunkSequence one[] = {seq};
  const SequenceBatch batch = assemble(one);
  Tape tape;
  ModelBinding w = bind(tape, model);
  DetectorForward fwd = idn_forward(model, w, batch);
  std::vector<int> out;
  for (const auto& step : fwd.steps) out.push_back(argmax_row(step.p.value().row(0)));
  return out;
}

std::vector<int> stream_pseudo_labels(const DetectorModel& model, const FeatureStream& stream,
                                      std::size_t past) {
  const WindowSet windows = make_windows(stream, past, 0);
  std::vector<int> out(stream.length());
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < windows.size(); begin += kInferenceBatch) {
    const std::size_t end = std::min(windows.size(), begin + kInferenceBatch);
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const Matrix p = predict_current(model, assemble(windows, idx));
    for (std::size_t i = 0; i < idx.size(); ++i) out[windows.positions[idx[i]]] = argmax_row(p.row(i));
  }
  return out;
}

// --- anticipator ------------------------------------------------------------

std::string_view to_string(ReductionActivation a) noexcept {
  return a == ReductionActivation::Softmax ? "softmax" : "relu";
}

ReductionActivation parse_reduction(std::string_view name) {
  if (name == "softmax") return ReductionActivation::Softmax;
  if (name == "relu") return ReductionActivation::Relu;
  throw UsageError("unknown reduction activation '" + std::string(name) + "'");
}

CellDims AnticipatorModel::cell_dims() const {
  CellDims d;
  d.hidden = config.hidden;
  d.classes = config.num_classes;
  d.integration = config.integration;
  if (uses_label_input(config.cell)) {
    d.input = config.reduced_width;
    d.label = config.label_width;
  } else {
    d.input = config.reduced_width + config.label_width;
  }
  return d;
}

std::vector<ParamShape> AnticipatorModel::head_layout(const AnticipatorConfig& c) {
  return {{"W_x", c.feature_width, c.reduced_width},
          {"G_1", c.num_classes, c.label_width},
          {"G_2", c.label_width, c.label_width},
          {"W_hq1", c.hidden, c.head_hidden1},
          {"W_hq2", c.head_hidden1, c.head_hidden2},
          {"W_hq3", c.head_hidden2, c.horizon * c.num_classes}};
}

AnticipatorModel AnticipatorModel::create(const AnticipatorConfig& config, Rng& rng) {
  if (config.horizon == 0) throw ShapeError("anticipation horizon must be positive");
  if (config.num_classes < 2) throw ShapeError("need at least background plus one action class");
  if (!(config.norm_momentum >= 0.0 && config.norm_momentum < 1.0)) {
    throw UsageError("normalization momentum must lie in [0, 1)");
  }
  AnticipatorModel m;
  m.config = config;
  m.cell = make_cell_params(config.cell, m.cell_dims(), rng);
  m.head = init_params(head_layout(config), rng);
  for (const char* layer : {"G_1", "G_2"}) {
    m.buffers.add(std::string(layer) + ".mean", Matrix(1, config.label_width, 0.0));
    m.buffers.add(std::string(layer) + ".var", Matrix(1, config.label_width, 1.0));
  }
  return m;
}

ModelBinding bind(Tape& tape, const AnticipatorModel& model) {
  return {BoundParams(tape, model.cell), BoundParams(tape, model.head)};
}

std::vector<Matrix*> trainable(AnticipatorModel& model) { return concat_pointers(model.cell, model.head); }

Var label_embed(const AnticipatorModel& model, const ModelBinding& w, Var labels, NormMode mode) {
  if (labels.cols() != model.config.num_classes) throw ShapeError("label_embed: one-hot width mismatch");
  Tape& tape = *labels.tape;
  Var a = labels;
  for (const char* layer : {"G_1", "G_2"}) {
    a = matmul(a, w.head[layer]);
    if (mode == NormMode::Train) {
      a = tape.batch_norm(a);
    } else {
      const Matrix& mean = model.buffers.at(std::string(layer) + ".mean");
      Matrix inv_std = model.buffers.at(std::string(layer) + ".var");
      for (double& v : inv_std.data()) v = 1.0 / std::sqrt(v + Tape::kNormEpsilon);
      a = (a - tape.constant(broadcast_row(mean, a.rows()))) *
          tape.constant(broadcast_row(inv_std, a.rows()));
    }
    a = relu(a);
  }
  return a;
}

void update_label_norm_stats(AnticipatorModel& model, const Matrix& labels) {
  const double m = model.config.norm_momentum;
  Matrix a = labels;
  for (const char* layer : {"G_1", "G_2"}) {
    a = matmul(a, model.head.at(layer));
    Matrix mean, var;
    column_stats(a, mean, var);
    Matrix& run_mean = model.buffers.at(std::string(layer) + ".mean");
    Matrix& run_var = model.buffers.at(std::string(layer) + ".var");
    for (std::size_t c = 0; c < mean.cols(); ++c) {
      run_mean(0, c) = m * run_mean(0, c) + (1.0 - m) * mean(0, c);
      run_var(0, c) = m * run_var(0, c) + (1.0 - m) * var(0, c);
    }
    for (std::size_t r = 0; r < a.rows(); ++r) {
      for (std::size_t c = 0; c < a.cols(); ++c) {
        const double v = (a(r, c) - mean(0, c)) / std::sqrt(var(0, c) + Tape::kNormEpsilon);
        a(r, c) = v > 0.0 ? v : 0.0;
      }
    }
  }
}

AnticipatorForward iin_forward(const AnticipatorModel& model, const ModelBinding& w,
                               const SequenceBatch& batch, NormMode mode) {
  const AnticipatorConfig& c = model.config;
  require_batch(batch, c.feature_width);
  if (batch.label_input.size() != batch.steps.size()) throw ShapeError("label track length != sequence length");
  Tape& tape = *w.head.vars().front().tape;
  const std::size_t b = batch.batch_size();
  const std::size_t steps = batch.steps.size();

  Var g_all = label_embed(model, w, tape.constant(stacked_one_hot(batch.label_input, c.num_classes)), mode);

  std::vector<Var> inputs;  // x_t, or [x_t || g_t] for single-input cells
  std::vector<Var> labels;
  for (std::size_t t = 0; t < steps; ++t) {
    Var pre = matmul(tape.constant(batch.steps[t]), w.head["W_x"]);
    Var x = c.reduction == ReductionActivation::Softmax ? softmax_rows(pre) : relu(pre);
    Var g = tape.slice_rows(g_all, t * b, (t + 1) * b);
    if (uses_label_input(c.cell)) {
      inputs.push_back(x);
      labels.push_back(g);
    } else {
      inputs.push_back(concat({x, g}));
    }
  }

  Var current = inputs.back();
  if (c.cell == CellKind::Idu) current = idu_embed(w.cell, current).x_e;

  AnticipatorForward out;
  CellState state = zero_state(tape, c.cell, b, c.hidden);
  for (std::size_t t = 0; t < steps; ++t) {
    StepInput in;
    in.x = inputs[t];
    if (c.cell == CellKind::Idu) in.x = t + 1 == steps ? current : idu_embed(w.cell, inputs[t]).x_e;
    in.x0 = current;
    if (!labels.empty()) in.g = labels[t];
    StepResult r = cell_step(c.cell, w.cell, state, in, c.integration);
    state = r.state;
    if (r.s.tape) out.s.push_back(r.s);
    if (r.f.tape) out.f.push_back(r.f);
    if (r.z.tape) out.z.push_back(r.z);
  }
  out.h_0 = state.h;

  Var hidden = relu(matmul(relu(matmul(state.h, w.head["W_hq1"])), w.head["W_hq2"]));
  Var logits = matmul(hidden, w.head["W_hq3"]);
  for (std::size_t j = 0; j < c.horizon; ++j) {
    out.q.push_back(softmax_rows(tape.slice(logits, j * c.num_classes, (j + 1) * c.num_classes)));
  }
  return out;
}

AnticipatorForward integration_ablation_forward(const AnticipatorModel& model, const ModelBinding& w,
                                                const SequenceBatch& batch, IntegrationMode mode,
                                                NormMode norm) {
  if (model.config.cell != CellKind::Iiu) throw UsageError("integration ablations need an IIU model");
  if (model.config.integration != mode) {
    throw UsageError("model was built for integration mode " + std::string(to_string(model.config.integration)) +
                     ", not " + std::string(to_string(mode)));
  }
  return iin_forward(model, w, batch, norm);
}

Var anticipator_loss(const AnticipatorModel& model, const AnticipatorForward& fwd,
                     const SequenceBatch& batch) {
  if (batch.future.size() != fwd.q.size()) throw ShapeError("anticipation targets do not match the horizon");
  std::vector<Matrix> targets;
  for (const auto& step : batch.future) targets.push_back(one_hot(step, model.config.num_classes));
  return loss_aa(fwd.q, targets);
}

std::vector<Matrix> predict_future(const AnticipatorModel& model, const SequenceBatch& batch) {
  Tape tape;
  ModelBinding w = bind(tape, model);
  AnticipatorForward fwd = iin_forward(model, w, batch, NormMode::Eval);
  std::vector<Matrix> out;
  for (Var q : fwd.q) out.push_back(q.value());
  return out;
}

}  // namespace idu
