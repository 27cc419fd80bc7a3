// SPDX-License-Identifier: Apache-2.0
#include "idu/cells.hpp"

#include <array>
#include <string>

#include "idu/error.hpp"

namespace idu {

namespace {

constexpr std::array<std::pair<CellKind, std::string_view>, 9> kKindNames{{
    {CellKind::Rnn, "rnn"},
    {CellKind::Lstm, "lstm"},
    {CellKind::Gru, "gru"},
    {CellKind::Ci, "ci"},
    {CellKind::Idu, "idu"},
    {CellKind::Iiu, "iiu"},
    {CellKind::IiuLight, "iiu-light"},
    {CellKind::GruFc1, "gru-fc1"},
    {CellKind::GruFc2, "gru-fc2"},
}};

void append_gru(std::vector<ParamShape>& out, std::size_t d, std::size_t h) {
  out.push_back({"W_hr", h, h});
  out.push_back({"W_xr", d, h});
  out.push_back({"W_xz", d, h});
  out.push_back({"W_hz", h, h});
  out.push_back({"W_x_htil", d, h});
  out.push_back({"W_htil_htil", h, h});
}

void append_integration(std::vector<ParamShape>& out, const CellDims& dims) {
  const std::size_t u = dims.hidden;
  const bool hcomb = dims.integration == IntegrationMode::Full;
  const std::size_t bar = hcomb ? 2 * u : u;  // width of x_bar and g_bar
  out.push_back({"W_x_xbar", dims.input, u});
  if (hcomb) out.push_back({"W_h_xbar", u, u});
  out.push_back({"W_g_gbar", dims.label, u});
  if (hcomb) out.push_back({"W_h_gbar", u, u});
  if (dims.integration != IntegrationMode::NoHCombNoWeighting) out.push_back({"W_s", 2 * bar, u});
  out.push_back({"W_xbar_xtil", bar, u});
  out.push_back({"W_gbar_gtil", bar, u});
}

void require_dims(CellKind kind, const CellDims& dims) {
  const std::string name(to_string(kind));
  if (dims.input == 0 || dims.hidden == 0) throw ShapeError(name + ": input and hidden widths must be positive");
  if (uses_label_input(kind) && dims.label == 0) throw ShapeError(name + ": label width must be positive");
  if (kind == CellKind::Idu && dims.classes == 0) throw ShapeError(name + ": class count must be positive");
  if (kind != CellKind::Iiu && dims.integration != IntegrationMode::Full) {
    throw ShapeError(name + ": integration ablations apply to the IIU only");
  }
}

Var blend(Var z, Var h_prev, Var candidate) {
  // (1 - z) * h_prev + z * candidate
  return one_minus(z) * h_prev + z * candidate;
}

StepResult gru_core(const BoundParams& w, const CellState& prev, Var x) {
  Var h = prev.h;
  Var r = sigmoid(matmul(h, w["W_hr"]) + matmul(x, w["W_xr"]));
  Var h_reset = r * h;
  Var z = sigmoid(matmul(x, w["W_xz"]) + matmul(h, w["W_hz"]));
  Var cand = tanh(matmul(x, w["W_x_htil"]) + matmul(h_reset, w["W_htil_htil"]));
  StepResult out;
  out.state.h = blend(z, h, cand);
  out.r = r;
  out.z = z;
  return out;
}

struct Integrated {
  Var m_x;  // weighted visual features x_tilde
  Var m_g;  // weighted label features g_tilde
  Var s;
};

Integrated integrate(const BoundParams& w, Var h, Var x, Var g, IntegrationMode mode) {
  Tape& tape = *x.tape;
  Var x_bar = matmul(x, w["W_x_xbar"]);
  Var g_bar = matmul(g, w["W_g_gbar"]);
  if (mode == IntegrationMode::Full) {
    x_bar = concat({x_bar, matmul(h, w["W_h_xbar"])});
    g_bar = concat({g_bar, matmul(h, w["W_h_gbar"])});
  }
  Var s;
  if (mode == IntegrationMode::NoHCombNoWeighting) {
    s = tape.constant(Matrix(x.rows(), h.cols(), 0.5));
  } else {
    s = sigmoid(matmul(concat({x_bar, g_bar}), w["W_s"]));
  }
  Var x_til = s * tanh(matmul(x_bar, w["W_xbar_xtil"]));
  Var g_til = one_minus(s) * tanh(matmul(g_bar, w["W_gbar_gtil"]));
  return {x_til, g_til, s};
}

}  // namespace

std::string_view to_string(CellKind kind) noexcept {
  for (const auto& [k, n] : kKindNames) {
    if (k == kind) return n;
  }
  return "?";
}

CellKind parse_cell_kind(std::string_view name) {
  for (const auto& [k, n] : kKindNames) {
    if (n == name) return k;
  }
  throw UsageError("unknown cell kind '" + std::string(name) + "'");
}

std::string_view to_string(IntegrationMode mode) noexcept {
  switch (mode) {
    case IntegrationMode::Full: return "full";
    case IntegrationMode::NoHComb: return "no-hcomb";
    case IntegrationMode::NoHCombNoWeighting: return "no-hcomb-no-weighting";
  }
  return "?";
}

IntegrationMode parse_integration_mode(std::string_view name) {
  for (auto m : {IntegrationMode::Full, IntegrationMode::NoHComb, IntegrationMode::NoHCombNoWeighting}) {
    if (to_string(m) == name) return m;
  }
  throw UsageError("unknown integration mode '" + std::string(name) + "'");
}

bool uses_label_input(CellKind kind) noexcept {
  return kind == CellKind::Iiu || kind == CellKind::IiuLight || kind == CellKind::GruFc1 ||
         kind == CellKind::GruFc2;
}

bool uses_current_input(CellKind kind) noexcept {
  return kind == CellKind::Ci || kind == CellKind::Idu;
}

bool has_update_gate(CellKind kind) noexcept {
  return kind != CellKind::Rnn && kind != CellKind::Lstm;
}

std::vector<ParamShape> cell_layout(CellKind kind, const CellDims& dims) {
  require_dims(kind, dims);
  const std::size_t d = dims.input, h = dims.hidden;
  std::vector<ParamShape> out;
  switch (kind) {
    case CellKind::Rnn:
      out = {{"W_xh", d, h}, {"W_hh", h, h}};
      break;
    case CellKind::Lstm:
      out = {{"W_xi", d, h}, {"W_hi", h, h}, {"W_xf", d, h}, {"W_hf", h, h},
             {"W_xo", d, h}, {"W_ho", h, h}, {"W_xg", d, h}, {"W_hg", h, h}};
      break;
    case CellKind::Gru:
      append_gru(out, d, h);
      break;
    case CellKind::Ci:
      out = {{"W_hr", h, h},     {"W_x0r", d, h},       {"W_xtz", d, h},
             {"W_x0z", d, h},    {"W_xt_htil", d, h},   {"W_htil_htil", h, h}};
      break;
    case CellKind::Idu:
      out = {{"W_xe", d, h},     {"W_ep", h, dims.classes}, {"W_hr", h, h},
             {"W_x0r", h, h},    {"W_xtz", h, h},           {"W_x0z", h, h},
             {"W_xt_htil", h, h}, {"W_htil_htil", h, h}};
      break;
    case CellKind::Iiu:
      append_integration(out, dims);
      out.push_back({"W_mh", 2 * h, h});
      out.push_back({"W_mf", 2 * h, h});
      out.push_back({"W_mz", 2 * h, h});
      break;
    case CellKind::IiuLight:
      append_integration(out, dims);
      out.push_back({"W_m", h, h});
      break;
    case CellKind::GruFc1: {
      const std::size_t n = dims.input + dims.label;
      for (int i = 1; i <= 6; ++i) out.push_back({"W_fc" + std::to_string(i), n, n});
      append_gru(out, n, h);
      break;
    }
    case CellKind::GruFc2: {
      const std::size_t n = dims.input + dims.label;
      out.push_back({"W_fc_x", dims.input, h});
      out.push_back({"W_fc_g", dims.label, h});
      out.push_back({"W_fc_joint", 2 * h, 2 * h});
      out.push_back({"W_fc_out", 2 * h, n});
      append_gru(out, n, h);
      break;
    }
  }
  return out;
}

ParamSet make_cell_params(CellKind kind, const CellDims& dims, Rng& rng) {
  const auto layout = cell_layout(kind, dims);
  return init_params(layout, rng);
}

std::size_t count_params(CellKind kind, const CellDims& dims) {
  const auto layout = cell_layout(kind, dims);
  return count_entries(layout);
}

std::size_t count_flops(CellKind kind, const CellDims& dims) {
  // Each weight matrix is applied exactly once per step in every variant.
  std::size_t flops = 2 * count_params(kind, dims);
  const std::size_t h = dims.hidden;
  const std::size_t n = dims.input + dims.label;
  switch (kind) {
    case CellKind::Rnn: flops += 2 * h; break;         // add, tanh
    case CellKind::Lstm: flops += 13 * h; break;       // 4 x (add, act), c update 3, h 2
    case CellKind::Gru:
    case CellKind::Ci: flops += 11 * h; break;         // r 2, reset 1, z 2, cand 2, blend 4
    case CellKind::Idu: flops += 11 * h + h + 3 * dims.classes; break;  // + relu, softmax
    case CellKind::Iiu:
      // s 1 (or 0), x_til 2, g_til 3, f 1, z 1, h 4
      flops += (dims.integration == IntegrationMode::NoHCombNoWeighting ? 11 : 12) * h;
      break;
    case CellKind::IiuLight: flops += 12 * h; break;   // s 1, x_til 2, g_til 3, sum 1, f 1, 1-f 1, h 3
    case CellKind::GruFc1: flops += 6 * n + 11 * h; break;
    case CellKind::GruFc2: flops += 4 * h + n + 11 * h; break;
  }
  return flops;
}

CellState zero_state(Tape& tape, CellKind kind, std::size_t batch, std::size_t hidden) {
  CellState s;
  s.h = tape.constant(Matrix(batch, hidden));
  if (kind == CellKind::Lstm) s.c = tape.constant(Matrix(batch, hidden));
  return s;
}

StepResult rnn_step(const BoundParams& w, const CellState& prev, Var x) {
  StepResult out;
  out.state.h = tanh(matmul(prev.h, w["W_hh"]) + matmul(x, w["W_xh"]));
  return out;
}

StepResult lstm_step(const BoundParams& w, const CellState& prev, Var x) {
  Var h = prev.h;
  Var i = sigmoid(matmul(x, w["W_xi"]) + matmul(h, w["W_hi"]));
  Var f = sigmoid(matmul(x, w["W_xf"]) + matmul(h, w["W_hf"]));
  Var o = sigmoid(matmul(x, w["W_xo"]) + matmul(h, w["W_ho"]));
  Var g = tanh(matmul(x, w["W_xg"]) + matmul(h, w["W_hg"]));
  StepResult out;
  out.state.c = f * prev.c + i * g;
  out.state.h = o * tanh(out.state.c);
  out.f = f;
  return out;
}

StepResult gru_step(const BoundParams& w, const CellState& prev, Var x) {
  return gru_core(w, prev, x);
}

StepResult ci_step(const BoundParams& w, const CellState& prev, Var x_t, Var x_0) {
  Var h = prev.h;
  Var r = sigmoid(matmul(h, w["W_hr"]) + matmul(x_0, w["W_x0r"]));
  Var h_reset = r * h;
  Var z = sigmoid(matmul(x_t, w["W_xtz"]) + matmul(x_0, w["W_x0z"]));
  Var cand = tanh(matmul(x_t, w["W_xt_htil"]) + matmul(h_reset, w["W_htil_htil"]));
  StepResult out;
  out.state.h = blend(z, h, cand);
  out.r = r;
  out.z = z;
  return out;
}

IduEmbedding idu_embed(const BoundParams& w, Var x) {
  Var x_e = relu(matmul(x, w["W_xe"]));
  return {x_e, softmax_rows(matmul(x_e, w["W_ep"]))};
}

StepResult idu_step(const BoundParams& w, const CellState& prev, Var x_t_e, Var x_0_e) {
  // Same algebra as the CI cell; the difference is that both inputs live in
  // the learned embedding space.
  return ci_step(w, prev, x_t_e, x_0_e);
}

StepResult iiu_step(const BoundParams& w, const CellState& prev, Var x, Var g,
                    IntegrationMode mode) {
  Integrated in = integrate(w, prev.h, x, g, mode);
  Var m = concat({in.m_x, in.m_g});
  Var f = sigmoid(matmul(m, w["W_mf"]));
  Var z = sigmoid(matmul(m, w["W_mz"]));
  StepResult out;
  out.state.h = f * prev.h + z * tanh(matmul(m, w["W_mh"]));
  out.s = in.s;
  out.f = f;
  out.z = z;
  return out;
}

StepResult iiu_light_step(const BoundParams& w, const CellState& prev, Var x, Var g) {
  // The update module reads the summed modalities x_til + g_til (already a
  // tanh-bounded convex mix) through one u x u projection; the forget gate
  // and update gate are coupled as f and 1 - f.
  Integrated in = integrate(w, prev.h, x, g, IntegrationMode::Full);
  Var fused = in.m_x + in.m_g;
  Var f = sigmoid(matmul(fused, w["W_m"]));
  Var z = one_minus(f);
  StepResult out;
  out.state.h = f * prev.h + z * fused;
  out.s = in.s;
  out.f = f;
  out.z = z;
  return out;
}

StepResult gru_fc1_step(const BoundParams& w, const CellState& prev, Var x, Var g) {
  Var v = concat({x, g});
  for (int i = 1; i <= 6; ++i) v = relu(matmul(v, w["W_fc" + std::to_string(i)]));
  return gru_core(w, prev, v);
}

StepResult gru_fc2_step(const BoundParams& w, const CellState& prev, Var x, Var g) {
  Var a = relu(matmul(x, w["W_fc_x"]));
  Var b = relu(matmul(g, w["W_fc_g"]));
  Var joint = relu(matmul(concat({a, b}), w["W_fc_joint"]));
  Var v = relu(matmul(joint, w["W_fc_out"]));
  return gru_core(w, prev, v);
}

StepResult cell_step(CellKind kind, const BoundParams& w, const CellState& prev,
                     const StepInput& in, IntegrationMode mode) {
  switch (kind) {
    case CellKind::Rnn: return rnn_step(w, prev, in.x);
    case CellKind::Lstm: return lstm_step(w, prev, in.x);
    case CellKind::Gru: return gru_step(w, prev, in.x);
    case CellKind::Ci: return ci_step(w, prev, in.x, in.x0);
    case CellKind::Idu: return idu_step(w, prev, in.x, in.x0);
    case CellKind::Iiu: return iiu_step(w, prev, in.x, in.g, mode);
    case CellKind::IiuLight: return iiu_light_step(w, prev, in.x, in.g);
    case CellKind::GruFc1: return gru_fc1_step(w, prev, in.x, in.g);
    case CellKind::GruFc2: return gru_fc2_step(w, prev, in.x, in.g);
  }
  throw UsageError("unknown cell kind");
}

}  // namespace idu
