// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "idu/params.hpp"
#include "idu/tape.hpp"

namespace idu {

/// Every recurrent variant the library can unroll.
enum class CellKind : std::uint8_t {
  Rnn,       // simple tanh RNN
  Lstm,      // no-peephole LSTM
  Gru,
  Ci,        // GRU whose gates also read the current chunk x_0
  Idu,       // information discrimination unit (with early embedding)
  Iiu,       // information integration unit
  IiuLight,  // IIU with a reduced update module
  GruFc1,    // six square FC layers in front of a GRU
  GruFc2,    // two-branch FC stack in front of a GRU
};

/// Integration-module ablations of the IIU. NoHComb drops the h_{t-1}
/// projections from the integrated features; NoHCombNoWeighting additionally
/// fixes the fusion score to 0.5.
enum class IntegrationMode : std::uint8_t { Full, NoHComb, NoHCombNoWeighting };

std::string_view to_string(CellKind kind) noexcept;
CellKind parse_cell_kind(std::string_view name);
std::string_view to_string(IntegrationMode mode) noexcept;
IntegrationMode parse_integration_mode(std::string_view name);

/// Widths of one cell.
///   input   - d_x for single-input cells; the visual width d_v for IIU-family
///             and GRU-FC cells
///   hidden  - h (GRU family), e (IDU), u (IIU family)
///   label   - d_g, the action-label feature width (IIU-family and GRU-FC)
///   classes - K + 1, used by the IDU early-embedding classifier
struct CellDims {
  std::size_t input = 0;
  std::size_t hidden = 0;
  std::size_t label = 0;
  std::size_t classes = 0;
  IntegrationMode integration = IntegrationMode::Full;
};

bool uses_label_input(CellKind kind) noexcept;
bool uses_current_input(CellKind kind) noexcept;
bool has_update_gate(CellKind kind) noexcept;

std::vector<ParamShape> cell_layout(CellKind kind, const CellDims& dims);
ParamSet make_cell_params(CellKind kind, const CellDims& dims, Rng& rng);

/// Exact number of weight entries.
std::size_t count_params(CellKind kind, const CellDims& dims);
/// FLOPs of one recurrent step for a single sequence: every matrix product
/// counts 2 * rows * cols (one multiply-accumulate = 2 FLOPs), every
/// elementwise add, multiply, 1 - x or activation counts 1 per element, and a
/// softmax counts 3 per element. The IDU embedding of x_0 is computed once
/// per window and is not charged to the step; the x_t embedding and its
/// classifier are.
std::size_t count_flops(CellKind kind, const CellDims& dims);

struct CellState {
  Var h;
  Var c;  // LSTM memory cell; unset otherwise
};

/// x: per-step input (x_t, or x_t^e for the IDU). x0: current-chunk input
/// (x_0, or x_0^e for the IDU). g: action-label features.
struct StepInput {
  Var x;
  Var x0;
  Var g;
};

/// New state plus the gates each cell exposes for diagnostics; gates a cell
/// does not have are left unset (tape == nullptr).
struct StepResult {
  CellState state;
  Var r;
  Var z;
  Var s;
  Var f;
};

struct IduEmbedding {
  Var x_e;
  Var p_e;
};

CellState zero_state(Tape& tape, CellKind kind, std::size_t batch, std::size_t hidden);

StepResult rnn_step(const BoundParams& w, const CellState& prev, Var x);
StepResult lstm_step(const BoundParams& w, const CellState& prev, Var x);
StepResult gru_step(const BoundParams& w, const CellState& prev, Var x);
StepResult ci_step(const BoundParams& w, const CellState& prev, Var x_t, Var x_0);
/// Early embedding shared by the x_t and x_0 paths: x_e = relu(x W_xe),
/// p_e = softmax(x_e W_ep).
IduEmbedding idu_embed(const BoundParams& w, Var x);
StepResult idu_step(const BoundParams& w, const CellState& prev, Var x_t_e, Var x_0_e);
StepResult iiu_step(const BoundParams& w, const CellState& prev, Var x, Var g,
                    IntegrationMode mode = IntegrationMode::Full);
StepResult iiu_light_step(const BoundParams& w, const CellState& prev, Var x, Var g);
StepResult gru_fc1_step(const BoundParams& w, const CellState& prev, Var x, Var g);
StepResult gru_fc2_step(const BoundParams& w, const CellState& prev, Var x, Var g);

/// Dispatches on kind. For the IDU, `in.x` and `in.x0` must already be
/// embedded.
StepResult cell_step(CellKind kind, const BoundParams& w, const CellState& prev,
                     const StepInput& in, IntegrationMode mode = IntegrationMode::Full);

}  // namespace idu
