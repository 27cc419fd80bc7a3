// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

#include "idu/matrix.hpp"

namespace idu {

class Tape;

/// Handle to a value recorded on a Tape. References returned by value() stay
/// valid only until the next operation is recorded on the same tape.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

enum class Op : std::uint8_t {
  Constant,
  Parameter,
  MatMul,
  Add,
  Sub,
  Mul,
  Scale,
  AddScalar,
  Concat,
  Slice,
  SliceRows,
  Sigmoid,
  Tanh,
  Relu,
  SoftmaxRows,
  LogClamped,
  Sum,
  SumRows,
  BatchNorm,
};

/// Reverse-mode differentiation over a fixed primitive set.
///
/// Nodes are appended in evaluation order, so the record is topologically
/// sorted by construction. Parameters are borrowed, not copied: the matrices
/// passed to parameter() must outlive the tape. A tape is single-writer.
class Tape {
 public:
  static constexpr double kLogFloor = 1e-12;
  static constexpr double kNormEpsilon = 1e-5;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var parameter(const Matrix& value);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var add_scalar(Var a, double s);
  Var concat(std::span<const Var> parts);
  Var slice(Var a, std::size_t begin, std::size_t end);
  Var slice_rows(Var a, std::size_t begin, std::size_t end);
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var relu(Var a);
  Var softmax_rows(Var a);
  /// log(max(x, kLogFloor)); the gradient is zero where the floor is active.
  Var log_clamped(Var a);
  Var sum(Var a);
  Var sum_rows(Var a);
  /// Column-wise standardization with statistics of the current batch (biased
  /// variance, epsilon kNormEpsilon). No affine parameters.
  Var batch_norm(Var a);

  /// Reverse sweep from a 1x1 output. Gradients of earlier sweeps are reset.
  void backward(Var output);
  /// Gradient of the last backward() with respect to v; zeros if v did not
  /// influence the output.
  Matrix gradient(Var v) const;

  /// Re-evaluates every recorded node from its operands and reports whether
  /// all outputs match the recorded values bit for bit.
  bool replay_matches() const;

  const Matrix& value(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }
  Op op(Var v) const { return nodes_[v.id].op; }
  void clear() noexcept;

 private:
  struct Node {
    Op op = Op::Constant;
    std::vector<std::uint32_t> inputs;
    double scalar = 0.0;
    std::size_t begin = 0;
    std::size_t end = 0;
    Matrix owned;
    const Matrix* borrowed = nullptr;
    bool needs_grad = false;

    const Matrix& value() const { return borrowed ? *borrowed : owned; }
  };

  Var record(Node node);
  Matrix evaluate(const Node& node) const;
  const Matrix& in(const Node& node, std::size_t i) const { return nodes_[node.inputs[i]].value(); }
  void check_owner(Var v) const;
  void propagate(std::uint32_t id);
  Matrix& grad_slot(std::uint32_t id);

  std::vector<Node> nodes_;
  std::vector<Matrix> grads_;
};

inline Var operator+(Var a, Var b) { return a.tape->add(a, b); }
inline Var operator-(Var a, Var b) { return a.tape->sub(a, b); }
/// Elementwise product.
inline Var operator*(Var a, Var b) { return a.tape->mul(a, b); }
inline Var operator*(double s, Var a) { return a.tape->scale(a, s); }
inline Var matmul(Var a, Var b) { return a.tape->matmul(a, b); }
inline Var sigmoid(Var a) { return a.tape->sigmoid(a); }
inline Var tanh(Var a) { return a.tape->tanh(a); }
inline Var relu(Var a) { return a.tape->relu(a); }
inline Var softmax_rows(Var a) { return a.tape->softmax_rows(a); }
inline Var one_minus(Var a) { return a.tape->add_scalar(a.tape->scale(a, -1.0), 1.0); }
Var concat(std::initializer_list<Var> parts);

}  // namespace idu
