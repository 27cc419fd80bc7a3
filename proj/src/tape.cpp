// SPDX-License-Identifier: Apache-2.0
#include "idu/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "idu/error.hpp"

namespace idu {

namespace {

std::string dims(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same(const Matrix& a, const Matrix& b, const char* what) {
  if (!a.same_shape(b)) throw ShapeError(std::string(what) + ": " + dims(a) + " vs " + dims(b));
}

}  // namespace

const Matrix& Var::value() const { return tape->value(*this); }

Var concat(std::initializer_list<Var> parts) {
  if (parts.size() == 0) throw ShapeError("concat of nothing");
  return parts.begin()->tape->concat(std::span<const Var>(parts.begin(), parts.size()));
}

const Matrix& Tape::value(Var v) const {
  check_owner(v);
  return nodes_[v.id].value();
}

void Tape::check_owner(Var v) const {
  if (v.tape != this || v.id >= nodes_.size()) throw UsageError("variable does not belong to this tape");
}

void Tape::clear() noexcept {
  nodes_.clear();
  grads_.clear();
}

Var Tape::record(Node node) {
  for (auto i : node.inputs) node.needs_grad = node.needs_grad || nodes_[i].needs_grad;
  node.owned = evaluate(node);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::constant(Matrix value) {
  Node n;
  n.op = Op::Constant;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::parameter(const Matrix& value) {
  Node n;
  n.op = Op::Parameter;
  n.borrowed = &value;
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::matmul(Var a, Var b) {
  check_owner(a);
  check_owner(b);
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + dims(a.value()) + " times " + dims(b.value()));
  }
  Node n;
  n.op = Op::MatMul;
  n.inputs = {a.id, b.id};
  return record(std::move(n));
}

Var Tape::add(Var a, Var b) {
  check_owner(a);
  check_owner(b);
  require_same(a.value(), b.value(), "add");
  Node n;
  n.op = Op::Add;
  n.inputs = {a.id, b.id};
  return record(std::move(n));
}

Var Tape::sub(Var a, Var b) {
  check_owner(a);
  check_owner(b);
  require_same(a.value(), b.value(), "sub");
  Node n;
  n.op = Op::Sub;
  n.inputs = {a.id, b.id};
  return record(std::move(n));
}

Var Tape::mul(Var a, Var b) {
  check_owner(a);
  check_owner(b);
  require_same(a.value(), b.value(), "mul");
  Node n;
  n.op = Op::Mul;
  n.inputs = {a.id, b.id};
  return record(std::move(n));
}

Var Tape::scale(Var a, double s) {
  check_owner(a);
  Node n;
  n.op = Op::Scale;
  n.inputs = {a.id};
  n.scalar = s;
  return record(std::move(n));
}

Var Tape::add_scalar(Var a, double s) {
  check_owner(a);
  Node n;
  n.op = Op::AddScalar;
  n.inputs = {a.id};
  n.scalar = s;
  return record(std::move(n));
}

Var Tape::concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat of nothing");
  Node n;
  n.op = Op::Concat;
  const std::size_t rows = parts.front().rows();
  for (const Var& p : parts) {
    check_owner(p);
    if (p.rows() != rows) throw ShapeError("concat: row count mismatch");
    n.inputs.push_back(p.id);
  }
  return record(std::move(n));
}

Var Tape::slice(Var a, std::size_t begin, std::size_t end) {
  check_owner(a);
  if (begin > end || end > a.cols()) throw ShapeError("slice: column range out of bounds");
  Node n;
  n.op = Op::Slice;
  n.inputs = {a.id};
  n.begin = begin;
  n.end = end;
  return record(std::move(n));
}

Var Tape::slice_rows(Var a, std::size_t begin, std::size_t end) {
  check_owner(a);
  if (begin > end || end > a.rows()) throw ShapeError("slice_rows: row range out of bounds");
  Node n;
  n.op = Op::SliceRows;
  n.inputs = {a.id};
  n.begin = begin;
  n.end = end;
  return record(std::move(n));
}

#define IDU_UNARY(method, opcode)  \
  Var Tape::method(Var a) {        \
    check_owner(a);                \
    Node n;                        \
    n.op = opcode;                 \
    n.inputs = {a.id};             \
    return record(std::move(n));   \
  }

IDU_UNARY(sigmoid, Op::Sigmoid)
IDU_UNARY(tanh, Op::Tanh)
IDU_UNARY(relu, Op::Relu)
IDU_UNARY(softmax_rows, Op::SoftmaxRows)
IDU_UNARY(log_clamped, Op::LogClamped)
IDU_UNARY(sum, Op::Sum)
IDU_UNARY(sum_rows, Op::SumRows)
IDU_UNARY(batch_norm, Op::BatchNorm)

#undef IDU_UNARY

Matrix Tape::evaluate(const Node& node) const {
  switch (node.op) {
    case Op::Constant:
    case Op::Parameter:
      return node.value();
    case Op::MatMul: {
      Matrix out(in(node, 0).rows(), in(node, 1).cols());
      matmul_into(in(node, 0), in(node, 1), out);
      return out;
    }
    case Op::Add:
    case Op::Sub:
    case Op::Mul: {
      const Matrix& a = in(node, 0);
      const Matrix& b = in(node, 1);
      Matrix out(a.rows(), a.cols());
      auto o = out.data();
      auto pa = a.data();
      auto pb = b.data();
      if (node.op == Op::Add) {
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = pa[i] + pb[i];
      } else if (node.op == Op::Sub) {
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = pa[i] - pb[i];
      } else {
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = pa[i] * pb[i];
      }
      return out;
    }
    case Op::Scale:
    case Op::AddScalar: {
      Matrix out = in(node, 0);
      for (double& v : out.data()) v = node.op == Op::Scale ? v * node.scalar : v + node.scalar;
      return out;
    }
    case Op::Concat: {
      std::size_t cols = 0;
      for (std::size_t i = 0; i < node.inputs.size(); ++i) cols += in(node, i).cols();
      const std::size_t rows = in(node, 0).rows();
      Matrix out(rows, cols);
      std::size_t offset = 0;
      for (std::size_t i = 0; i < node.inputs.size(); ++i) {
        const Matrix& part = in(node, i);
        for (std::size_t r = 0; r < rows; ++r) {
          std::copy(part.row(r).begin(), part.row(r).end(), out.row(r).begin() + offset);
        }
        offset += part.cols();
      }
      return out;
    }
    case Op::Slice: {
      const Matrix& a = in(node, 0);
      Matrix out(a.rows(), node.end - node.begin);
      for (std::size_t r = 0; r < a.rows(); ++r) {
        auto src = a.row(r).subspan(node.begin, node.end - node.begin);
        std::copy(src.begin(), src.end(), out.row(r).begin());
      }
      return out;
    }
    case Op::SliceRows: {
      const Matrix& a = in(node, 0);
      Matrix out(node.end - node.begin, a.cols());
      auto src = a.data().subspan(node.begin * a.cols(), out.size());
      std::copy(src.begin(), src.end(), out.data().begin());
      return out;
    }
    case Op::Sigmoid:
      return activate(in(node, 0), Activation::Sigmoid);
    case Op::Tanh:
      return activate(in(node, 0), Activation::Tanh);
    case Op::Relu:
      return activate(in(node, 0), Activation::Relu);
    case Op::SoftmaxRows:
      return activate(in(node, 0), Activation::SoftmaxRows);
    case Op::LogClamped: {
      Matrix out = in(node, 0);
      for (double& v : out.data()) v = std::log(std::max(v, kLogFloor));
      return out;
    }
    case Op::Sum: {
      double total = 0.0;
      for (double v : in(node, 0).data()) total += v;
      return Matrix(1, 1, total);
    }
    case Op::SumRows: {
      const Matrix& a = in(node, 0);
      Matrix out(a.rows(), 1);
      for (std::size_t r = 0; r < a.rows(); ++r) {
        double total = 0.0;
        for (double v : a.row(r)) total += v;
        out(r, 0) = total;
      }
      return out;
    }
    case Op::BatchNorm: {
      const Matrix& a = in(node, 0);
      const std::size_t n = a.rows();
      if (n == 0) throw ShapeError("batch_norm over an empty batch");
      Matrix out(a.rows(), a.cols());
      for (std::size_t c = 0; c < a.cols(); ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < n; ++r) mean += a(r, c);
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t r = 0; r < n; ++r) var += (a(r, c) - mean) * (a(r, c) - mean);
        var /= static_cast<double>(n);
        const double inv_std = 1.0 / std::sqrt(var + kNormEpsilon);
        for (std::size_t r = 0; r < n; ++r) out(r, c) = (a(r, c) - mean) * inv_std;
      }
      return out;
    }
  }
  throw UsageError("unknown tape op");
}

Matrix& Tape::grad_slot(std::uint32_t id) {
  Matrix& g = grads_[id];
  if (g.empty() && nodes_[id].value().size() != 0) {
    g = Matrix(nodes_[id].value().rows(), nodes_[id].value().cols());
  }
  return g;
}

void Tape::backward(Var output) {
  check_owner(output);
  const Matrix& out = output.value();
  if (out.rows() != 1 || out.cols() != 1) {
    throw ShapeError("backward requires a 1x1 output, got " + dims(out));
  }
  grads_.assign(nodes_.size(), Matrix());
  grads_[output.id] = Matrix(1, 1, 1.0);
  for (std::uint32_t id = output.id + 1; id-- > 0;) {
    if (!nodes_[id].needs_grad || grads_[id].empty()) continue;
    propagate(id);
  }
}

void Tape::propagate(std::uint32_t id) {
  const Node& node = nodes_[id];
  const Matrix& g = grads_[id];
  const Matrix& y = node.value();
  auto wants = [&](std::size_t i) { return nodes_[node.inputs[i]].needs_grad; };
  auto slot = [&](std::size_t i) -> Matrix& { return grad_slot(node.inputs[i]); };

  switch (node.op) {
    case Op::Constant:
    case Op::Parameter:
      return;
    case Op::MatMul:
      if (wants(0)) matmul_nt_acc(g, in(node, 1), slot(0));
      if (wants(1)) matmul_tn_acc(in(node, 0), g, slot(1));
      return;
    case Op::Add:
    case Op::Sub:
      for (std::size_t k = 0; k < 2; ++k) {
        if (!wants(k)) continue;
        const double sign = (node.op == Op::Sub && k == 1) ? -1.0 : 1.0;
        auto d = slot(k).data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += sign * g.data()[i];
      }
      return;
    case Op::Mul:
      for (std::size_t k = 0; k < 2; ++k) {
        if (!wants(k)) continue;
        auto other = in(node, 1 - k).data();
        auto d = slot(k).data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g.data()[i] * other[i];
      }
      return;
    case Op::Scale:
    case Op::AddScalar: {
      if (!wants(0)) return;
      const double s = node.op == Op::Scale ? node.scalar : 1.0;
      auto d = slot(0).data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * g.data()[i];
      return;
    }
    case Op::Concat: {
      std::size_t offset = 0;
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        const std::size_t width = in(node, k).cols();
        if (wants(k)) {
          Matrix& d = slot(k);
          for (std::size_t r = 0; r < g.rows(); ++r) {
            for (std::size_t c = 0; c < width; ++c) d(r, c) += g(r, offset + c);
          }
        }
        offset += width;
      }
      return;
    }
    case Op::Slice: {
      if (!wants(0)) return;
      Matrix& d = slot(0);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < g.cols(); ++c) d(r, node.begin + c) += g(r, c);
      }
      return;
    }
    case Op::SliceRows: {
      if (!wants(0)) return;
      auto d = slot(0).data().subspan(node.begin * g.cols(), g.size());
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g.data()[i];
      return;
    }
    case Op::Sigmoid:
    case Op::Tanh:
    case Op::Relu:
    case Op::LogClamped: {
      if (!wants(0)) return;
      auto d = slot(0).data();
      auto yv = y.data();
      auto xv = in(node, 0).data();
      auto gv = g.data();
      for (std::size_t i = 0; i < d.size(); ++i) {
        switch (node.op) {
          case Op::Sigmoid: d[i] += gv[i] * yv[i] * (1.0 - yv[i]); break;
          case Op::Tanh: d[i] += gv[i] * (1.0 - yv[i] * yv[i]); break;
          case Op::Relu: d[i] += xv[i] > 0.0 ? gv[i] : 0.0; break;
          default: d[i] += xv[i] > kLogFloor ? gv[i] / xv[i] : 0.0; break;
        }
      }
      return;
    }
    case Op::SoftmaxRows: {
      if (!wants(0)) return;
      Matrix& d = slot(0);
      for (std::size_t r = 0; r < y.rows(); ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
        for (std::size_t c = 0; c < y.cols(); ++c) d(r, c) += y(r, c) * (g(r, c) - dot);
      }
      return;
    }
    case Op::Sum: {
      if (!wants(0)) return;
      for (double& v : slot(0).data()) v += g(0, 0);
      return;
    }
    case Op::SumRows: {
      if (!wants(0)) return;
      Matrix& d = slot(0);
      for (std::size_t r = 0; r < d.rows(); ++r) {
        for (std::size_t c = 0; c < d.cols(); ++c) d(r, c) += g(r, 0);
      }
      return;
    }
    case Op::BatchNorm: {
      if (!wants(0)) return;
      const Matrix& x = in(node, 0);
      Matrix& d = slot(0);
      const std::size_t n = x.rows();
      const double nd = static_cast<double>(n);
      for (std::size_t c = 0; c < x.cols(); ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < n; ++r) mean += x(r, c);
        mean /= nd;
        double var = 0.0;
        for (std::size_t r = 0; r < n; ++r) var += (x(r, c) - mean) * (x(r, c) - mean);
        var /= nd;
        const double inv_std = 1.0 / std::sqrt(var + kNormEpsilon);
        double sum_g = 0.0, sum_gy = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
          sum_g += g(r, c);
          sum_gy += g(r, c) * y(r, c);
        }
        for (std::size_t r = 0; r < n; ++r) {
          d(r, c) += inv_std / nd * (nd * g(r, c) - sum_g - y(r, c) * sum_gy);
        }
      }
      return;
    }
  }
}

Matrix Tape::gradient(Var v) const {
  check_owner(v);
  if (v.id < grads_.size() && !grads_[v.id].empty()) return grads_[v.id];
  return Matrix(v.rows(), v.cols());
}

bool Tape::replay_matches() const {
  for (const Node& node : nodes_) {
    if (node.op == Op::Constant || node.op == Op::Parameter) continue;
    if (!(evaluate(node) == node.value())) return false;
  }
  return true;
}

}  // namespace idu
