// SPDX-License-Identifier: Apache-2.0
#include "idu/losses.hpp"

#include <string>

#include "idu/error.hpp"

namespace idu {

Matrix one_hot(std::span<const int> labels, std::size_t num_classes) {
  Matrix y(labels.size(), num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw ShapeError("label " + std::to_string(labels[i]) + " outside [0, " +
                       std::to_string(num_classes) + ")");
    }
    y(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  return y;
}

Var cross_entropy(Var p, const Matrix& y) {
  if (!p.value().same_shape(y)) throw ShapeError("cross_entropy: prediction/label shape mismatch");
  Tape& tape = *p.tape;
  Var picked = tape.log_clamped(p) * tape.constant(y);
  return tape.scale(tape.sum(picked), -1.0 / static_cast<double>(y.rows()));
}

Var loss_ee(Var p_t_e, Var p_0_e, const Matrix& y_t, const Matrix& y_0) {
  return cross_entropy(p_t_e, y_t) + cross_entropy(p_0_e, y_0);
}

Var loss_ct(Var x_t_e, Var x_0_e, std::span<const int> y_t, std::span<const int> y_0,
            double margin) {
  if (!x_t_e.value().same_shape(x_0_e.value())) throw ShapeError("loss_ct: embedding shape mismatch");
  if (y_t.size() != x_t_e.rows() || y_0.size() != x_t_e.rows()) {
    throw ShapeError("loss_ct: label count mismatch");
  }
  if (margin < 0.0) throw UsageError("loss_ct: negative margin");
  Tape& tape = *x_t_e.tape;
  const std::size_t n = y_t.size();
  Matrix same(n, 1), differ(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    (y_t[i] == y_0[i] ? same : differ)(i, 0) = 1.0;
  }
  Var diff = x_t_e - x_0_e;
  Var d2 = tape.sum_rows(diff * diff);
  Var hinge = relu(tape.add_scalar(tape.scale(d2, -1.0), margin));
  Var per_row = d2 * tape.constant(std::move(same)) + hinge * tape.constant(std::move(differ));
  return tape.scale(tape.sum(per_row), 1.0 / static_cast<double>(n));
}

Var loss_aa(std::span<const Var> q, std::span<const Matrix> future) {
  if (q.empty() || q.size() != future.size()) throw ShapeError("loss_aa: grid/label step mismatch");
  Var total = cross_entropy(q[0], future[0]);
  for (std::size_t j = 1; j < q.size(); ++j) total = total + cross_entropy(q[j], future[j]);
  return total;
}

OadLoss loss_oad(const OadTerms& terms, std::span<const std::vector<int>> labels,
                 std::size_t num_classes, double alpha, double margin) {
  const std::size_t steps = terms.p.size();
  if (steps == 0 || labels.size() != steps) throw ShapeError("loss_oad: step count mismatch");
  const bool embedded = !terms.p_e.empty();
  if (embedded && (terms.p_e.size() != steps || terms.x_e.size() != steps)) {
    throw ShapeError("loss_oad: embedding step count mismatch");
  }
  if (alpha < 0.0) throw UsageError("loss_oad: negative alpha");
  Tape& tape = *terms.p.front().tape;

  const std::vector<int>& current = labels.back();
  const Matrix y_0 = one_hot(current, num_classes);
  Var ce, ee, ct;
  for (std::size_t t = 0; t < steps; ++t) {
    const Matrix y_t = one_hot(labels[t], num_classes);
    Var ce_t = cross_entropy(terms.p[t], y_t);
    ce = t == 0 ? ce_t : ce + ce_t;
    if (!embedded) continue;
    Var ee_t = loss_ee(terms.p_e[t], terms.p_0_e, y_t, y_0);
    Var ct_t = loss_ct(terms.x_e[t], terms.x_0_e, labels[t], current, margin);
    ee = t == 0 ? ee_t : ee + ee_t;
    ct = t == 0 ? ct_t : ct + ct_t;
  }

  OadLoss out;
  out.parts.alpha = alpha;
  out.parts.margin = margin;
  out.parts.l_ce = ce.value()(0, 0);
  if (embedded) {
    out.parts.l_ee = ee.value()(0, 0);
    out.parts.l_ct = ct.value()(0, 0);
    out.total = ce + tape.scale(ee + ct, alpha);
  } else {
    out.total = ce;
  }
  out.parts.l_total = out.total.value()(0, 0);
  return out;
}

}  // namespace idu
