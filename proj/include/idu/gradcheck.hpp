// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <span>

#include "idu/matrix.hpp"
#include "idu/tape.hpp"

namespace idu {

struct GradCheckReport {
  /// max over smooth coordinates of |analytic - central| / max(1, |analytic|)
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  /// Coordinates where the one-sided differences disagree (a kink such as a
  /// hinge boundary). They are listed here and left out of max_rel_error.
  std::size_t non_smooth = 0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;

  bool passed(double tolerance = 1e-4) const { return max_rel_error < tolerance; }
};

/// Central-difference check of `analytic` against `f`, perturbing every entry
/// of every matrix in `params` in place (and restoring it). Throws
/// NumericError if two evaluations at the same point disagree.
GradCheckReport finite_diff_check(const std::function<double()>& f,
                                  std::span<Matrix* const> params,
                                  std::span<const Matrix> analytic, double step = 1e-5);

/// Records `graph` on a fresh tape with `params` bound as parameters, takes
/// the reverse-mode gradient of its scalar output and checks it.
using GraphFn = std::function<Var(Tape&, std::span<const Var>)>;
GradCheckReport check_graph_gradients(const GraphFn& graph, std::span<Matrix* const> params,
                                      double step = 1e-5);

}  // namespace idu
