// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "idu/matrix.hpp"
#include "idu/tape.hpp"

namespace idu {

/// One-hot rows (B x num_classes) for integer labels; index 0 is background.
Matrix one_hot(std::span<const int> labels, std::size_t num_classes);

// All batched losses reduce with a mean over the batch (rows); sums over
// time steps are left to the caller. Probabilities go through log(max(p,
// 1e-12)).

/// mean_b  -sum_k y_bk log p_bk
Var cross_entropy(Var p, const Matrix& y);
/// cross_entropy(p_t_e, y_t) + cross_entropy(p_0_e, y_0)
Var loss_ee(Var p_t_e, Var p_0_e, const Matrix& y_t, const Matrix& y_0);
/// Margin contrastive loss on embedding pairs: D^2 for rows whose labels
/// agree, max(0, m - D^2) otherwise. At D^2 == m the subgradient is 0.
Var loss_ct(Var x_t_e, Var x_0_e, std::span<const int> y_t, std::span<const int> y_0,
            double margin);
/// sum over anticipation steps of cross_entropy(q_j, y_j)
Var loss_aa(std::span<const Var> q, std::span<const Matrix> future);

struct LossBreakdown {
  double l_ce = 0.0;
  double l_ee = 0.0;
  double l_ct = 0.0;
  double l_total = 0.0;
  double alpha = 0.0;
  double margin = 0.0;
};

/// Per-step inputs of the online-detection objective, ordered oldest first
/// (t = -T .. 0). p_e/x_e may be empty for cells without early embedding;
/// then only l_ce contributes.
struct OadTerms {
  std::vector<Var> p;
  std::vector<Var> p_e;
  std::vector<Var> x_e;
  Var p_0_e;
  Var x_0_e;
};

struct OadLoss {
  Var total;
  LossBreakdown parts;
};

/// l_total = l_ce + alpha * (l_ee + l_ct). `labels[t]` holds the batch's
/// labels at step t; the last entry is the current chunk.
OadLoss loss_oad(const OadTerms& terms, std::span<const std::vector<int>> labels,
                 std::size_t num_classes, double alpha, double margin);

}  // namespace idu
