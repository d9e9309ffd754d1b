#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <vector>

#include "cma/error.hpp"

namespace cma {

/// Rank-sum AUC: P(score of random positive > score of random negative), ties
/// counting one half. Tied scores share their average rank.
inline double auc_roc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw MetricError("scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double pos_rank_sum = 0;  // ranks doubled to stay integral
  std::size_t n_pos = 0, n_neg = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double twice_avg_rank = static_cast<double>(i + 1 + j);  // 2 * (i+1 + j)/2
    for (std::size_t k = i; k < j; ++k) {
      const int l = labels[order[k]];
      if (l != 0 && l != 1) throw MetricError("labels must be 0 or 1");
      if (l == 1) {
        pos_rank_sum += twice_avg_rank;
        ++n_pos;
      } else {
        ++n_neg;
      }
    }
    i = j;
  }
  if (n_pos == 0 || n_neg == 0) throw MetricError("AUC needs both classes");
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (pos_rank_sum / 2 - np * (np + 1) / 2) / (np * nn);
}

}  // namespace cma
