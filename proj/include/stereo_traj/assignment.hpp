#pragma once

// Kuhn-Munkres (Hungarian) maximum-weight bipartite matching.

#include <Eigen/Core>

#include <algorithm>
#include <limits>
#include <utility>
#include <vector>

namespace stereo_traj {

using Match = std::pair<int, int>;  // (row, col)

/// Maximum-weight matching on a rectangular weight matrix. Pairs with a
/// weight that is not positive or below `min_weight` are gated out before
/// solving, so the result is optimal among matchings that use only admissible
/// pairs. Output is sorted by row.
///
/// O(n^3) shortest-augmenting-path formulation with row/column potentials on
/// the square zero-padded cost matrix (max_w - w). Rows are inserted in
/// ascending order and, among equal reduced costs, the lowest column wins,
/// so results are deterministic.
inline std::vector<Match> max_weight_matching(const Eigen::MatrixXd& weights,
                                              double min_weight) {
  const int rows = static_cast<int>(weights.rows());
  const int cols = static_cast<int>(weights.cols());
  if (rows == 0 || cols == 0) return {};
  const int n = std::max(rows, cols);

  auto weight = [&](int r, int c) {
    if (r >= rows || c >= cols) return 0.0;
    const double w = weights(r, c);
    return w > 0.0 && w >= min_weight ? w : 0.0;
  };
  double max_w = 0.0;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) max_w = std::max(max_w, weight(r, c));
  }
  auto cost = [&](int r, int c) { return max_w - weight(r, c); };

  constexpr double inf = std::numeric_limits<double>::infinity();
  // 1-based arrays; index 0 is the virtual root column.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> owner(n + 1, 0), way(n + 1, 0);
  std::vector<double> minv(n + 1);
  std::vector<char> used(n + 1);

  for (int i = 1; i <= n; ++i) {
    owner[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = owner[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[owner[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (owner[j0] != 0);
    do {
      const int j1 = way[j0];
      owner[j0] = owner[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<Match> out;
  for (int j = 1; j <= n; ++j) {
    const int r = owner[j] - 1;
    const int c = j - 1;
    if (r < rows && c < cols && weight(r, c) > 0.0) {
      out.emplace_back(r, c);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline double matching_weight(const Eigen::MatrixXd& weights,
                              const std::vector<Match>& matching) {
  double total = 0.0;
  for (const auto& [r, c] : matching) total += weights(r, c);
  return total;
}

}  // namespace stereo_traj
