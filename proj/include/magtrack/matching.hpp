/*
 * Copyright 2026 The magtrack Authors. All rights reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <utility>
#include <vector>

#include "magtrack/domain.hpp"

namespace magtrack {

struct Assignment {
  std::vector<std::pair<int, int>> matches;  // (row, col), sorted by row
  double total_log_weight = 0.0;
};

namespace detail {

// Kuhn-Munkres in the shortest-augmenting-path form, O(n^3). `cost` may hold
// +inf for forbidden pairs. Returns row -> col plus the final dual potentials.
struct KmSolution {
  std::vector<int> col_of_row;
  std::vector<double> u;  // rows, 1-based
  std::vector<double> v;  // cols, 1-based
};

inline KmSolution kuhn_munkres_min(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<double> minv(n + 1);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = kInf;
      int j1 = -1;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double c = cost(i0 - 1, j - 1);
        if (c != kInf) {
          const double cur = c - u[i0] - v[j];
          if (cur < minv[j]) {
            minv[j] = cur;
            way[j] = j0;
          }
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      if (j1 < 0) throw Error(ErrorCode::InvalidArgument, "no feasible perfect matching");
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  KmSolution out;
  out.col_of_row.assign(n, -1);
  for (int j = 1; j <= n; ++j) out.col_of_row[p[j] - 1] = j - 1;
  out.u = std::move(u);
  out.v = std::move(v);
  return out;
}

// Among all optimal matchings (perfect matchings of the equality subgraph),
// moves to the lexicographically smallest col_of_row sequence. Row r takes the
// smallest tight column it can reach through an alternating cycle over rows > r.
inline void lexicographic_canonicalize(const Eigen::MatrixXd& cost, const KmSolution& km, double tol,
                                       std::vector<int>& col_of_row) {
  const int n = static_cast<int>(cost.rows());
  auto tight = [&](int r, int c) {
    const double x = cost(r, c);
    return x != std::numeric_limits<double>::infinity() && x - km.u[r + 1] - km.v[c + 1] <= tol;
  };
  std::vector<int> row_of_col(n);
  for (int r = 0; r < n; ++r) row_of_col[col_of_row[r]] = r;
  std::vector<int> freed_by(n);  // column -> row that vacates it (-1: the root column)
  std::vector<int> takes(n);     // row -> column it moves into
  std::vector<char> in_set(n);
  std::deque<int> queue;
  for (int r = 0; r < n; ++r) {
    std::fill(in_set.begin(), in_set.end(), 0);
    const int root = col_of_row[r];
    in_set[root] = 1;
    freed_by[root] = -1;
    queue.assign(1, root);
    while (!queue.empty()) {
      const int c = queue.front();
      queue.pop_front();
      for (int x = r + 1; x < n; ++x) {
        const int cx = col_of_row[x];
        if (in_set[cx] || !tight(x, c)) continue;
        in_set[cx] = 1;
        freed_by[cx] = x;
        takes[x] = c;
        queue.push_back(cx);
      }
    }
    int best = root;
    for (int c = 0; c < root; ++c) {
      if (in_set[c] && tight(r, c)) {
        best = c;
        break;
      }
    }
    if (best == root) continue;
    int c = best;
    std::vector<std::pair<int, int>> moves{{r, best}};
    while (freed_by[c] != -1) {
      const int x = freed_by[c];
      moves.emplace_back(x, takes[x]);
      c = takes[x];
    }
    for (const auto& [row, col] : moves) {
      col_of_row[row] = col;
      row_of_col[col] = row;
    }
  }
}

}  // namespace detail

/// Perfect matching maximizing the sum of `score` over a square matrix.
///
/// Entries equal to -inf are forbidden. Among optimal matchings the
/// lexicographically smallest (row, col) sequence is returned.
inline Assignment max_weight_assignment(const Eigen::MatrixXd& score) {
  if (score.rows() != score.cols()) throw Error(ErrorCode::InvalidArgument, "score matrix must be square");
  const int n = static_cast<int>(score.rows());
  Assignment out;
  if (n == 0) return out;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  Eigen::MatrixXd cost(n, n);
  double scale = 1.0;
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const double s = score(r, c);
      if (std::isnan(s) || s == kInf) throw Error(ErrorCode::InvalidArgument, "score must be finite or -inf");
      cost(r, c) = s == -kInf ? kInf : -s;
      if (s != -kInf) scale = std::max(scale, std::abs(s));
    }
  }
  detail::KmSolution km = detail::kuhn_munkres_min(cost);
  std::vector<int> col_of_row = km.col_of_row;
  detail::lexicographic_canonicalize(cost, km, 1e-11 * scale * n, col_of_row);
  out.matches.reserve(static_cast<std::size_t>(n));
  for (int r = 0; r < n; ++r) {
    out.matches.emplace_back(r, col_of_row[r]);
    out.total_log_weight += score(r, col_of_row[r]);
  }
  return out;
}

}  // namespace magtrack
