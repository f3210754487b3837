// tests/oracles.hpp

// Copyright 2026  The msce-scr Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef MSCE_TESTS_ORACLES_HPP_
#define MSCE_TESTS_ORACLES_HPP_

// Slow reference implementations. None of them shares code with the library
// beyond Matrix, Rng and the config structs they read.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "msce/graph.hpp"
#include "msce/model.hpp"
#include "msce/numerics.hpp"

namespace msce::oracle {

/// Random T x U table of normalized log-probabilities.
inline Matrix random_log_posteriors(std::size_t T, std::size_t U, Rng &rng, double spread = 2.0) {
  Matrix m(T, U);
  for (std::size_t t = 0; t < T; ++t) {
    double z = 0.0;
    std::vector<double> e(U);
    for (auto &v : e) {
      v = std::exp(spread * rng.gaussian());
      z += v;
    }
    for (std::size_t u = 0; u < U; ++u) m(t, u) = std::log(e[u] / z);
  }
  return m;
}

/// CTC negative log-likelihood by enumerating all U^T frame labelings,
/// collapsing repeats, removing blanks and summing the matching ones.
/// Returns +inf when no path collapses to the label.
inline double ctc_nll_brute_force(const Matrix &log_post, const std::vector<int> &label) {
  const std::size_t T = log_post.rows(), U = log_post.cols();
  const int blank = static_cast<int>(U) - 1;
  std::vector<int> path(T, 0);
  double total = 0.0;
  for (;;) {
    std::vector<int> collapsed;
    int prev = -1;
    for (int u : path) {
      if (u != prev && u != blank) collapsed.push_back(u);
      prev = u;
    }
    if (collapsed == label) {
      double lp = 0.0;
      for (std::size_t t = 0; t < T; ++t) lp += log_post(t, static_cast<std::size_t>(path[t]));
      total += std::exp(lp);
    }
    std::size_t i = 0;
    while (i < T && ++path[i] == static_cast<int>(U)) path[i++] = 0;
    if (i == T) break;
  }
  return total > 0.0 ? -std::log(total) : std::numeric_limits<double>::infinity();
}

/// Edit distance from the full (|a|+1) x (|b|+1) table.
template <typename T>
std::size_t edit_distance_table(const std::vector<T> &a, const std::vector<T> &b) {
  std::vector<std::vector<std::size_t>> d(a.size() + 1, std::vector<std::size_t>(b.size() + 1));
  for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i)
    for (std::size_t j = 1; j <= b.size(); ++j)
      d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1,
                          d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0u : 1u)});
  return d[a.size()][b.size()];
}

/// Input frames that can influence output frame 0, found by walking every
/// tap of every block backwards from the output.
inline std::pair<int, int> receptive_field_by_propagation(const ModelConfig &c) {
  std::set<int> frames = {0};
  for (int b = c.num_blocks - 1; b >= 0; --b) {
    std::set<int> next;
    const int d = c.dilations[static_cast<std::size_t>(b)];
    const int K = c.kernel_size;
    for (int f : frames)
      for (int k = 0; k < K; ++k) {
        const int off = c.is_causal(b) ? -(K - 1 - k) * d : (k - (K - 1) / 2) * d;
        next.insert(f + off);
      }
    frames = std::move(next);
  }
  return {-*frames.begin(), *frames.rbegin()};
}

struct OracleFinal {
  int command = -1;
  double score = 0.0;  // average per state
};

/// Best-scoring complete alignment of each command ending at every frame,
/// computed one command at a time with no sharing between commands. A
/// command may start at any frame, the frames before it scored as blank;
/// each state is held for one or more frames, the first frame scored by the
/// state and repeats by the state or, with absorption, by the better of state
/// and blank. Returns, per frame, the best command by average score (ties to
/// the smaller id).
inline std::vector<std::optional<OracleFinal>> best_finals_per_frame(
    const std::vector<std::vector<int>> &commands, const Matrix &log_post, bool blank_absorb) {
  const std::size_t T = log_post.rows();
  const std::size_t blank = log_post.cols() - 1;
  const double none = -std::numeric_limits<double>::infinity();
  std::vector<std::optional<OracleFinal>> out(T);
  for (std::size_t c = 0; c < commands.size(); ++c) {
    const auto &s = commands[c];
    const std::size_t n = s.size();
    std::vector<double> prev(n, none), cur(n, none);
    double waited = 0.0;  // blank score of frames 0 .. t-1
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t j = 0; j < n; ++j) {
        const auto st = static_cast<std::size_t>(s[j]);
        double stay = log_post(t, st);
        if (blank_absorb) stay = std::max(stay, log_post(t, blank));
        double best = none;
        if (prev[j] != none) best = prev[j] + stay;
        const double enter_from = j == 0 ? waited : prev[j - 1];
        if (enter_from != none) best = std::max(best, enter_from + log_post(t, st));
        cur[j] = best;
      }
      if (cur[n - 1] != none) {
        const double avg = cur[n - 1] / static_cast<double>(n);
        auto &o = out[t];
        if (!o || avg > o->score || (avg == o->score && static_cast<int>(c) < o->command))
          o = OracleFinal{static_cast<int>(c), avg};
      }
      std::swap(prev, cur);
      waited += log_post(t, blank);
    }
  }
  return out;
}

/// Random prefix-free set of state sequences over `num_states` states.
inline std::vector<std::vector<int>> random_prefix_free_commands(Rng &rng, int count, int num_states,
                                                                 int min_len, int max_len) {
  std::vector<std::vector<int>> out;
  int attempts = 0;
  while (static_cast<int>(out.size()) < count && attempts++ < 10000) {
    std::vector<int> seq(static_cast<std::size_t>(rng.uniform_int(min_len, max_len)));
    for (auto &v : seq) v = rng.uniform_int(0, num_states - 1);
    bool ok = true;
    for (const auto &o : out) {
      const std::size_t m = std::min(o.size(), seq.size());
      if (std::equal(o.begin(), o.begin() + static_cast<std::ptrdiff_t>(m), seq.begin())) {
        ok = false;
        break;
      }
    }
    if (ok) out.push_back(std::move(seq));
  }
  return out;
}

}  // namespace msce::oracle

#endif  // MSCE_TESTS_ORACLES_HPP_
