// msce/losses.hpp

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

#ifndef MSCE_LOSSES_HPP_
#define MSCE_LOSSES_HPP_

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "msce/error.hpp"
#include "msce/numerics.hpp"

namespace msce {

// All losses here take a T x U matrix of per-frame log-posteriors (the
// log-softmax of the model's logits) and return gradients with respect to
// the pre-softmax logits.

struct LossAndGrad {
  double loss = 0.0;
  Matrix grad_logits;
};

/// Mean frame cross-entropy against per-frame unit labels.
inline LossAndGrad ce_frame_loss(const Matrix &log_posteriors,
                                 std::span<const int> frame_labels) {
  const std::size_t T = log_posteriors.rows(), U = log_posteriors.cols();
  if (frame_labels.size() != T)
    throw ShapeError("ce_frame_loss: " + std::to_string(frame_labels.size()) +
                     " labels for " + std::to_string(T) + " frames");
  if (T == 0) throw ContractError("ce_frame_loss: no frames");
  LossAndGrad out{0.0, Matrix(T, U)};
  const double inv_t = 1.0 / static_cast<double>(T);
  for (std::size_t t = 0; t < T; ++t) {
    const int label = frame_labels[t];
    if (label < 0 || static_cast<std::size_t>(label) >= U)
      throw ContractError("ce_frame_loss: label " + std::to_string(label) +
                          " out of range at frame " + std::to_string(t));
    out.loss -= log_posteriors(t, static_cast<std::size_t>(label));
    for (std::size_t u = 0; u < U; ++u)
      out.grad_logits(t, u) = std::exp(log_posteriors(t, u)) * inv_t;
    out.grad_logits(t, static_cast<std::size_t>(label)) -= inv_t;
  }
  out.loss *= inv_t;
  return out;
}

/// Forward/backward tables over the blank-interleaved label l'. Both alpha
/// and beta include the emission at frame t (the classic convention), so
/// alpha_t(s) * beta_t(s) / y_t(l'_s) summed over s is the total likelihood
/// at every t.
struct CtcTrellis {
  std::vector<int> label;
  std::vector<int> augmented;
  Matrix alpha;  // T x |l'|, log domain
  Matrix beta;   // T x |l'|, log domain
  double log_likelihood = kLogZero;
};

/// Fewest frames that can carry `label`: one per symbol plus a blank between
/// each pair of equal neighbours.
inline std::size_t ctc_min_frames(std::span<const int> label) {
  std::size_t need = label.size();
  for (std::size_t i = 1; i < label.size(); ++i)
    if (label[i] == label[i - 1]) ++need;
  return need;
}

inline CtcTrellis ctc_trellis(const Matrix &log_posteriors, std::span<const int> label) {
  const std::size_t T = log_posteriors.rows(), U = log_posteriors.cols();
  if (U < 2) throw ContractError("ctc: need at least one label unit plus blank");
  const int blank = static_cast<int>(U) - 1;
  for (int l : label)
    if (l < 0 || l >= blank)
      throw ContractError("ctc: label unit " + std::to_string(l) + " out of range");
  if (T == 0 || T < ctc_min_frames(label))
    throw InfeasibleError("ctc: " + std::to_string(T) + " frames cannot align a label of " +
                          std::to_string(label.size()) + " units (needs " +
                          std::to_string(ctc_min_frames(label)) + ")");

  CtcTrellis tr;
  tr.label.assign(label.begin(), label.end());
  tr.augmented.reserve(2 * label.size() + 1);
  tr.augmented.push_back(blank);
  for (int l : label) {
    tr.augmented.push_back(l);
    tr.augmented.push_back(blank);
  }
  const auto &lp = tr.augmented;
  const std::size_t S = lp.size();
  tr.alpha = Matrix(T, S, kLogZero);
  tr.beta = Matrix(T, S, kLogZero);
  auto y = [&](std::size_t t, std::size_t s) {
    return log_posteriors(t, static_cast<std::size_t>(lp[s]));
  };
  // skip transition s-2 -> s is allowed onto a non-blank that differs from
  // the previous non-blank
  auto can_skip = [&](std::size_t s) { return s >= 2 && lp[s] != blank && lp[s] != lp[s - 2]; };

  tr.alpha(0, 0) = y(0, 0);
  if (S > 1) tr.alpha(0, 1) = y(0, 1);
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      double a = tr.alpha(t - 1, s);
      if (s >= 1) a = log_add(a, tr.alpha(t - 1, s - 1));
      if (can_skip(s)) a = log_add(a, tr.alpha(t - 1, s - 2));
      tr.alpha(t, s) = log_mul(a, y(t, s));
    }
  }

  tr.beta(T - 1, S - 1) = y(T - 1, S - 1);
  if (S > 1) tr.beta(T - 1, S - 2) = y(T - 1, S - 2);
  for (std::size_t t = T - 1; t-- > 0;) {
    for (std::size_t s = 0; s < S; ++s) {
      double b = tr.beta(t + 1, s);
      if (s + 1 < S) b = log_add(b, tr.beta(t + 1, s + 1));
      if (s + 2 < S && can_skip(s + 2)) b = log_add(b, tr.beta(t + 1, s + 2));
      tr.beta(t, s) = log_mul(b, y(t, s));
    }
  }

  tr.log_likelihood = tr.alpha(T - 1, S - 1);
  if (S > 1) tr.log_likelihood = log_add(tr.log_likelihood, tr.alpha(T - 1, S - 2));
  if (tr.log_likelihood <= kLogZero)
    throw InfeasibleError("ctc: label has zero likelihood under the given posteriors");
  return tr;
}

struct CtcResult {
  double nll = 0.0;
  Matrix grad_logits;
};

/// -log p(label | x), with the gradient of that quantity w.r.t. logits.
/// Blank is the last unit (U - 1).
inline CtcResult ctc_loss(const Matrix &log_posteriors, std::span<const int> label) {
  const CtcTrellis tr = ctc_trellis(log_posteriors, label);
  const std::size_t T = log_posteriors.rows(), U = log_posteriors.cols();
  const std::size_t S = tr.augmented.size();
  CtcResult out{-tr.log_likelihood, Matrix(T, U)};
  std::vector<double> occupancy(U);
  for (std::size_t t = 0; t < T; ++t) {
    std::fill(occupancy.begin(), occupancy.end(), kLogZero);
    for (std::size_t s = 0; s < S; ++s) {
      const std::size_t u = static_cast<std::size_t>(tr.augmented[s]);
      const double a = tr.alpha(t, s), b = tr.beta(t, s);
      if (a <= kLogZero || b <= kLogZero) continue;
      occupancy[u] = log_add(occupancy[u], a + b - log_posteriors(t, u));
    }
    for (std::size_t u = 0; u < U; ++u) {
      const double gamma =
          occupancy[u] <= kLogZero ? 0.0 : std::exp(occupancy[u] - tr.log_likelihood);
      out.grad_logits(t, u) = std::exp(log_posteriors(t, u)) - gamma;
    }
  }
  return out;
}

/// Ratio measure d = nll_target / sum(nll_confusers) and its partials.
struct MsceMeasure {
  double d = 0.0;
  double d_target = 0.0;
  std::vector<double> d_confusers;
};

inline MsceMeasure msce_measure(double nll_target, std::span<const double> nll_confusers) {
  if (nll_confusers.empty()) throw ContractError("msce_measure: empty confusing set");
  if (!std::isfinite(nll_target)) throw NumericError("msce_measure: non-finite target NLL");
  double denom = 0.0;
  for (double v : nll_confusers) {
    if (!std::isfinite(v)) throw NumericError("msce_measure: non-finite confuser NLL");
    denom += v;
  }
  if (denom <= 1e-8)
    throw NumericError("msce_measure: degenerate denominator " + std::to_string(denom));
  MsceMeasure m;
  m.d = nll_target / denom;
  m.d_target = 1.0 / denom;
  m.d_confusers.assign(nll_confusers.size(), -nll_target / (denom * denom));
  return m;
}

struct MsceLossConfig {
  double xi = 1.0;           // sigmoid steepness, > 0
  double alpha_shift = 0.0;  // sigmoid translation
  double beta_mix = 0.8;     // weight of the sequence loss against frame CE

  void validate() const {
    if (!(xi > 0.0)) throw ConfigError("xi must be > 0");
    if (!(beta_mix >= 0.0 && beta_mix <= 1.0)) throw ConfigError("beta must lie in [0, 1]");
  }
};

struct SigmoidLoss {
  double loss = 0.0;
  double dloss_dd = 0.0;
};

/// Smoothed zero-one loss 1 / (1 + exp(-xi (d + alpha))).
inline SigmoidLoss msce_sigmoid_loss(double d, const MsceLossConfig &config) {
  if (!(config.xi > 0.0)) throw ConfigError("xi must be > 0");
  const double z = config.xi * (d + config.alpha_shift);
  const double loss = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  return {loss, config.xi * loss * (1.0 - loss)};
}

inline double combined_loss(double msce_loss, double ce_loss, const MsceLossConfig &config) {
  if (!(config.beta_mix >= 0.0 && config.beta_mix <= 1.0))
    throw ConfigError("beta must lie in [0, 1]");
  return config.beta_mix * msce_loss + (1.0 - config.beta_mix) * ce_loss;
}

/// beta * msce_grad + (1 - beta) * ce_grad.
inline Matrix combined_gradient(const Matrix &msce_grad, const Matrix &ce_grad,
                                const MsceLossConfig &config) {
  if (msce_grad.rows() != ce_grad.rows() || msce_grad.cols() != ce_grad.cols())
    throw ShapeError("combined_gradient: shape mismatch");
  Matrix out(msce_grad.rows(), msce_grad.cols());
  out.eigen() = config.beta_mix * msce_grad.eigen() + (1.0 - config.beta_mix) * ce_grad.eigen();
  return out;
}

struct MsceExampleResult {
  double loss = 0.0;
  double d = 0.0;
  double nll_target = 0.0;
  std::vector<double> nll_confusers;  // of the confusers that were kept
  Matrix grad_logits;
  int dropped_confusers = 0;
  bool fell_back_to_ctc = false;
};

/// Sequence loss for one utterance: CTC NLL of the target and of every
/// confusing command on the same posteriors, combined through the ratio
/// measure and the sigmoid. Confusers that cannot align to T frames are
/// dropped; with none left the example falls back to plain CTC on the
/// target. An unalignable target throws InfeasibleError.
inline MsceExampleResult msce_example_loss(const Matrix &log_posteriors,
                                           std::span<const int> target,
                                           std::span<const std::vector<int>> confusers,
                                           const MsceLossConfig &config) {
  MsceExampleResult out;
  CtcResult tgt = ctc_loss(log_posteriors, target);
  out.nll_target = tgt.nll;

  std::vector<CtcResult> kept;
  for (const auto &c : confusers) {
    try {
      kept.push_back(ctc_loss(log_posteriors, c));
    } catch (const InfeasibleError &) {
      ++out.dropped_confusers;
    }
  }
  if (kept.empty()) {
    out.fell_back_to_ctc = true;
    out.loss = tgt.nll;
    out.grad_logits = std::move(tgt.grad_logits);
    return out;
  }
  for (const auto &k : kept) out.nll_confusers.push_back(k.nll);
  const MsceMeasure m = msce_measure(tgt.nll, out.nll_confusers);
  const SigmoidLoss sl = msce_sigmoid_loss(m.d, config);
  out.d = m.d;
  out.loss = sl.loss;

  out.grad_logits = std::move(tgt.grad_logits);
  auto g = out.grad_logits.eigen();
  g *= sl.dloss_dd * m.d_target;
  for (std::size_t i = 0; i < kept.size(); ++i)
    g += (sl.dloss_dd * m.d_confusers[i]) * kept[i].grad_logits.eigen();
  return out;
}

}  // namespace msce

#endif  // MSCE_LOSSES_HPP_
