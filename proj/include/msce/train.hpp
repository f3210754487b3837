// msce/train.hpp

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

#ifndef MSCE_TRAIN_HPP_
#define MSCE_TRAIN_HPP_

// Two-stage training: frame cross-entropy pretraining, then fine-tuning with
// the mixed sequence/frame objective against sampled confusing commands.
//
// One optimizer step consumes `batch_size` examples. Each example's gradient
// goes into its own buffer; buffers are summed in example order, so the
// result does not depend on how examples were spread over threads. Batch
// norm running statistics are folded in the same order after the step.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "msce/corpus.hpp"
#include "msce/error.hpp"
#include "msce/lexicon.hpp"
#include "msce/losses.hpp"
#include "msce/model.hpp"
#include "msce/numerics.hpp"

namespace msce {

enum class Stage { kCe, kMsce };

inline Stage parse_stage(const std::string &s) {
  if (s == "ce") return Stage::kCe;
  if (s == "msce") return Stage::kMsce;
  throw ConfigError("unknown stage '" + s + "' (expected ce or msce)");
}

inline std::string stage_name(Stage s) { return s == Stage::kCe ? "ce" : "msce"; }

struct TrainConfig {
  Stage stage = Stage::kCe;
  int epochs = 1;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 16;
  ConfusionSetConfig confusion;
  MsceLossConfig loss;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // optimizer steps; 0 = end of each epoch only
  int average_last_k = 3;
  unsigned threads = 1;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
    if (average_last_k < 1) throw ConfigError("average_last_k must be >= 1");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0))
      throw ConfigError("adam betas must lie in [0, 1)");
    if (confusion.n < 1) throw ConfigError("confuser count N must be >= 1");
    loss.validate();
  }
};

/// Adaptive-moment optimizer over the trainable tensors.
class Adam {
 public:
  Adam(std::size_t size, double lr, double b1, double b2, double eps)
      : lr_(lr), b1_(b1), b2_(b2), eps_(eps), m_(size, 0.0), v_(size, 0.0) {}

  void step(ModelParameters &params, const ModelParameters &grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    std::vector<std::span<const double>> g;
    for_each_trainable(grads, [&](std::span<const double> s) { g.push_back(s); });
    std::size_t gi = 0, off = 0;
    for_each_trainable(params, [&](std::span<double> p) {
      const auto gs = g[gi++];
      for (std::size_t i = 0; i < p.size(); ++i, ++off) {
        m_[off] = b1_ * m_[off] + (1.0 - b1_) * gs[i];
        v_[off] = b2_ * v_[off] + (1.0 - b2_) * gs[i] * gs[i];
        p[i] -= lr_ * (m_[off] / c1) / (std::sqrt(v_[off] / c2) + eps_);
      }
    });
  }

  long steps() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  std::vector<double> m_, v_;
  long t_ = 0;
};

/// One training utterance held in memory.
struct TrainExample {
  std::string utt_id;
  int label = kNegativeLabel;
  Matrix features;
  std::optional<std::vector<int>> frame_states;
};

inline std::vector<TrainExample> load_examples(const Manifest &m) {
  std::vector<TrainExample> out;
  out.reserve(m.records.size());
  for (const auto &r : m.records) {
    FeatureFile ff = load_features(m.resolve(r));
    out.push_back({r.utt_id, r.label, std::move(ff.features), std::move(ff.frame_states)});
  }
  return out;
}

/// Frame targets: the synthetic state of each frame, padding mapped to blank.
/// Negatives are blank throughout.
inline std::vector<int> frame_targets(const TrainExample &ex, int blank_id) {
  if (ex.label == kNegativeLabel && !ex.frame_states)
    return std::vector<int>(ex.features.rows(), blank_id);
  if (!ex.frame_states)
    throw ConfigError("utterance '" + ex.utt_id + "' has no frame states; frame CE needs them");
  std::vector<int> t(*ex.frame_states);
  for (int &s : t)
    if (s == kSilenceState) s = blank_id;
  return t;
}

struct StepRecord {
  long step = 0;
  int epoch = 0;
  Stage stage = Stage::kCe;
  double loss = 0.0;      // mean over the examples that contributed
  double ce_loss = 0.0;   // mean frame CE
  std::optional<double> msce_loss;  // mean sigmoid loss over positives (msce stage)
  int dropped_confusers = 0;
  std::optional<double> mean_d;  // mean measure over positives (msce stage)
  int examples = 0;
  int skipped = 0;
  double wall_seconds = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json j{{"step", step},         {"epoch", epoch},       {"stage", stage_name(stage)},
                     {"loss", loss},         {"ce_loss", ce_loss},   {"examples", examples},
                     {"skipped", skipped},   {"dropped_confusers", dropped_confusers},
                     {"wall_seconds", wall_seconds}};
    j["mean_d"] = mean_d ? nlohmann::json(*mean_d) : nlohmann::json(nullptr);
    j["msce_loss"] = msce_loss ? nlohmann::json(*msce_loss) : nlohmann::json(nullptr);
    return j;
  }
};

struct EpochSummary {
  int epoch = 0;
  double mean_loss = 0.0;
  double mean_ce = 0.0;
  std::optional<double> mean_d;
  long skipped = 0;
};

struct TrainResult {
  ModelParameters final_params;  // average of the last k saved checkpoints, as stored
  ModelParameters last_params;   // raw parameters after the final step
  std::vector<std::string> checkpoint_paths;
  std::vector<EpochSummary> epochs;
  long skipped_unalignable = 0;
  long dropped_confusers = 0;
};

namespace detail {

struct ExampleGrad {
  ModelParameters grads;
  ForwardCache cache;
  double loss = 0.0;
  double ce = 0.0;
  std::optional<double> d;
  std::optional<double> msce;
  int dropped = 0;
  bool skipped = false;
};

inline ExampleGrad example_gradient(const ModelParameters &params, const ModelConfig &model,
                                    const TrainConfig &cfg, const CommandSet &cs,
                                    const ConfusionSampler *sampler, const TrainExample &ex,
                                    Rng rng) {
  ExampleGrad out;
  ForwardResult fr = forward(params, model, ex.features, Mode::kTrain, rng);
  LossAndGrad ce{0.0, Matrix(fr.log_posteriors.rows(), fr.log_posteriors.cols())};
  if (cfg.stage == Stage::kCe || cfg.loss.beta_mix < 1.0 || ex.frame_states)
    ce = ce_frame_loss(fr.log_posteriors, frame_targets(ex, cs.blank_id()));
  out.ce = ce.loss;
  Matrix grad;
  if (cfg.stage == Stage::kCe) {
    out.loss = ce.loss;
    grad = std::move(ce.grad_logits);
  } else if (ex.label == kNegativeLabel) {
    // no target sequence exists for a negative: frame CE only
    const double w = 1.0 - cfg.loss.beta_mix;
    out.loss = w * ce.loss;
    grad = std::move(ce.grad_logits);
    grad.eigen() *= w;
  } else {
    const auto &target = cs[static_cast<std::size_t>(ex.label)];
    std::vector<std::vector<int>> conf;
    for (int c : sampler->draw(ex.label, rng)) conf.push_back(cs[static_cast<std::size_t>(c)].states);
    MsceExampleResult r;
    try {
      r = msce_example_loss(fr.log_posteriors, target.states, conf, cfg.loss);
    } catch (const InfeasibleError &) {
      out.skipped = true;
      return out;
    }
    out.dropped = r.dropped_confusers;
    if (!r.fell_back_to_ctc) {
      out.d = r.d;
      out.msce = r.loss;
    }
    out.loss = combined_loss(r.loss, ce.loss, cfg.loss);
    grad = combined_gradient(r.grad_logits, ce.grad_logits, cfg.loss);
  }
  out.grads = backward(params, model, fr.cache, grad).grads;
  out.cache = std::move(fr.cache);
  return out;
}

inline void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)> &fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (unsigned w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto &t : pool) t.join();
  for (auto &e : errors)
    if (e) std::rethrow_exception(e);
}

inline void add_into(ModelParameters &dst, const ModelParameters &src) {
  std::vector<std::span<const double>> s;
  for_each_trainable(src, [&](std::span<const double> x) { s.push_back(x); });
  std::size_t i = 0;
  for_each_trainable(dst, [&](std::span<double> d) {
    const auto x = s[i++];
    for (std::size_t j = 0; j < d.size(); ++j) d[j] += x[j];
  });
}

inline void scale(ModelParameters &p, double f) {
  for_each_trainable(p, [&](std::span<double> d) {
    for (double &v : d) v *= f;
  });
}

// RNG stream tags
inline constexpr std::uint64_t kStreamShuffle = 0x7368756666ULL;
inline constexpr std::uint64_t kStreamExample = 0x6578616d70ULL;

}  // namespace detail

/// Runs one stage. Checkpoints are written as `<out_dir>/ckpt_<step>.msce`
/// and the average of the last `average_last_k` as `<out_dir>/final.msce`.
/// Averaging uses the parameters as stored (f32), so final.msce equals the
/// average of the files on disk. `log` receives one JSON line per step.
inline TrainResult train(const ModelParameters &init, const ModelConfig &model, const CommandSet &cs,
                         const std::vector<TrainExample> &data, const TrainConfig &cfg,
                         const std::string &out_dir, std::ostream *log = nullptr) {
  cfg.validate();
  model.validate();
  if (model.output_units != cs.output_units())
    throw ConfigError("model output units do not match the command set");
  if (data.empty()) throw ConfigError("training set is empty");
  for (const auto &ex : data)
    if (ex.features.cols() != static_cast<std::size_t>(model.input_dim))
      throw ShapeError("utterance '" + ex.utt_id + "' feature dim does not match the model");
  std::optional<ConfusionSampler> sampler;
  if (cfg.stage == Stage::kMsce) {
    check_confuser_count(cs, cfg.confusion.n);
    sampler.emplace(cs, cfg.confusion);
  }
  // frame targets are needed by both stages (the msce stage mixes in CE)
  if (cfg.stage == Stage::kCe || cfg.loss.beta_mix < 1.0)
    for (const auto &ex : data) (void)frame_targets(ex, cs.blank_id());

  std::filesystem::create_directories(out_dir);
  TrainResult res;
  ModelParameters params = init;
  Adam opt(num_trainable(params), cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  const Rng shuffle_root(cfg.seed, detail::kStreamShuffle + static_cast<std::uint64_t>(cfg.stage));
  const Rng example_root(cfg.seed, detail::kStreamExample + static_cast<std::uint64_t>(cfg.stage));
  std::vector<ModelParameters> saved;
  const auto t_start = std::chrono::steady_clock::now();
  long step = 0;
  std::uint64_t draw_index = 0;

  auto save = [&]() {
    const std::string path =
        (std::filesystem::path(out_dir) / ("ckpt_" + std::to_string(step) + ".msce")).string();
    save_checkpoint(params, model, path);
    res.checkpoint_paths.push_back(path);
    saved.push_back(quantize_f32(params));
    if (saved.size() > static_cast<std::size_t>(cfg.average_last_k)) saved.erase(saved.begin());
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng = shuffle_root.derive(static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(order);

    EpochSummary es;
    es.epoch = epoch;
    double d_sum = 0.0;
    long d_count = 0, contributed = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t nb = std::min(order.size() - b0, static_cast<std::size_t>(cfg.batch_size));
      std::vector<detail::ExampleGrad> per(nb);
      const std::uint64_t base = draw_index;
      detail::parallel_for(nb, cfg.threads, [&](std::size_t i) {
        per[i] = detail::example_gradient(params, model, cfg, cs, sampler ? &*sampler : nullptr,
                                          data[order[b0 + i]], example_root.derive(base + i));
      });
      draw_index += nb;

      StepRecord rec;
      rec.step = step;
      rec.epoch = epoch;
      rec.stage = cfg.stage;
      ModelParameters total = zero_parameters(model);
      double step_d = 0.0, step_msce = 0.0;
      int step_d_n = 0;
      for (const auto &g : per) {
        if (g.skipped) {
          ++rec.skipped;
          continue;
        }
        detail::add_into(total, g.grads);
        ++rec.examples;
        rec.loss += g.loss;
        rec.ce_loss += g.ce;
        res.dropped_confusers += g.dropped;
        rec.dropped_confusers += g.dropped;
        if (g.d) {
          step_d += *g.d;
          step_msce += *g.msce;
          ++step_d_n;
        }
      }
      if (rec.examples > 0) {
        detail::scale(total, 1.0 / rec.examples);
        opt.step(params, total);
        for (const auto &g : per)
          if (!g.skipped) update_running_stats(params, g.cache);
        es.mean_loss += rec.loss;
        es.mean_ce += rec.ce_loss;
        contributed += rec.examples;
        rec.loss /= rec.examples;
        rec.ce_loss /= rec.examples;
      }
      if (step_d_n > 0) {
        rec.mean_d = step_d / step_d_n;
        rec.msce_loss = step_msce / step_d_n;
        d_sum += step_d;
        d_count += step_d_n;
      }
      es.skipped += rec.skipped;
      res.skipped_unalignable += rec.skipped;
      rec.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
      if (log) *log << rec.to_json().dump() << '\n';
      ++step;
      if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) save();
    }
    if (contributed > 0) {
      es.mean_loss /= static_cast<double>(contributed);
      es.mean_ce /= static_cast<double>(contributed);
    }
    if (d_count > 0) es.mean_d = d_sum / static_cast<double>(d_count);
    res.epochs.push_back(es);
    if (cfg.checkpoint_every == 0 || step % cfg.checkpoint_every != 0) save();
  }

  res.last_params = params;
  res.final_params = quantize_f32(average_parameters(saved));
  save_checkpoint(res.final_params, model,
                  (std::filesystem::path(out_dir) / "final.msce").string());
  return res;
}

}  // namespace msce

#endif  // MSCE_TRAIN_HPP_
