// msce/eval.hpp

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

#ifndef MSCE_EVAL_HPP_
#define MSCE_EVAL_HPP_

// Scoring of a dataset and the FRR / FAR / confusion metrics.
//
// An utterance is scored once, with the trigger disabled: its hypothesis is
// the final token with the highest average score seen on any frame (ties to
// the smaller command id) and that score is recorded. At threshold theta the
// utterance triggers iff score >= theta. This is exactly the condition under
// which the streaming decoder fires at least once, since before its first
// trigger the streaming search and the observing search are the same
// computation. Re-thresholding the recorded scores therefore reproduces the
// accept/reject decision of a full decode at any theta.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "msce/corpus.hpp"
#include "msce/decoder.hpp"
#include "msce/error.hpp"
#include "msce/graph.hpp"
#include "msce/model.hpp"

namespace msce {

inline constexpr int kReject = -1;

struct Outcome {
  std::string utt_id;
  int truth = kNegativeLabel;  // command id or kNegativeLabel
  int hypothesis = -1;         // best complete command, -1 if none reached a final
  std::optional<double> score;
  int decoded = kReject;  // command id or kReject

  friend bool operator==(const Outcome &, const Outcome &) = default;
};

struct UtteranceScore {
  int hypothesis = -1;
  std::optional<double> score;
};

/// Runs the decoder over all frames with the trigger disabled and returns the
/// best final seen.
inline UtteranceScore observe_utterance(const Matrix &log_posteriors, const DecodingGraph &graph,
                                        DecoderConfig config) {
  config.trigger_threshold = std::numeric_limits<double>::infinity();
  Decoder dec(graph, config);
  UtteranceScore best;
  for (std::size_t t = 0; t < log_posteriors.rows(); ++t) {
    dec.decode_step(log_posteriors.row(t));
    const auto f = dec.best_final();
    if (!f) continue;
    if (!best.score || f->score > *best.score ||
        (f->score == *best.score && f->command < best.hypothesis)) {
      best.score = f->score;
      best.hypothesis = f->command;
    }
  }
  return best;
}

/// Streaming decode with trigger-and-restart; every event in order.
inline std::vector<TriggerEvent> decode_utterance(const Matrix &log_posteriors,
                                                  const DecodingGraph &graph,
                                                  const DecoderConfig &config) {
  Decoder dec(graph, config);
  std::vector<TriggerEvent> events;
  for (std::size_t t = 0; t < log_posteriors.rows(); ++t)
    if (auto ev = dec.decode_step(log_posteriors.row(t))) events.push_back(std::move(*ev));
  return events;
}

/// Forward pass in infer mode, then the streaming decode.
inline std::vector<TriggerEvent> decode_utterance(const ModelParameters &params,
                                                  const ModelConfig &model, const Matrix &features,
                                                  const DecodingGraph &graph,
                                                  const DecoderConfig &config) {
  if (model.output_units != graph.output_units)
    throw ConfigError("model and graph disagree on the number of output units");
  return decode_utterance(forward_infer(params, model, features).log_posteriors, graph, config);
}

/// The decision rule for a list of streaming events: the highest-scoring
/// event wins, ties to the smaller command id.
inline int decision_from_events(const std::vector<TriggerEvent> &events) {
  const TriggerEvent *best = nullptr;
  for (const auto &e : events)
    if (!best || e.score > best->score || (e.score == best->score && e.command < best->command))
      best = &e;
  return best ? best->command : kReject;
}

inline int decide(const Outcome &o, double threshold) {
  return o.score && *o.score >= threshold ? o.hypothesis : kReject;
}

inline std::vector<Outcome> apply_threshold(std::vector<Outcome> outcomes, double threshold) {
  for (auto &o : outcomes) o.decoded = decide(o, threshold);
  return outcomes;
}

/// One Outcome per manifest record, in manifest order. With threads > 1 the
/// records are split into contiguous chunks; each result lands in its own
/// slot so the output does not depend on scheduling.
inline std::vector<Outcome> score_dataset(const ModelParameters &params, const ModelConfig &model,
                                          const DecodingGraph &graph, const Manifest &manifest,
                                          const DecoderConfig &config, unsigned threads = 1) {
  config.validate();
  if (model.output_units != graph.output_units)
    throw ConfigError("model has " + std::to_string(model.output_units) +
                      " output units, graph expects " + std::to_string(graph.output_units));
  if (!manifest.records.empty() && manifest.header.feature_dim != model.input_dim)
    throw ConfigError("manifest feature_dim does not match the model input");
  std::vector<Outcome> out(manifest.records.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto &r = manifest.records[i];
      const FeatureFile ff = load_features(manifest.resolve(r));
      const ForwardResult fr = forward_infer(params, model, ff.features);
      const UtteranceScore s = observe_utterance(fr.log_posteriors, graph, config);
      Outcome &o = out[i];
      o.utt_id = r.utt_id;
      o.truth = r.label;
      o.hypothesis = s.hypothesis;
      o.score = s.score;
      o.decoded = decide(o, config.trigger_threshold);
    }
  };
  const std::size_t n = out.size();
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (threads == 1) {
    work(0, n);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (unsigned w = 0; w < threads; ++w) {
    const std::size_t b = n * w / threads, e = n * (w + 1) / threads;
    pool.emplace_back([&, w, b, e] {
      try {
        work(b, e);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto &t : pool) t.join();
  for (auto &e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

// ---------------------------------------------------------------------------
// metrics

struct MetricsReport {
  double threshold = 0.0;
  long positives = 0;
  long negatives = 0;
  long rejects = 0;
  long confusions = 0;
  long correct = 0;
  long false_alarms = 0;
  std::optional<double> frr;  // undefined without positives
  std::optional<double> far;  // undefined without negatives
  // rows: commands then NEGATIVE; columns: commands then REJECT
  std::vector<std::vector<long>> confusion_matrix;

  friend bool operator==(const MetricsReport &, const MetricsReport &) = default;
};

/// Metrics of the outcomes re-decided at `threshold`.
inline MetricsReport compute_metrics(const std::vector<Outcome> &outcomes, double threshold,
                                     int num_commands) {
  if (num_commands < 1) throw ContractError("compute_metrics: num_commands must be >= 1");
  const auto nc = static_cast<std::size_t>(num_commands);
  MetricsReport m;
  m.threshold = threshold;
  m.confusion_matrix.assign(nc + 1, std::vector<long>(nc + 1, 0));
  for (const auto &o : outcomes) {
    const int d = decide(o, threshold);
    if (o.truth >= num_commands || d >= num_commands)
      throw ContractError("compute_metrics: command id out of range in '" + o.utt_id + "'");
    const std::size_t row = o.truth == kNegativeLabel ? nc : static_cast<std::size_t>(o.truth);
    const std::size_t col = d == kReject ? nc : static_cast<std::size_t>(d);
    ++m.confusion_matrix[row][col];
    if (o.truth == kNegativeLabel) {
      ++m.negatives;
      if (d != kReject) ++m.false_alarms;
    } else {
      ++m.positives;
      if (d == kReject)
        ++m.rejects;
      else if (d == o.truth)
        ++m.correct;
      else
        ++m.confusions;
    }
  }
  if (m.positives > 0)
    m.frr = static_cast<double>(m.rejects + m.confusions) / static_cast<double>(m.positives);
  if (m.negatives > 0) m.far = static_cast<double>(m.false_alarms) / static_cast<double>(m.negatives);
  return m;
}

struct RocPoint {
  double threshold = 0.0;
  std::optional<double> far;
  std::optional<double> frr;
  long confusions = 0;

  friend bool operator==(const RocPoint &, const RocPoint &) = default;
};

/// Thresholds must be non-increasing.
inline std::vector<RocPoint> roc_sweep(const std::vector<Outcome> &outcomes,
                                       const std::vector<double> &thresholds, int num_commands) {
  for (std::size_t i = 1; i < thresholds.size(); ++i)
    if (!(thresholds[i] <= thresholds[i - 1]))
      throw ContractError("roc_sweep: thresholds must be sorted in descending order");
  std::vector<RocPoint> out;
  out.reserve(thresholds.size());
  for (double th : thresholds) {
    const MetricsReport m = compute_metrics(outcomes, th, num_commands);
    out.push_back({th, m.far, m.frr, m.confusions});
  }
  return out;
}

/// `steps` evenly spaced values from hi down to lo.
inline std::vector<double> threshold_grid(double lo, double hi, int steps) {
  if (!(lo < hi)) throw ConfigError("threshold range needs theta_min < theta_max");
  if (steps < 2) throw ConfigError("threshold sweep needs steps >= 2");
  std::vector<double> out(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i)
    out[static_cast<std::size_t>(i)] =
        i == steps - 1 ? lo : hi - (hi - lo) * static_cast<double>(i) / (steps - 1);
  return out;
}

/// Every distinct recorded score, descending: the points where any metric
/// can change.
inline std::vector<double> score_thresholds(const std::vector<Outcome> &outcomes) {
  std::vector<double> s;
  for (const auto &o : outcomes)
    if (o.score) s.push_back(*o.score);
  std::sort(s.begin(), s.end(), std::greater<>());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  return s;
}

enum class MetricField { kFrr, kFar, kConfusions };

inline double metric_value(const MetricsReport &m, MetricField f) {
  switch (f) {
    case MetricField::kFrr:
      if (!m.frr) throw ContractError("frr is undefined (no positives)");
      return *m.frr;
    case MetricField::kFar:
      if (!m.far) throw ContractError("far is undefined (no negatives)");
      return *m.far;
    case MetricField::kConfusions:
      return static_cast<double>(m.confusions);
  }
  return 0.0;
}

/// 100 * (baseline - candidate) / baseline; positive means the candidate is
/// better.
inline double relative_gain(double baseline, double candidate) {
  if (!(baseline > 0.0)) throw ContractError("relative gain is undefined for a zero baseline");
  return 100.0 * (baseline - candidate) / baseline;
}

inline double relative_gain(const MetricsReport &baseline, const MetricsReport &candidate,
                            MetricField field) {
  return relative_gain(metric_value(baseline, field), metric_value(candidate, field));
}

/// Row whose FAR is nearest `target_far`. Among equally near rows the one
/// with the lower FRR wins, then the larger threshold.
inline std::optional<RocPoint> nearest_far(const std::vector<RocPoint> &roc, double target_far) {
  std::optional<RocPoint> best;
  double best_gap = std::numeric_limits<double>::infinity();
  for (const auto &p : roc) {
    if (!p.far) continue;
    const double gap = std::abs(*p.far - target_far);
    bool take = gap < best_gap;
    if (gap == best_gap && best) {
      const double fa = p.frr.value_or(1.0), fb = best->frr.value_or(1.0);
      take = fa < fb || (fa == fb && p.threshold > best->threshold);
    }
    if (take) {
      best_gap = gap;
      best = p;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// reports

namespace detail {
inline nlohmann::json opt_json(const std::optional<double> &v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}
inline std::optional<double> json_opt(const nlohmann::json &j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}
}  // namespace detail

inline nlohmann::json metrics_to_json(const MetricsReport &m) {
  return {{"threshold", m.threshold},   {"positives", m.positives},
          {"negatives", m.negatives},   {"rejects", m.rejects},
          {"confusions", m.confusions}, {"correct", m.correct},
          {"false_alarms", m.false_alarms}, {"frr", detail::opt_json(m.frr)},
          {"far", detail::opt_json(m.far)}, {"confusion_matrix", m.confusion_matrix}};
}

inline MetricsReport metrics_from_json(const nlohmann::json &j) {
  MetricsReport m;
  m.threshold = j.at("threshold").get<double>();
  m.positives = j.at("positives").get<long>();
  m.negatives = j.at("negatives").get<long>();
  m.rejects = j.at("rejects").get<long>();
  m.confusions = j.at("confusions").get<long>();
  m.correct = j.at("correct").get<long>();
  m.false_alarms = j.at("false_alarms").get<long>();
  m.frr = detail::json_opt(j.at("frr"));
  m.far = detail::json_opt(j.at("far"));
  m.confusion_matrix = j.at("confusion_matrix").get<std::vector<std::vector<long>>>();
  return m;
}

inline nlohmann::json roc_to_json(const std::vector<RocPoint> &roc) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto &p : roc)
    a.push_back({{"threshold", p.threshold},
                 {"far", detail::opt_json(p.far)},
                 {"frr", detail::opt_json(p.frr)},
                 {"confusions", p.confusions}});
  return a;
}

inline std::vector<RocPoint> roc_from_json(const nlohmann::json &a) {
  std::vector<RocPoint> roc;
  for (const auto &j : a)
    roc.push_back({j.at("threshold").get<double>(), detail::json_opt(j.at("far")),
                   detail::json_opt(j.at("frr")), j.at("confusions").get<long>()});
  return roc;
}

inline nlohmann::json outcomes_to_json(const std::vector<Outcome> &outcomes) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto &o : outcomes)
    a.push_back({{"utt_id", o.utt_id},
                 {"truth", o.truth},
                 {"hypothesis", o.hypothesis},
                 {"score", detail::opt_json(o.score)},
                 {"decoded", o.decoded}});
  return a;
}

inline std::vector<Outcome> outcomes_from_json(const nlohmann::json &a) {
  std::vector<Outcome> out;
  for (const auto &j : a)
    out.push_back({j.at("utt_id").get<std::string>(), j.at("truth").get<int>(),
                   j.at("hypothesis").get<int>(), detail::json_opt(j.at("score")),
                   j.at("decoded").get<int>()});
  return out;
}

/// Full evaluation report. The ROC is exact: one row per distinct recorded
/// score.
inline nlohmann::json make_report(const std::vector<Outcome> &outcomes, const CommandSet &cs,
                                  const std::string &manifest_hash, double threshold) {
  const int nc = static_cast<int>(cs.size());
  std::vector<std::string> names;
  for (const auto &c : cs.commands) names.push_back(c.joined_text());
  return {{"manifest_hash", manifest_hash},
          {"commands", names},
          {"metrics", metrics_to_json(compute_metrics(outcomes, threshold, nc))},
          {"roc", roc_to_json(roc_sweep(outcomes, score_thresholds(outcomes), nc))},
          {"outcomes", outcomes_to_json(outcomes)}};
}

inline void write_json_file(const nlohmann::json &j, const std::string &path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << j.dump(1) << '\n';
}

inline nlohmann::json read_json_file(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception &e) {
    throw FormatError("'" + path + "' is not valid JSON: " + e.what());
  }
}

namespace detail {
inline std::string fmt_double(double v) {
  nlohmann::json j = v;  // shortest round-trip representation
  return j.dump();
}
inline std::string fmt_opt(const std::optional<double> &v) {
  return v ? fmt_double(*v) : "undefined";
}
inline std::string csv_field(const std::string &s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}
}  // namespace detail

/// `threshold,far,frr,confusions`
inline void write_roc_csv(const std::vector<RocPoint> &roc, std::ostream &os) {
  os << "threshold,far,frr,confusions\n";
  for (const auto &p : roc)
    os << detail::fmt_double(p.threshold) << ',' << detail::fmt_opt(p.far) << ','
       << detail::fmt_opt(p.frr) << ',' << p.confusions << '\n';
}

/// Header `truth,<command texts...>,REJECT`; one row per command and a final
/// NEGATIVE row.
inline void write_confusion_csv(const MetricsReport &m, const CommandSet &cs, std::ostream &os) {
  os << "truth";
  for (const auto &c : cs.commands) os << ',' << detail::csv_field(c.joined_text());
  os << ",REJECT\n";
  for (std::size_t r = 0; r < m.confusion_matrix.size(); ++r) {
    os << (r < cs.size() ? detail::csv_field(cs[r].joined_text()) : std::string("NEGATIVE"));
    for (long v : m.confusion_matrix[r]) os << ',' << v;
    os << '\n';
  }
}

/// One JSON object per trigger event.
inline void write_event_log(const std::string &utt_id, const std::vector<TriggerEvent> &events,
                            std::ostream &os) {
  for (const auto &e : events)
    os << nlohmann::json{{"utt_id", utt_id},
                         {"command_id", e.command},
                         {"score", e.score},
                         {"end_frame", e.end_frame},
                         {"states_path", e.states_path}}
              .dump()
       << '\n';
}

}  // namespace msce

#endif  // MSCE_EVAL_HPP_
