// tests/test_eval.cpp

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

#include <gtest/gtest.h>

#include <filesystem>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "msce/eval.hpp"
#include "oracles.hpp"

namespace msce {
namespace {

const double kInf = std::numeric_limits<double>::infinity();

Outcome make_outcome(int truth, int hyp, std::optional<double> score) {
  static int n = 0;
  Outcome o;
  o.utt_id = "u" + std::to_string(n++);
  o.truth = truth;
  o.hypothesis = hyp;
  o.score = score;
  return o;
}

std::vector<Outcome> random_outcomes(Rng &rng, int nc, int count) {
  std::vector<Outcome> out;
  for (int i = 0; i < count; ++i) {
    const int truth = rng.uniform() < 0.3 ? kNegativeLabel : rng.uniform_int(0, nc - 1);
    std::optional<double> score;
    int hyp = -1;
    if (rng.uniform() < 0.9) {
      score = -3.0 * rng.uniform();
      hyp = rng.uniform() < 0.7 && truth >= 0 ? truth : rng.uniform_int(0, nc - 1);
    }
    out.push_back(make_outcome(truth, hyp, score));
  }
  return out;
}

TEST(Metrics, PositiveArithmetic) {
  std::vector<Outcome> o;
  for (int i = 0; i < 90; ++i) o.push_back(make_outcome(i % 3, i % 3, -0.5));
  for (int i = 0; i < 4; ++i) o.push_back(make_outcome(0, 1, -0.5));
  for (int i = 0; i < 6; ++i) o.push_back(make_outcome(2, 2, -2.0));
  const auto m = compute_metrics(o, -1.0, 3);
  EXPECT_EQ(m.positives, 100);
  EXPECT_EQ(m.correct, 90);
  EXPECT_EQ(m.confusions, 4);
  EXPECT_EQ(m.rejects, 6);
  ASSERT_TRUE(m.frr);
  EXPECT_NEAR(*m.frr, 0.10, 1e-15);
  EXPECT_FALSE(m.far);
  std::vector<long> row_sums(4, 0);
  for (std::size_t r = 0; r < 4; ++r)
    for (long v : m.confusion_matrix[r]) row_sums[r] += v;
  EXPECT_EQ(row_sums, (std::vector<long>{34, 30, 36, 0}));
  EXPECT_EQ(m.confusion_matrix[2][3], 6);
}

TEST(Metrics, FalseAlarmRate) {
  std::vector<Outcome> o;
  for (int i = 0; i < 198; ++i) o.push_back(make_outcome(kNegativeLabel, 0, -5.0));
  for (int i = 0; i < 2; ++i) o.push_back(make_outcome(kNegativeLabel, 1, -0.2));
  const auto m = compute_metrics(o, -1.0, 2);
  ASSERT_TRUE(m.far);
  EXPECT_DOUBLE_EQ(*m.far, 0.01);
  EXPECT_FALSE(m.frr);
  EXPECT_THROW(metric_value(m, MetricField::kFrr), ContractError);
}

TEST(Metrics, EmptyAndAllRejected) {
  const auto empty = compute_metrics({}, 0.0, 2);
  EXPECT_FALSE(empty.frr);
  EXPECT_FALSE(empty.far);
  std::vector<Outcome> o{make_outcome(0, -1, std::nullopt), make_outcome(1, 1, -9.0)};
  EXPECT_EQ(*compute_metrics(o, -1.0, 2).frr, 1.0);
  EXPECT_THROW(compute_metrics({make_outcome(5, 5, 0.0)}, 0.0, 2), ContractError);
}

TEST(Roc, ExtremesAndMonotonicity) {
  Rng rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    const auto o = random_outcomes(rng, 4, 60);
    auto th = threshold_grid(-3.5, 0.5, 25);
    const auto roc = roc_sweep(o, th, 4);
    ASSERT_EQ(roc.size(), 25u);
    EXPECT_EQ(*roc.front().far, 0.0);
    EXPECT_EQ(*roc.front().frr, 1.0);
    const auto loose = compute_metrics(o, -kInf, 4);
    EXPECT_EQ(roc.back().far, loose.far);
    EXPECT_EQ(roc.back().frr, loose.frr);
    for (std::size_t i = 1; i < roc.size(); ++i) {
      EXPECT_GE(*roc[i].far, *roc[i - 1].far);
      EXPECT_LE(*roc[i].frr, *roc[i - 1].frr);
      EXPECT_GE(*roc[i].far, 0.0);
      EXPECT_LE(*roc[i].frr, 1.0);
    }
    const std::size_t k = 7;
    const auto m = compute_metrics(o, th[k], 4);
    EXPECT_EQ(roc[k].far, m.far);
    EXPECT_EQ(roc[k].frr, m.frr);
    EXPECT_EQ(roc[k].confusions, m.confusions);
  }
}

TEST(Roc, UnsortedThresholdsThrow) {
  EXPECT_THROW(roc_sweep({}, {-1.0, 0.0}, 2), ContractError);
  EXPECT_NO_THROW(roc_sweep({}, {0.0, 0.0, -1.0}, 2));
}

TEST(Roc, Grid) {
  EXPECT_EQ(threshold_grid(-2.0, 0.0, 2), (std::vector<double>{0.0, -2.0}));
  EXPECT_EQ(threshold_grid(-2.0, 0.0, 5).size(), 5u);
  EXPECT_THROW(threshold_grid(0.0, 0.0, 5), ConfigError);
  EXPECT_THROW(threshold_grid(-1.0, 0.0, 1), ConfigError);
}

TEST(Roc, NearestFarTieBreaks) {
  std::vector<RocPoint> roc{{0.0, 0.0, 1.0, 0}, {-1.0, 0.02, 0.5, 1}, {-2.0, 0.02, 0.4, 1},
                            {-3.0, 0.2, 0.1, 2}};
  const auto p = nearest_far(roc, 0.01);
  ASSERT_TRUE(p);
  EXPECT_EQ(p->threshold, -2.0);  // gap 0.01 both ways, lowest FRR wins
  EXPECT_EQ(nearest_far(roc, 0.021)->threshold, -2.0);
  std::vector<RocPoint> flat{{0.0, 0.0, 0.3, 0}, {-1.0, 0.0, 0.3, 0}};
  EXPECT_EQ(nearest_far(flat, 0.01)->threshold, 0.0);  // same FAR and FRR, larger threshold
  EXPECT_FALSE(nearest_far({{0.0, std::nullopt, 1.0, 0}}, 0.01));
}

TEST(RelativeGain, Arithmetic) {
  EXPECT_NEAR(relative_gain(100.0, 81.72), 18.28, 1e-9);
  EXPECT_EQ(relative_gain(7.0, 7.0), 0.0);
  EXPECT_EQ(relative_gain(7.0, 0.0), 100.0);
  EXPECT_LT(relative_gain(5.0, 6.0), 0.0);
  EXPECT_THROW(relative_gain(0.0, 1.0), ContractError);
  MetricsReport a, b;
  a.confusions = 10;
  b.confusions = 5;
  EXPECT_EQ(relative_gain(a, b, MetricField::kConfusions), 50.0);
}

// Re-thresholding recorded scores agrees with a streaming decode at each
// threshold on whether anything fires.
TEST(Roc, MatchesStreamingDecodeOnTriggers) {
  Rng rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    const auto cmds = oracle::random_prefix_free_commands(rng, 6, 5, 2, 4);
    const auto g = build_graph(cmds, 6);
    DecoderConfig cfg;
    cfg.beam = kInf;
    cfg.max_tokens = 1u << 20;
    std::vector<Matrix> utts;
    std::vector<Outcome> outcomes;
    for (int u = 0; u < 15; ++u) {
      utts.push_back(oracle::random_log_posteriors(25, 6, rng, 3.0));
      const auto s = observe_utterance(utts.back(), g, cfg);
      outcomes.push_back(make_outcome(kNegativeLabel, s.hypothesis, s.score));
    }
    auto thresholds = score_thresholds(outcomes);
    thresholds.push_back(thresholds.back() - 0.5);
    thresholds.insert(thresholds.begin(), thresholds.front() + 0.5);
    const auto roc = roc_sweep(outcomes, thresholds, static_cast<int>(cmds.size()));
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
      DecoderConfig stream = cfg;
      stream.trigger_threshold = thresholds[i];
      long fired = 0;
      for (const auto &lp : utts) fired += decode_utterance(lp, g, stream).empty() ? 0 : 1;
      EXPECT_DOUBLE_EQ(*roc[i].far, static_cast<double>(fired) / 15.0) << "threshold " << i;
    }
  }
}

TEST(Decision, HighestEventWins) {
  std::vector<TriggerEvent> ev(3);
  ev[0] = {2, -0.5, 3, {}};
  ev[1] = {1, -0.2, 9, {}};
  ev[2] = {0, -0.2, 12, {}};
  EXPECT_EQ(decision_from_events(ev), 0);
  EXPECT_EQ(decision_from_events({}), kReject);
}

TEST(Reports, JsonRoundTrips) {
  Rng rng(43);
  const auto o = apply_threshold(random_outcomes(rng, 3, 40), -1.0);
  const auto m = compute_metrics(o, -1.0, 3);
  EXPECT_EQ(metrics_from_json(metrics_to_json(m)), m);
  const auto roc = roc_sweep(o, score_thresholds(o), 3);
  EXPECT_EQ(roc_from_json(roc_to_json(roc)), roc);
  const auto back = outcomes_from_json(outcomes_to_json(o));
  ASSERT_EQ(back.size(), o.size());
  for (std::size_t i = 0; i < o.size(); ++i) {
    EXPECT_EQ(back[i].utt_id, o[i].utt_id);
    EXPECT_EQ(back[i].score, o[i].score);
    EXPECT_EQ(back[i].decoded, o[i].decoded);
  }
}

TEST(Reports, CsvLayouts) {
  std::ostringstream roc;
  write_roc_csv({{-0.5, 0.25, std::nullopt, 3}}, roc);
  EXPECT_EQ(roc.str(), "threshold,far,frr,confusions\n-0.5,0.25,undefined,3\n");

  const CommandSet cs = build_command_set(parse_command_list("a b\nc\n"),
                                          parse_lexicon("a\tx\nb\ty\nc\tz\n"), 1);
  std::vector<Outcome> o{make_outcome(0, 0, 0.0), make_outcome(1, 0, 0.0),
                         make_outcome(kNegativeLabel, 1, -3.0)};
  std::ostringstream conf;
  write_confusion_csv(compute_metrics(o, -1.0, 2), cs, conf);
  EXPECT_EQ(conf.str(),
            "truth,a b,c,REJECT\n"
            "a b,1,0,0\n"
            "c,1,0,0\n"
            "NEGATIVE,0,0,1\n");

  std::ostringstream log;
  write_event_log("u7", {{1, -0.25, 14, {3, 4}}}, log);
  EXPECT_EQ(log.str(),
            R"({"command_id":1,"end_frame":14,"score":-0.25,"states_path":[3,4],"utt_id":"u7"})"
            "\n");
}

}  // namespace
}  // namespace msce
