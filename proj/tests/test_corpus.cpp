// tests/test_corpus.cpp

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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "msce/corpus.hpp"

namespace msce {
namespace {

namespace fs = std::filesystem;

CommandSet toy_commands() {
  return load_command_set(std::string(MSCE_TOY_DIR) + "/commands.txt",
                          std::string(MSCE_TOY_DIR) + "/lexicon.txt", 2);
}

SynthesisProfile toy_profile(const CommandSet &cs, std::uint64_t seed = 1, int dim = 16) {
  ProfileOptions opt;
  opt.feature_dim = dim;
  opt.confusable_pairs = {{"n", "f"}, {"m", "b"}};
  Rng rng(seed);
  return make_profile(cs, opt, rng);
}

std::string scratch_dir(const std::string &name) {
  const auto p = fs::temp_directory_path() / ("msce_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::string slurp(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

double mean_square(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s / static_cast<double>(v.size());
}

TEST(Synthesis, ZeroVarianceReproducesMeans) {
  SynthesisProfile p;
  p.feature_dim = 3;
  p.means = Matrix(4, 3, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11});
  p.stds = Matrix(4, 3, 0.0);
  p.duration_min = p.duration_max = 1;
  p.pad_max = 0;
  Rng rng(1);
  const std::vector<int> states{2, 0, 3};
  const auto u = synth_utterance(states, p, rng, 0.0);
  ASSERT_EQ(u.features.rows(), 3u);
  EXPECT_EQ(u.frame_states, states);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t f = 0; f < 3; ++f)
      EXPECT_EQ(u.features(t, f), p.means(static_cast<std::size_t>(states[t]), f));
}

TEST(Synthesis, DurationsAndPaddingWithinBounds) {
  const auto cs = toy_commands();
  const auto p = toy_profile(cs);
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    const auto &states = cs[static_cast<std::size_t>(i) % cs.size()].states;
    const auto u = synth_utterance(states, p, rng, p.noise_std);
    std::size_t lead = 0;
    while (u.frame_states[lead] == kSilenceState) ++lead;
    EXPECT_LE(lead, static_cast<std::size_t>(p.pad_max));
    std::vector<int> collapsed;
    std::vector<int> runs;
    std::size_t t = lead;
    for (; t < u.frame_states.size() && u.frame_states[t] != kSilenceState; ++t) {
      if (collapsed.empty() || collapsed.back() != u.frame_states[t]) {
        collapsed.push_back(u.frame_states[t]);
        runs.push_back(0);
      }
      ++runs.back();
    }
    EXPECT_LE(u.frame_states.size() - t, static_cast<std::size_t>(p.pad_max));
    for (int r : runs) {
      EXPECT_GE(r, p.duration_min);
      EXPECT_LE(r, p.duration_max);
    }
    EXPECT_EQ(collapsed, states);
  }
}

TEST(Synthesis, SeededDeterminism) {
  const auto cs = toy_commands();
  const auto p = toy_profile(cs);
  Rng a(7, 3), b(7, 3), c(7, 4);
  const auto ua = synth_utterance(cs[0].states, p, a, 1.0);
  const auto ub = synth_utterance(cs[0].states, p, b, 1.0);
  const auto uc = synth_utterance(cs[0].states, p, c, 1.0);
  EXPECT_EQ(ua.features, ub.features);
  EXPECT_EQ(ua.frame_states, ub.frame_states);
  EXPECT_NE(ua.features, uc.features);
}

TEST(Synthesis, NearestMeanRecoversStates) {
  const auto cs = toy_commands();
  const auto p = toy_profile(cs, 3, 40);
  Rng rng(4);
  long correct = 0, total = 0;
  for (int i = 0; i < 200; ++i) {
    const auto u = synth_utterance(cs[static_cast<std::size_t>(i) % cs.size()].states, p, rng,
                                   p.noise_std);
    for (std::size_t t = 0; t < u.frame_states.size(); ++t) {
      if (u.frame_states[t] == kSilenceState) continue;
      int best = -1;
      double best_d = 0.0;
      for (int s = 0; s < p.num_states(); ++s) {
        double d = 0.0;
        for (std::size_t f = 0; f < 40; ++f) {
          const double e = u.features(t, f) - p.means(static_cast<std::size_t>(s), f);
          d += e * e;
        }
        if (best < 0 || d < best_d) {
          best = s;
          best_d = d;
        }
      }
      correct += best == u.frame_states[t];
      ++total;
    }
  }
  EXPECT_GT(static_cast<double>(correct) / static_cast<double>(total), 0.9);
}

TEST(Profile, ConfusablePairsAtRequestedDistance) {
  const auto cs = toy_commands();
  const auto p = toy_profile(cs);
  for (const auto &[a, b] : p.confusable_pairs)
    for (int s = 0; s < cs.states_per_phone; ++s) {
      const auto sa = static_cast<std::size_t>(cs.phone_index(a) * 2 + s);
      const auto sb = static_cast<std::size_t>(cs.phone_index(b) * 2 + s);
      double d2 = 0.0;
      for (std::size_t f = 0; f < 16; ++f) d2 += std::pow(p.means(sa, f) - p.means(sb, f), 2);
      EXPECT_NEAR(std::sqrt(d2), 4.0, 1e-12);
    }
  ProfileOptions bad;
  bad.confusable_pairs = {{"n", "zz"}};
  Rng rng(1);
  EXPECT_THROW(make_profile(cs, bad, rng), ConfigError);
}

TEST(Profile, JsonRoundTrip) {
  const auto cs = toy_commands();
  const auto p = toy_profile(cs);
  const auto dir = scratch_dir("profile");
  save_profile(p, dir + "/p.json");
  const auto q = load_profile(dir + "/p.json");
  EXPECT_EQ(q.means, p.means);
  EXPECT_EQ(q.stds, p.stds);
  EXPECT_EQ(q.confusable_pairs, p.confusable_pairs);
  EXPECT_EQ(q.pad_max, p.pad_max);
}

TEST(Corpus, DefaultCountsAndByteIdenticalRegeneration) {
  const auto cs = toy_commands();
  const auto p = toy_profile(cs);
  const auto a = scratch_dir("corpus_a"), b = scratch_dir("corpus_b");
  const auto ma = synth_corpus(cs, p, CorpusCounts{}, 11, a);
  const auto mb = synth_corpus(cs, p, CorpusCounts{}, 11, b);
  ASSERT_EQ(ma.records.size(), 100u);
  EXPECT_EQ(ma.content_hash, mb.content_hash);
  EXPECT_EQ(slurp(a + "/manifest.jsonl"), slurp(b + "/manifest.jsonl"));
  for (const auto &r : ma.records) EXPECT_EQ(slurp(ma.resolve(r)), slurp(b + "/" + r.path));
  int neg = 0;
  for (const auto &r : ma.records) neg += r.is_negative();
  EXPECT_EQ(neg, 20);

  const auto read = read_manifest(a + "/manifest.jsonl");
  EXPECT_EQ(read.content_hash, ma.content_hash);
  EXPECT_EQ(read.header.phone_inventory_hash, cs.inventory_hash());
  ASSERT_EQ(read.records.size(), 100u);
  EXPECT_EQ(read.records[5].label, ma.records[5].label);

  const auto c = scratch_dir("corpus_c");
  synth_corpus(cs, p, CorpusCounts{}, 12, c);
  EXPECT_NE(slurp(c + "/utt_000000.feat"), slurp(a + "/utt_000000.feat"));
}

TEST(Corpus, PositivesCarryStatesNegativesDoNot) {
  const auto cs = toy_commands();
  const auto p = toy_profile(cs);
  const auto dir = scratch_dir("corpus_states");
  const auto m = synth_corpus(cs, p, CorpusCounts{2, 3}, 5, dir);
  for (const auto &r : m.records) {
    const auto ff = load_features(m.resolve(r));
    EXPECT_EQ(ff.frame_states.has_value(), !r.is_negative());
    if (!ff.frame_states) continue;
    std::vector<int> collapsed;
    for (int s : *ff.frame_states)
      if (s != kSilenceState && (collapsed.empty() || collapsed.back() != s)) collapsed.push_back(s);
    EXPECT_EQ(collapsed, cs[static_cast<std::size_t>(r.label)].states);
  }
}

TEST(Corpus, NegativesNeverContainACommand) {
  const auto cs = toy_commands();
  Rng rng(6);
  for (int i = 0; i < 2000; ++i) {
    const auto states = babble_states(cs, CorpusOptions{}, rng);
    for (const auto &c : cs.commands)
      EXPECT_EQ(std::search(states.begin(), states.end(), c.states.begin(), c.states.end()),
                states.end());
  }
}

TEST(Noise, RealizedSnrMatchesTarget) {
  Rng rng(8);
  Matrix x(50, 16);
  for (double &v : x.data()) v = 2.0 * rng.gaussian() + 0.5;
  for (double snr : {0.0, 20.0, 7.5}) {
    const Matrix y = augment_noise(x, rng, snr);
    std::vector<double> noise(x.size());
    for (std::size_t i = 0; i < noise.size(); ++i) noise[i] = y.data()[i] - x.data()[i];
    const double ps = mean_square(x.data()), pn = mean_square(noise);
    const double expect_pn = ps / std::pow(10.0, snr / 10.0);
    EXPECT_NEAR(pn / expect_pn, 1.0, 0.01);
    EXPECT_NEAR(10.0 * std::log10(ps / pn), snr, 0.1);
  }
  EXPECT_EQ(augment_noise(x, rng, std::numeric_limits<double>::infinity()), x);
  EXPECT_THROW(augment_noise(Matrix(3, 2), rng, 10.0), NumericError);
}

TEST(Features, RoundTripWithSilence) {
  Rng rng(9);
  Matrix x(6, 4);
  for (double &v : x.data()) v = rng.gaussian();
  const std::vector<int> states{-1, 0, 0, 3, 3, -1};
  std::stringstream ss;
  write_features(ss, x, &states);
  const auto ff = read_features(ss);
  ASSERT_TRUE(ff.frame_states);
  EXPECT_EQ(*ff.frame_states, states);
  for (std::size_t i = 0; i < x.size(); ++i)
    EXPECT_EQ(ff.features.data()[i], static_cast<double>(static_cast<float>(x.data()[i])));
  std::stringstream plain;
  write_features(plain, x);
  EXPECT_FALSE(read_features(plain).frame_states);
}

TEST(Features, Errors) {
  std::stringstream ss;
  EXPECT_THROW(write_features(ss, Matrix(0, 4)), ContractError);
  std::stringstream junk("JUNKJUNKJUNKJUNK");
  EXPECT_THROW(read_features(junk), MagicError);
  Matrix x(3, 2, 1.0);
  std::stringstream good;
  write_features(good, x);
  std::stringstream cut(good.str().substr(0, good.str().size() - 2));
  EXPECT_THROW(read_features(cut), TruncatedError);
  EXPECT_THROW(load_features("/nonexistent/file.feat"), IoError);
}

TEST(Manifest, MissingFileNamesThePath) {
  const auto dir = scratch_dir("manifest_missing");
  std::ofstream(dir + "/manifest.jsonl")
      << R"({"type":"header","feature_dim":4,"phone_inventory_hash":"x","states_per_phone":1})"
      << "\n"
      << R"({"utt_id":"u1","path":"gone.feat","label":0})" << "\n";
  try {
    read_manifest(dir + "/manifest.jsonl");
    FAIL() << "expected IoError";
  } catch (const IoError &e) {
    EXPECT_NE(std::string(e.what()).find("gone.feat"), std::string::npos);
  }
}

TEST(Manifest, DuplicateIdsAndBadLines) {
  const auto dir = scratch_dir("manifest_dup");
  save_features(dir + "/a.feat", Matrix(2, 4, 1.0));
  const std::string header =
      R"({"type":"header","feature_dim":4,"phone_inventory_hash":"x","states_per_phone":1})";
  std::ofstream(dir + "/dup.jsonl") << header << "\n"
                                     << R"({"utt_id":"u","path":"a.feat","label":0})" << "\n"
                                     << R"({"utt_id":"u","path":"a.feat","label":"NEGATIVE"})"
                                     << "\n";
  EXPECT_THROW(read_manifest(dir + "/dup.jsonl"), DuplicateError);
  std::ofstream(dir + "/bad.jsonl") << header << "\n" << "{not json\n";
  try {
    read_manifest(dir + "/bad.jsonl");
    FAIL() << "expected ParseError";
  } catch (const ParseError &e) {
    EXPECT_EQ(e.line(), 2u);
  }
  std::ofstream(dir + "/ok.jsonl") << header << "\n"
                                    << R"({"utt_id":"u","path":"a.feat","label":"NEGATIVE"})"
                                    << "\n";
  const auto m = read_manifest(dir + "/ok.jsonl");
  ASSERT_EQ(m.records.size(), 1u);
  EXPECT_TRUE(m.records[0].is_negative());
}

}  // namespace
}  // namespace msce
