// msce/corpus.hpp

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

#ifndef MSCE_CORPUS_HPP_
#define MSCE_CORPUS_HPP_

// Synthetic speech-command corpus and the on-disk dataset formats.
//
// Each emission state owns a diagonal Gaussian over F-dimensional feature
// frames. An utterance walks a state sequence, holding each state for a
// random number of frames, with noise-only padding before and after. A
// confusability dial places the states of chosen phone pairs at a fixed
// Euclidean distance from each other.
//
// Feature file (little-endian):
//   "FEAT" | u32 version=1 | u32 T | u32 F | T*F f32 row-major
//   optionally followed by "STAT" | u32 T | T u32 frame states
// Padding frames are stored as 0xFFFFFFFF (kSilenceState in memory).
//
// Manifest: JSON lines; the first line is the header object, every further
// line one utterance record. Paths are relative to the manifest directory.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <cstdio>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "msce/error.hpp"
#include "msce/lexicon.hpp"
#include "msce/model.hpp"
#include "msce/numerics.hpp"

namespace msce {

inline constexpr int kSilenceState = -1;
inline constexpr int kNegativeLabel = -1;

// ---------------------------------------------------------------------------
// feature files

inline constexpr std::uint32_t kFeatureVersion = 1;

struct FeatureFile {
  Matrix features;
  std::optional<std::vector<int>> frame_states;
};

inline void write_features(std::ostream &os, const Matrix &features,
                           const std::vector<int> *frame_states = nullptr) {
  if (features.rows() == 0) throw ContractError("write_features: T = 0");
  if (frame_states && frame_states->size() != features.rows())
    throw ShapeError("write_features: frame_states length != T");
  os.write("FEAT", 4);
  detail::put<std::uint32_t>(os, kFeatureVersion);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(features.rows()));
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(features.cols()));
  const auto f32 = detail::to_f32(features.data());
  os.write(reinterpret_cast<const char *>(f32.data()),
           static_cast<std::streamsize>(f32.size() * sizeof(float)));
  if (frame_states) {
    os.write("STAT", 4);
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(frame_states->size()));
    for (int s : *frame_states)
      detail::put<std::uint32_t>(
          os, s == kSilenceState ? std::numeric_limits<std::uint32_t>::max()
                                 : static_cast<std::uint32_t>(s));
  }
}

inline FeatureFile read_features(std::istream &is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4)) throw TruncatedError("truncated feature header");
  if (std::string(magic.data(), 4) != "FEAT") throw MagicError("not a feature file (bad magic)");
  const auto version = detail::get<std::uint32_t>(is, "feature version");
  if (version != kFeatureVersion)
    throw VersionError("unsupported feature file version " + std::to_string(version));
  const auto T = detail::get<std::uint32_t>(is, "frame count");
  const auto F = detail::get<std::uint32_t>(is, "feature dim");
  if (T == 0) throw FormatError("feature file has no frames");
  std::vector<float> data(static_cast<std::size_t>(T) * F);
  if (!is.read(reinterpret_cast<char *>(data.data()),
               static_cast<std::streamsize>(data.size() * sizeof(float))))
    throw TruncatedError("truncated feature data");
  FeatureFile ff;
  ff.features = Matrix(T, F, std::vector<double>(data.begin(), data.end()));

  std::array<char, 4> tag{};
  is.read(tag.data(), 4);
  if (is.gcount() == 0) return ff;
  if (is.gcount() != 4) throw TruncatedError("truncated trailing block tag");
  if (std::string(tag.data(), 4) != "STAT") throw MagicError("unknown trailing block in feature file");
  const auto n = detail::get<std::uint32_t>(is, "state count");
  if (n != T) throw FormatError("frame state block length != T");
  std::vector<int> states(n);
  for (auto &s : states) {
    const auto v = detail::get<std::uint32_t>(is, "frame states");
    s = v == std::numeric_limits<std::uint32_t>::max() ? kSilenceState : static_cast<int>(v);
  }
  ff.frame_states = std::move(states);
  return ff;
}

inline void save_features(const std::string &path, const Matrix &features,
                          const std::vector<int> *frame_states = nullptr) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  write_features(os, features, frame_states);
  if (!os) throw IoError("write failed for '" + path + "'");
}

inline FeatureFile load_features(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open feature file '" + path + "'");
  return read_features(is);
}

// ---------------------------------------------------------------------------
// synthesis profile

struct SynthesisProfile {
  int feature_dim = 40;
  int states_per_phone = 5;
  Matrix means;  // num_states x F
  Matrix stds;   // num_states x F
  int duration_min = 2;
  int duration_max = 6;
  int pad_max = 5;
  double noise_std = 1.0;
  std::vector<std::pair<std::string, std::string>> confusable_pairs;
  double confusable_distance = 0.0;

  int num_states() const { return static_cast<int>(means.rows()); }

  void validate() const {
    if (duration_min < 1 || duration_max < duration_min)
      throw ConfigError("profile: need 1 <= duration_min <= duration_max");
    if (pad_max < 0) throw ConfigError("profile: pad_max must be >= 0");
    if (means.rows() != stds.rows() || means.cols() != stds.cols() ||
        means.cols() != static_cast<std::size_t>(feature_dim))
      throw ConfigError("profile: mean/std shape mismatch");
    for (double s : stds.data())
      if (!(s > 0.0)) throw ConfigError("profile: standard deviations must be > 0");
  }

  nlohmann::json to_json() const {
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto &[a, b] : confusable_pairs) pairs.push_back({a, b});
    return {{"feature_dim", feature_dim},
            {"states_per_phone", states_per_phone},
            {"num_states", num_states()},
            {"means", means.data()},
            {"stds", stds.data()},
            {"duration_min", duration_min},
            {"duration_max", duration_max},
            {"pad_max", pad_max},
            {"noise_std", noise_std},
            {"confusable_pairs", pairs},
            {"confusable_distance", confusable_distance}};
  }

  static SynthesisProfile from_json(const nlohmann::json &j) {
    SynthesisProfile p;
    p.feature_dim = j.at("feature_dim").get<int>();
    p.states_per_phone = j.at("states_per_phone").get<int>();
    const auto n = j.at("num_states").get<std::size_t>();
    const auto F = static_cast<std::size_t>(p.feature_dim);
    p.means = Matrix(n, F, j.at("means").get<std::vector<double>>());
    p.stds = Matrix(n, F, j.at("stds").get<std::vector<double>>());
    p.duration_min = j.at("duration_min").get<int>();
    p.duration_max = j.at("duration_max").get<int>();
    p.pad_max = j.at("pad_max").get<int>();
    p.noise_std = j.at("noise_std").get<double>();
    for (const auto &pr : j.value("confusable_pairs", nlohmann::json::array()))
      p.confusable_pairs.emplace_back(pr.at(0).get<std::string>(), pr.at(1).get<std::string>());
    p.confusable_distance = j.value("confusable_distance", 0.0);
    p.validate();
    return p;
  }
};

struct ProfileOptions {
  int feature_dim = 40;
  double mean_scale = 1.0;  // per-dimension std of state means
  double state_std = 0.5;
  int duration_min = 2;
  int duration_max = 6;
  int pad_max = 5;
  double noise_std = 1.0;
  std::vector<std::pair<std::string, std::string>> confusable_pairs;
  double confusable_distance = 4.0;
};

/// Random state means; for each confusable pair (p, q) the states of q are
/// placed at exactly `confusable_distance` from the matching states of p
/// along a random direction.
inline SynthesisProfile make_profile(const CommandSet &cs, const ProfileOptions &opt, Rng &rng) {
  if (opt.feature_dim < 1) throw ConfigError("feature_dim must be >= 1");
  SynthesisProfile p;
  p.feature_dim = opt.feature_dim;
  p.states_per_phone = cs.states_per_phone;
  p.duration_min = opt.duration_min;
  p.duration_max = opt.duration_max;
  p.pad_max = opt.pad_max;
  p.noise_std = opt.noise_std;
  p.confusable_pairs = opt.confusable_pairs;
  p.confusable_distance = opt.confusable_distance;
  const auto S = static_cast<std::size_t>(cs.num_states());
  const auto F = static_cast<std::size_t>(opt.feature_dim);
  p.means = Matrix(S, F);
  p.stds = Matrix(S, F, opt.state_std);
  for (double &v : p.means.data()) v = opt.mean_scale * rng.gaussian();

  for (const auto &[a, b] : opt.confusable_pairs) {
    const int pa = cs.phone_index(a), pb = cs.phone_index(b);
    if (pa < 0 || pb < 0) throw ConfigError("confusable pair names an unknown phone: " + a + "/" + b);
    if (pa == pb) throw ConfigError("confusable pair must name two different phones");
    for (int s = 0; s < cs.states_per_phone; ++s) {
      const auto sa = static_cast<std::size_t>(pa * cs.states_per_phone + s);
      const auto sb = static_cast<std::size_t>(pb * cs.states_per_phone + s);
      std::vector<double> dir(F);
      double norm = 0.0;
      for (auto &d : dir) {
        d = rng.gaussian();
        norm += d * d;
      }
      norm = std::sqrt(norm);
      for (std::size_t f = 0; f < F; ++f)
        p.means(sb, f) = p.means(sa, f) + opt.confusable_distance * dir[f] / norm;
    }
  }
  p.validate();
  return p;
}

inline void save_profile(const SynthesisProfile &p, const std::string &path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << p.to_json().dump() << '\n';
}

inline SynthesisProfile load_profile(const std::string &path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open profile '" + path + "'");
  try {
    return SynthesisProfile::from_json(nlohmann::json::parse(is));
  } catch (const nlohmann::json::exception &e) {
    throw FormatError("bad profile '" + path + "': " + e.what());
  }
}

// ---------------------------------------------------------------------------
// utterance synthesis

struct SynthUtterance {
  Matrix features;
  std::vector<int> frame_states;  // kSilenceState on padding
};

inline SynthUtterance synth_utterance(std::span<const int> states, const SynthesisProfile &profile,
                                      Rng &rng, double noise_std) {
  const auto F = static_cast<std::size_t>(profile.feature_dim);
  for (int s : states)
    if (s < 0 || s >= profile.num_states())
      throw ContractError("synth_utterance: state " + std::to_string(s) + " not in profile");
  std::vector<int> frame_states;
  const int lead = rng.uniform_int(0, profile.pad_max);
  frame_states.insert(frame_states.end(), static_cast<std::size_t>(lead), kSilenceState);
  for (int s : states) {
    const int dur = rng.uniform_int(profile.duration_min, profile.duration_max);
    frame_states.insert(frame_states.end(), static_cast<std::size_t>(dur), s);
  }
  const int trail = rng.uniform_int(0, profile.pad_max);
  frame_states.insert(frame_states.end(), static_cast<std::size_t>(trail), kSilenceState);

  SynthUtterance u{Matrix(frame_states.size(), F), std::move(frame_states)};
  for (std::size_t t = 0; t < u.frame_states.size(); ++t) {
    const int s = u.frame_states[t];
    for (std::size_t f = 0; f < F; ++f) {
      double v = noise_std * rng.gaussian();
      if (s != kSilenceState) {
        const auto si = static_cast<std::size_t>(s);
        v += profile.means(si, f) + profile.stds(si, f) * rng.gaussian();
      }
      u.features(t, f) = v;
    }
  }
  return u;
}

/// Adds Gaussian noise whose realized power is exactly signal_power /
/// 10^(snr_db / 10), powers being mean squares over all cells. +inf is the
/// identity.
inline Matrix augment_noise(const Matrix &features, Rng &rng, double snr_db) {
  if (std::isinf(snr_db) && snr_db > 0) return features;
  if (!std::isfinite(snr_db)) throw ContractError("augment_noise: snr_db must be finite or +inf");
  if (features.empty()) throw ContractError("augment_noise: empty input");
  double signal = 0.0;
  for (double v : features.data()) signal += v * v;
  signal /= static_cast<double>(features.size());
  if (!(signal > 0.0)) throw NumericError("augment_noise: input has zero power");
  std::vector<double> noise(features.size());
  double realized = 0.0;
  for (auto &n : noise) {
    n = rng.gaussian();
    realized += n * n;
  }
  realized /= static_cast<double>(noise.size());
  const double scale = std::sqrt(signal / std::pow(10.0, snr_db / 10.0) / realized);
  Matrix out = features;
  for (std::size_t i = 0; i < noise.size(); ++i) out.data()[i] += scale * noise[i];
  return out;
}

// ---------------------------------------------------------------------------
// manifests

struct UtteranceRecord {
  std::string utt_id;
  std::string path;  // relative to the manifest directory
  int label = kNegativeLabel;
  std::optional<double> snr_db;

  bool is_negative() const { return label == kNegativeLabel; }
};

struct ManifestHeader {
  int feature_dim = 0;
  std::string phone_inventory_hash;
  int states_per_phone = 0;
};

struct Manifest {
  ManifestHeader header;
  std::vector<UtteranceRecord> records;
  std::string base_dir;  // directory of the manifest file
  std::string content_hash;

  std::string resolve(const UtteranceRecord &r) const {
    return (std::filesystem::path(base_dir) / r.path).string();
  }
};

inline std::string manifest_text(const Manifest &m) {
  std::string out = nlohmann::json{{"type", "header"},
                                   {"feature_dim", m.header.feature_dim},
                                   {"phone_inventory_hash", m.header.phone_inventory_hash},
                                   {"states_per_phone", m.header.states_per_phone}}
                        .dump() +
                    "\n";
  for (const auto &r : m.records) {
    nlohmann::json j{{"utt_id", r.utt_id}, {"path", r.path}};
    if (r.is_negative())
      j["label"] = "NEGATIVE";
    else
      j["label"] = r.label;
    if (r.snr_db) j["snr_db"] = *r.snr_db;
    out += j.dump() + "\n";
  }
  return out;
}

inline void write_manifest(const Manifest &m, const std::string &path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << manifest_text(m);
}

/// Parses the manifest and checks every referenced feature file exists.
inline Manifest read_manifest(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open manifest '" + path + "'");
  std::stringstream buf;
  buf << is.rdbuf();
  const std::string text = buf.str();

  Manifest m;
  m.base_dir = std::filesystem::path(path).parent_path().string();
  m.content_hash = hex64(fnv1a64(text));
  std::istringstream lines(text);
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  std::set<std::string> ids;
  while (std::getline(lines, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception &e) {
      throw ParseError(std::string("manifest: ") + e.what(), line_no);
    }
    if (!have_header) {
      if (j.value("type", "") != "header") throw ParseError("manifest: missing header line", line_no);
      m.header.feature_dim = j.at("feature_dim").get<int>();
      m.header.phone_inventory_hash = j.at("phone_inventory_hash").get<std::string>();
      m.header.states_per_phone = j.at("states_per_phone").get<int>();
      have_header = true;
      continue;
    }
    UtteranceRecord r;
    r.utt_id = j.at("utt_id").get<std::string>();
    r.path = j.at("path").get<std::string>();
    const auto &label = j.at("label");
    if (label.is_string()) {
      if (label.get<std::string>() != "NEGATIVE")
        throw ParseError("manifest: label must be a command id or \"NEGATIVE\"", line_no);
      r.label = kNegativeLabel;
    } else {
      r.label = label.get<int>();
      if (r.label < 0) throw ParseError("manifest: negative command id", line_no);
    }
    if (j.contains("snr_db")) r.snr_db = j.at("snr_db").get<double>();
    if (!ids.insert(r.utt_id).second)
      throw DuplicateError("manifest: duplicate utt_id '" + r.utt_id + "'");
    if (!std::filesystem::exists(m.resolve(r)))
      throw IoError("manifest references missing file '" + m.resolve(r) + "'");
    m.records.push_back(std::move(r));
  }
  if (!have_header) throw ParseError("manifest: empty file, header missing", line_no);
  return m;
}

// ---------------------------------------------------------------------------
// corpus generation

struct CorpusCounts {
  int positives_per_command = 10;
  int negatives = 20;
};

struct CorpusOptions {
  int negative_min_phones = 2;
  int negative_max_phones = 4;
  /// When non-empty, each utterance is augmented at an SNR drawn uniformly
  /// from this list.
  std::vector<double> snr_db_choices;
};

namespace detail {
inline bool contains_subsequence(const std::vector<int> &hay, const std::vector<int> &needle) {
  return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

inline std::string utt_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "utt_%06zu", index);
  return buf;
}
}  // namespace detail

/// Random phone sequence expanded to states that contains no command's
/// phone sequence as a contiguous run (and so equals no command).
inline std::vector<int> babble_states(const CommandSet &cs, const CorpusOptions &opt, Rng &rng) {
  const int num_phones = static_cast<int>(cs.phone_inventory.size());
  for (int attempt = 0; attempt < 10000; ++attempt) {
    const int len = rng.uniform_int(opt.negative_min_phones, opt.negative_max_phones);
    std::vector<int> phones(static_cast<std::size_t>(len));
    for (auto &p : phones) p = rng.uniform_int(0, num_phones - 1);
    bool clash = false;
    for (const auto &c : cs.commands)
      if (detail::contains_subsequence(phones, c.phone_ids)) {
        clash = true;
        break;
      }
    if (clash) continue;
    std::vector<int> states;
    for (int p : phones)
      for (int s = 0; s < cs.states_per_phone; ++s) states.push_back(p * cs.states_per_phone + s);
    return states;
  }
  throw ConfigError("could not draw a negative phone sequence distinct from every command");
}

/// Writes utt_NNNNNN.feat files and manifest.jsonl into out_dir. Positives
/// come first, command by command, then negatives; utterance i draws from
/// stream i of the seed.
inline Manifest synth_corpus(const CommandSet &cs, const SynthesisProfile &profile,
                             const CorpusCounts &counts, std::uint64_t seed,
                             const std::string &out_dir, const CorpusOptions &opt = {}) {
  profile.validate();
  if (profile.num_states() != cs.num_states())
    throw ConfigError("profile state count does not match the command set");
  if (counts.positives_per_command < 0 || counts.negatives < 0)
    throw ConfigError("corpus counts must be >= 0");
  std::filesystem::create_directories(out_dir);

  Manifest m;
  m.base_dir = out_dir;
  m.header = {profile.feature_dim, cs.inventory_hash(), cs.states_per_phone};
  const Rng root(seed, 0x636f72707573ULL);
  std::size_t index = 0;
  auto emit = [&](int label) {
    Rng rng = root.derive(index);
    const std::vector<int> states =
        label == kNegativeLabel ? babble_states(cs, opt, rng)
                                : cs[static_cast<std::size_t>(label)].states;
    SynthUtterance u = synth_utterance(states, profile, rng, profile.noise_std);
    UtteranceRecord r;
    r.utt_id = detail::utt_name(index);
    r.path = r.utt_id + ".feat";
    r.label = label;
    if (!opt.snr_db_choices.empty()) {
      const double snr = opt.snr_db_choices[rng.uniform_int(opt.snr_db_choices.size())];
      u.features = augment_noise(u.features, rng, snr);
      r.snr_db = snr;
    }
    save_features(m.resolve(r), u.features,
                  label == kNegativeLabel ? nullptr : &u.frame_states);
    m.records.push_back(std::move(r));
    ++index;
  };
  for (std::size_t c = 0; c < cs.size(); ++c)
    for (int i = 0; i < counts.positives_per_command; ++i) emit(static_cast<int>(c));
  for (int i = 0; i < counts.negatives; ++i) emit(kNegativeLabel);

  const std::string path = (std::filesystem::path(out_dir) / "manifest.jsonl").string();
  write_manifest(m, path);
  m.content_hash = hex64(fnv1a64(manifest_text(m)));
  return m;
}

}  // namespace msce

#endif  // MSCE_CORPUS_HPP_
