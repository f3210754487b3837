// msce/lexicon.hpp

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

#ifndef MSCE_LEXICON_HPP_
#define MSCE_LEXICON_HPP_

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "msce/error.hpp"
#include "msce/numerics.hpp"

namespace msce {

using PhoneSequence = std::vector<std::string>;

/// word -> single pronunciation.
struct Lexicon {
  std::map<std::string, PhoneSequence> entries;

  bool contains(const std::string &word) const { return entries.count(word) != 0; }
  const PhoneSequence &at(const std::string &word) const {
    auto it = entries.find(word);
    if (it == entries.end()) throw OovError(word);
    return it->second;
  }
  /// Sorted, de-duplicated phones over all entries.
  std::vector<std::string> phone_inventory() const {
    std::set<std::string> phones;
    for (const auto &[word, pron] : entries) phones.insert(pron.begin(), pron.end());
    return {phones.begin(), phones.end()};
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto not_space = [](char c) { return c != ' ' && c != '\t' && c != '\r' && c != '\n'; };
  auto b = std::find_if(s.begin(), s.end(), not_space);
  auto e = std::find_if(s.rbegin(), s.rend(), not_space).base();
  return b < e ? std::string_view(&*b, static_cast<std::size_t>(e - b)) : std::string_view();
}

inline std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream is{std::string(s)};
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

inline std::ifstream open_input(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return in;
}

}  // namespace detail

/// Lines are `word<TAB>phone phone ...`; blank lines and lines starting with
/// '#' are ignored.
inline Lexicon parse_lexicon(std::istream &in) {
  Lexicon lex;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = detail::trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto tab = body.find('\t');
    if (tab == std::string_view::npos)
      throw ParseError("lexicon entry has no TAB separator", line_no);
    const std::string word(detail::trim(body.substr(0, tab)));
    if (word.empty()) throw ParseError("lexicon entry has an empty word", line_no);
    auto phones = detail::split_ws(body.substr(tab + 1));
    if (phones.empty())
      throw ParseError("lexicon entry for '" + word + "' has no phones", line_no);
    if (!lex.entries.emplace(word, std::move(phones)).second)
      throw DuplicateError("line " + std::to_string(line_no) + ": duplicate lexicon word '" +
                           word + "' (multiple pronunciations are not supported)");
  }
  return lex;
}

inline Lexicon parse_lexicon(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_lexicon(in);
}

inline Lexicon load_lexicon(const std::string &path) {
  auto in = detail::open_input(path);
  return parse_lexicon(in);
}

/// One command per line, words separated by spaces; '#' starts a comment line.
inline std::vector<std::vector<std::string>> parse_command_list(std::istream &in) {
  std::vector<std::vector<std::string>> commands;
  std::string line;
  while (std::getline(in, line)) {
    const auto body = detail::trim(line);
    if (body.empty() || body.front() == '#') continue;
    commands.push_back(detail::split_ws(body));
  }
  return commands;
}

inline std::vector<std::vector<std::string>> parse_command_list(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_command_list(in);
}

struct Command {
  int id = 0;
  std::vector<std::string> text;
  PhoneSequence phones;
  std::vector<int> phone_ids;
  /// Emission-state ids: phone p expands to p*S ... p*S + S - 1.
  std::vector<int> states;

  std::string joined_text() const {
    std::string out;
    for (const auto &w : text) {
      if (!out.empty()) out += ' ';
      out += w;
    }
    return out;
  }
};

inline Command expand_command(const std::vector<std::string> &words, const Lexicon &lexicon,
                              const std::vector<std::string> &phone_inventory,
                              int states_per_phone, int id = 0) {
  if (states_per_phone < 1) throw ConfigError("states_per_phone must be >= 1");
  if (words.empty()) throw ContractError("expand_command: empty command text");
  Command cmd;
  cmd.id = id;
  cmd.text = words;
  for (const auto &w : words) {
    const auto &pron = lexicon.at(w);
    cmd.phones.insert(cmd.phones.end(), pron.begin(), pron.end());
  }
  for (const auto &p : cmd.phones) {
    auto it = std::lower_bound(phone_inventory.begin(), phone_inventory.end(), p);
    if (it == phone_inventory.end() || *it != p)
      throw ContractError("phone '" + p + "' missing from the phone inventory");
    const int idx = static_cast<int>(it - phone_inventory.begin());
    cmd.phone_ids.push_back(idx);
    for (int s = 0; s < states_per_phone; ++s) cmd.states.push_back(idx * states_per_phone + s);
  }
  return cmd;
}

inline Command expand_command(const std::vector<std::string> &words, const Lexicon &lexicon,
                              int states_per_phone) {
  return expand_command(words, lexicon, lexicon.phone_inventory(), states_per_phone);
}

/// The closed set of commands the recognizer and the discriminative loss
/// operate over. Output unit layout: emission states 0 .. num_states()-1,
/// then blank.
struct CommandSet {
  std::vector<Command> commands;
  std::vector<std::string> phone_inventory;
  int states_per_phone = 5;

  std::size_t size() const { return commands.size(); }
  const Command &operator[](std::size_t i) const { return commands[i]; }
  int num_states() const {
    return static_cast<int>(phone_inventory.size()) * states_per_phone;
  }
  int blank_id() const { return num_states(); }
  int output_units() const { return num_states() + 1; }

  int phone_index(const std::string &phone) const {
    auto it = std::lower_bound(phone_inventory.begin(), phone_inventory.end(), phone);
    if (it == phone_inventory.end() || *it != phone) return -1;
    return static_cast<int>(it - phone_inventory.begin());
  }

  /// Stable fingerprint of the state space, recorded in corpus manifests.
  std::string inventory_hash() const {
    std::string blob = std::to_string(states_per_phone);
    for (const auto &p : phone_inventory) blob += "\x1f" + p;
    return hex64(fnv1a64(blob));
  }
};

inline CommandSet build_command_set(const std::vector<std::vector<std::string>> &texts,
                                    const Lexicon &lexicon, int states_per_phone) {
  CommandSet cs;
  cs.phone_inventory = lexicon.phone_inventory();
  cs.states_per_phone = states_per_phone;
  std::set<std::vector<std::string>> seen;
  for (const auto &words : texts) {
    if (!seen.insert(words).second) {
      std::string joined;
      for (const auto &w : words) joined += (joined.empty() ? "" : " ") + w;
      throw DuplicateError("duplicate command '" + joined + "'");
    }
    cs.commands.push_back(expand_command(words, lexicon, cs.phone_inventory, states_per_phone,
                                         static_cast<int>(cs.commands.size())));
  }
  return cs;
}

inline CommandSet load_command_set(const std::string &commands_path,
                                   const std::string &lexicon_path, int states_per_phone) {
  auto in = detail::open_input(commands_path);
  return build_command_set(parse_command_list(in), load_lexicon(lexicon_path),
                           states_per_phone);
}

/// Unit-cost edit distance between two symbol sequences.
template <typename T>
std::size_t levenshtein(std::span<const T> a, std::span<const T> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline std::size_t phone_levenshtein(const PhoneSequence &a, const PhoneSequence &b) {
  return levenshtein<std::string>(a, b);
}

enum class ConfusionStrategy { kPss, kRss, kHs };

inline ConfusionStrategy parse_strategy(const std::string &name) {
  std::string up = name;
  std::transform(up.begin(), up.end(), up.begin(), [](unsigned char c) { return std::toupper(c); });
  if (up == "PSS") return ConfusionStrategy::kPss;
  if (up == "RSS") return ConfusionStrategy::kRss;
  if (up == "HS") return ConfusionStrategy::kHs;
  throw ConfigError("unknown confusion strategy '" + name + "' (expected PSS, RSS or HS)");
}

inline std::string strategy_name(ConfusionStrategy s) {
  switch (s) {
    case ConfusionStrategy::kPss: return "PSS";
    case ConfusionStrategy::kRss: return "RSS";
    case ConfusionStrategy::kHs: return "HS";
  }
  return "?";
}

struct ConfusionSetConfig {
  ConfusionStrategy strategy = ConfusionStrategy::kHs;
  int n = 4;
  std::uint64_t rng_stream = 0;
};

inline void check_confuser_count(const CommandSet &cs, int n) {
  if (n < 1 || static_cast<std::size_t>(n) + 1 > cs.size())
    throw ConfigError("confuser count N=" + std::to_string(n) + " out of range [1, " +
                      std::to_string(static_cast<long>(cs.size()) - 1) + "]");
}

/// Fixed top-N most similar commands per target.
struct PssTable {
  std::vector<std::vector<int>> confusers;
  std::vector<std::vector<std::size_t>> distances;

  const std::vector<int> &operator[](int target) const {
    return confusers.at(static_cast<std::size_t>(target));
  }
  friend bool operator==(const PssTable &, const PssTable &) = default;
};

/// For every target, the n non-target commands of smallest phone-level
/// Levenshtein distance, ordered by (distance, command id).
inline PssTable build_pss_sets(const CommandSet &cs, int n) {
  check_confuser_count(cs, n);
  const std::size_t m = cs.size();
  std::vector<std::vector<std::size_t>> dist(m, std::vector<std::size_t>(m, 0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j)
      dist[i][j] = dist[j][i] = phone_levenshtein(cs[i].phones, cs[j].phones);

  PssTable table;
  for (std::size_t t = 0; t < m; ++t) {
    std::vector<int> others;
    for (std::size_t j = 0; j < m; ++j)
      if (j != t) others.push_back(static_cast<int>(j));
    std::stable_sort(others.begin(), others.end(), [&](int a, int b) {
      return dist[t][static_cast<std::size_t>(a)] < dist[t][static_cast<std::size_t>(b)];
    });
    others.resize(static_cast<std::size_t>(n));
    std::vector<std::size_t> d;
    for (int o : others) d.push_back(dist[t][static_cast<std::size_t>(o)]);
    table.confusers.push_back(std::move(others));
    table.distances.push_back(std::move(d));
  }
  return table;
}

namespace detail {
inline std::vector<int> non_target_ids(std::size_t count, int target) {
  std::vector<int> ids;
  for (int i = 0; i < static_cast<int>(count); ++i)
    if (i != target) ids.push_back(i);
  return ids;
}
}  // namespace detail

/// Uniform n-subset of the non-target commands, returned sorted.
inline std::vector<int> sample_rss(const CommandSet &cs, int target, int n, Rng &rng) {
  check_confuser_count(cs, n);
  auto picked = rng.sample(detail::non_target_ids(cs.size(), target), static_cast<std::size_t>(n));
  std::sort(picked.begin(), picked.end());
  return picked;
}

/// Hybrid draw with a given split: `from_similar` ids from the PSS pool, the
/// rest from the full non-target pool, redrawing on overlap.
inline std::vector<int> sample_hs_split(const CommandSet &cs, int target, int n,
                                        const std::vector<int> &pss_pool, int from_similar,
                                        Rng &rng) {
  check_confuser_count(cs, n);
  if (pss_pool.size() < static_cast<std::size_t>(n))
    throw ConfigError("HS: similarity pool for command " + std::to_string(target) +
                      " has fewer than N entries");
  if (from_similar < 0 || from_similar > n) throw ContractError("HS: split out of range");
  std::vector<int> pool;
  for (int id : pss_pool)
    if (id != target) pool.push_back(id);
  if (pool.size() < static_cast<std::size_t>(from_similar))
    throw ConfigError("HS: similarity pool contains the target");

  std::vector<int> picked = rng.sample(pool, static_cast<std::size_t>(from_similar));
  std::vector<int> remaining = detail::non_target_ids(cs.size(), target);
  while (picked.size() < static_cast<std::size_t>(n)) {
    if (remaining.empty()) throw ConfigError("HS: not enough distinct non-target commands");
    const std::size_t j = static_cast<std::size_t>(rng.uniform_int(remaining.size()));
    const int candidate = remaining[j];
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(j));
    if (std::find(picked.begin(), picked.end(), candidate) == picked.end())
      picked.push_back(candidate);
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

/// Hybrid strategy: split i drawn uniformly from {0, ..., n} per call.
inline std::vector<int> sample_hs(const CommandSet &cs, int target, int n,
                                  const std::vector<int> &pss_pool, Rng &rng) {
  check_confuser_count(cs, n);
  const int i = rng.uniform_int(0, n);
  return sample_hs_split(cs, target, n, pss_pool, i, rng);
}

/// Draws confusing sets under one strategy. The PSS table is built once.
class ConfusionSampler {
 public:
  ConfusionSampler(const CommandSet &cs, ConfusionSetConfig config)
      : cs_(&cs), config_(config), pss_(build_pss_sets(cs, config.n)) {}

  const PssTable &pss_table() const { return pss_; }
  const ConfusionSetConfig &config() const { return config_; }

  std::vector<int> draw(int target, Rng &rng) const {
    switch (config_.strategy) {
      case ConfusionStrategy::kPss: {
        auto ids = pss_[target];
        std::sort(ids.begin(), ids.end());
        return ids;
      }
      case ConfusionStrategy::kRss:
        return sample_rss(*cs_, target, config_.n, rng);
      case ConfusionStrategy::kHs:
        return sample_hs(*cs_, target, config_.n, pss_[target], rng);
    }
    return {};
  }

 private:
  const CommandSet *cs_;
  ConfusionSetConfig config_;
  PssTable pss_;
};

/// `target_id: id,id,... # distances d,d,...`
inline void dump_confusion_sets(const PssTable &table, std::ostream &os) {
  for (std::size_t t = 0; t < table.confusers.size(); ++t) {
    os << t << ':';
    for (std::size_t k = 0; k < table.confusers[t].size(); ++k)
      os << (k ? "," : " ") << table.confusers[t][k];
    os << " # distances";
    for (std::size_t k = 0; k < table.distances[t].size(); ++k)
      os << (k ? "," : " ") << table.distances[t][k];
    os << '\n';
  }
}

}  // namespace msce

#endif  // MSCE_LEXICON_HPP_
