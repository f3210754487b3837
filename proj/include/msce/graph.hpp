// msce/graph.hpp

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

#ifndef MSCE_GRAPH_HPP_
#define MSCE_GRAPH_HPP_

// Search graph for a closed command list. For a finite set of commands with
// one pronunciation each, the determinized and minimized composition of HMM
// topology, lexicon and command grammar is a prefix tree over the emission
// state sequences: every node consumes one emission state, may repeat it
// (self-loop, implicit), and leaves marked final identify a command.

#include <algorithm>
#include <deque>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "msce/error.hpp"
#include "msce/lexicon.hpp"

namespace msce {

inline constexpr int kStartState = -1;

struct GraphNode {
  int id = 0;
  int emit_state = kStartState;
  std::vector<int> arcs;  // children, ascending emit_state
  bool is_final = false;
  int final_command = -1;
  int depth = 0;
  int parent = -1;

  friend bool operator==(const GraphNode &, const GraphNode &) = default;
};

struct DecodingGraph {
  std::vector<GraphNode> nodes;
  int max_command_states = 0;
  int command_count = 0;
  int output_units = 0;  // emission states + blank; blank is output_units - 1

  int blank_id() const { return output_units - 1; }
  const GraphNode &root() const { return nodes.front(); }

  friend bool operator==(const DecodingGraph &, const DecodingGraph &) = default;
};

namespace detail {
struct TrieBuilderNode {
  std::map<int, std::size_t> children;
  int command = -1;
};
}  // namespace detail

/// Builds the prefix tree over `sequences` (index = command id). Node ids are
/// assigned breadth-first with children in ascending emit_state, so a parent
/// always has a smaller id than its children.
inline DecodingGraph build_graph(const std::vector<std::vector<int>> &sequences,
                                 int output_units,
                                 const std::vector<std::string> &names = {}) {
  if (sequences.empty()) throw ContractError("build_graph: empty command set");
  auto name = [&](std::size_t i) {
    return i < names.size() ? "'" + names[i] + "'" : "command " + std::to_string(i);
  };

  std::vector<detail::TrieBuilderNode> trie(1);
  for (std::size_t c = 0; c < sequences.size(); ++c) {
    const auto &seq = sequences[c];
    if (seq.empty()) throw ContractError("build_graph: " + name(c) + " has no states");
    std::size_t cur = 0;
    for (std::size_t i = 0; i < seq.size(); ++i) {
      const int s = seq[i];
      if (s < 0 || s >= output_units - 1)
        throw ContractError("build_graph: state " + std::to_string(s) + " of " + name(c) +
                            " outside the emission state space");
      if (trie[cur].command >= 0)
        throw ConfigError("build_graph: " + name(static_cast<std::size_t>(trie[cur].command)) +
                          " is a strict prefix of " + name(c));
      auto it = trie[cur].children.find(s);
      if (it == trie[cur].children.end()) {
        trie.emplace_back();
        it = trie[cur].children.emplace(s, trie.size() - 1).first;
      }
      cur = it->second;
    }
    if (trie[cur].command >= 0)
      throw DuplicateError("build_graph: " + name(static_cast<std::size_t>(trie[cur].command)) +
                           " and " + name(c) + " have identical state sequences");
    if (!trie[cur].children.empty())
      throw ConfigError("build_graph: " + name(c) + " is a strict prefix of another command");
    trie[cur].command = static_cast<int>(c);
  }

  DecodingGraph g;
  g.command_count = static_cast<int>(sequences.size());
  g.output_units = output_units;
  for (const auto &s : sequences)
    g.max_command_states = std::max(g.max_command_states, static_cast<int>(s.size()));

  // breadth-first renumbering
  std::deque<std::pair<std::size_t, int>> queue;  // (trie index, graph id)
  g.nodes.push_back(GraphNode{});
  queue.emplace_back(0, 0);
  while (!queue.empty()) {
    auto [ti, gi] = queue.front();
    queue.pop_front();
    for (const auto &[state, child] : trie[ti].children) {
      GraphNode n;
      n.id = static_cast<int>(g.nodes.size());
      n.emit_state = state;
      n.depth = g.nodes[static_cast<std::size_t>(gi)].depth + 1;
      n.parent = gi;
      n.final_command = trie[child].command;
      n.is_final = n.final_command >= 0;
      g.nodes[static_cast<std::size_t>(gi)].arcs.push_back(n.id);
      queue.emplace_back(child, n.id);
      g.nodes.push_back(std::move(n));
    }
  }
  return g;
}

inline DecodingGraph build_graph(const CommandSet &cs) {
  std::vector<std::vector<int>> seqs;
  std::vector<std::string> names;
  for (const auto &c : cs.commands) {
    seqs.push_back(c.states);
    names.push_back(c.joined_text());
  }
  return build_graph(seqs, cs.output_units(), names);
}

struct GraphStats {
  int nodes = 0;
  int finals = 0;
  int max_depth = 0;
  double sharing_ratio = 0.0;  // 1 - nodes / (1 + total command states)
};

inline GraphStats graph_stats(const DecodingGraph &g) {
  GraphStats s;
  s.nodes = static_cast<int>(g.nodes.size());
  long total_states = 0;
  for (const auto &n : g.nodes) {
    if (n.is_final) {
      ++s.finals;
      total_states += n.depth;
    }
    s.max_depth = std::max(s.max_depth, n.depth);
  }
  s.sharing_ratio = 1.0 - static_cast<double>(s.nodes) / static_cast<double>(1 + total_states);
  return s;
}

/// Root-to-final state sequences with their command ids, lexicographic.
inline std::vector<std::pair<std::vector<int>, int>> enumerate_paths(const DecodingGraph &g) {
  std::vector<std::pair<std::vector<int>, int>> out;
  std::vector<int> path;
  // depth-first over children in ascending emit_state yields lexicographic order
  auto visit = [&](auto &&self, int id) -> void {
    const auto &n = g.nodes[static_cast<std::size_t>(id)];
    if (n.is_final) out.emplace_back(path, n.final_command);
    for (int c : n.arcs) {
      path.push_back(g.nodes[static_cast<std::size_t>(c)].emit_state);
      self(self, c);
      path.pop_back();
    }
  };
  visit(visit, 0);
  return out;
}

/// `node_id emit_state [final:command_id] -> child,child,...`
inline void dump_graph(const DecodingGraph &g, std::ostream &os) {
  for (const auto &n : g.nodes) {
    os << n.id << ' ';
    if (n.emit_state == kStartState)
      os << "START";
    else
      os << n.emit_state;
    if (n.is_final) os << " final:" << n.final_command;
    os << " ->";
    for (std::size_t i = 0; i < n.arcs.size(); ++i) os << (i ? "," : " ") << n.arcs[i];
    os << '\n';
  }
}

}  // namespace msce

#endif  // MSCE_GRAPH_HPP_
