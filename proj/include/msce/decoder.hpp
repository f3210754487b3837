// msce/decoder.hpp

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

#ifndef MSCE_DECODER_HPP_
#define MSCE_DECODER_HPP_

// One-pass token-passing Viterbi search over a DecodingGraph.
//
// Scores are log-posteriors (higher is better). The root token persists,
// scoring the blank on every frame it waits, so a command may start at any
// frame and all live tokens cover the same frames. Each frame a
// token either stays on its node (self-loop) or advances to a child; tokens
// meeting on a node are recombined keeping the best score. Instead of back
// pointers each token carries a fixed-length array (one slot per state of the
// longest command) holding the states entered so far, so the recognized path
// is read straight from the token when it triggers.
//
// Two token lists (current and next frame) plus their output arrays are
// allocated once in the constructor; decode_step never allocates.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msce/error.hpp"
#include "msce/graph.hpp"

namespace msce {

struct DecoderConfig {
  double beam = 12.0;
  double trigger_threshold = -1.0;  // minimum average per-state log-score
  bool blank_absorb = true;
  std::size_t max_tokens = 2000;

  void validate() const {
    if (!(beam > 0.0)) throw ConfigError("beam must be > 0");
    if (max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
  }
};

struct TriggerEvent {
  int command = -1;
  double score = 0.0;  // average log-score per state
  long end_frame = 0;
  std::vector<int> states_path;
};

/// Best complete hypothesis in the current token list.
struct FinalHypothesis {
  int command = -1;
  double score = 0.0;  // average per state
  double acc_log_score = 0.0;
  int node = -1;
};

class Decoder {
 public:
  struct Token {
    int node = 0;
    double acc_log_score = 0.0;
    long frames = 0;
    int states_entered = 0;
    std::size_t slot = 0;  // row of the owning list's output buffer
  };

  Decoder(const DecodingGraph &graph, DecoderConfig config)
      : graph_(&graph), config_(config) {
    config_.validate();
    if (graph.nodes.empty()) throw ContractError("Decoder: empty graph");
    const std::size_t n = graph.nodes.size();
    width_ = static_cast<std::size_t>(std::max(1, graph.max_command_states));
    cur_.reserve(n);
    next_.reserve(n);
    cur_out_.assign(n * width_, -1);
    next_out_.assign(n * width_, -1);
    node_slot_.assign(n, -1);
    from_node_.assign(n, 0);
    reset();
  }

  const DecoderConfig &config() const { return config_; }
  const DecodingGraph &graph() const { return *graph_; }

  /// Back to a single root token; the frame counter restarts at 0.
  void reset() {
    restart();
    frame_ = 0;
  }

  std::size_t num_tokens() const { return cur_.size(); }
  const std::vector<Token> &tokens() const { return cur_; }
  long frames_decoded() const { return frame_; }

  /// Output array of a token in the current list.
  std::span<const int> output_of(const Token &tok) const {
    return {cur_out_.data() + tok.slot * width_, width_};
  }

  std::optional<FinalHypothesis> best_final() const {
    std::optional<FinalHypothesis> best;
    for (const auto &tok : cur_) {
      const auto &node = graph_->nodes[static_cast<std::size_t>(tok.node)];
      if (!node.is_final) continue;
      const double avg = tok.acc_log_score / static_cast<double>(tok.states_entered);
      if (!best || avg > best->score ||
          (avg == best->score && node.final_command < best->command))
        best = FinalHypothesis{node.final_command, avg, tok.acc_log_score, tok.node};
    }
    return best;
  }

  /// Consumes one frame of U log-posteriors. Returns an event when a final
  /// token's average score reaches the trigger threshold; the search then
  /// restarts from the root.
  std::optional<TriggerEvent> decode_step(std::span<const double> frame) {
    if (frame.size() != static_cast<std::size_t>(graph_->output_units))
      throw ShapeError("decode_step: frame has " + std::to_string(frame.size()) +
                       " values, graph expects " + std::to_string(graph_->output_units));
    const double blank = frame[static_cast<std::size_t>(graph_->blank_id())];
    next_.clear();

    for (const auto &tok : cur_) {
      const auto &node = graph_->nodes[static_cast<std::size_t>(tok.node)];
      const int *src_out = cur_out_.data() + tok.slot * width_;
      if (node.emit_state == kStartState) {
        // the start node waits on blank, so every token has consumed the
        // same frames and beam comparisons are fair
        relax(tok.node, tok.acc_log_score + blank, tok.frames + 1, 0, src_out, -1, tok.node);
      } else {
        double self = frame[static_cast<std::size_t>(node.emit_state)];
        if (config_.blank_absorb) self = std::max(self, blank);
        relax(tok.node, tok.acc_log_score + self, tok.frames + 1, tok.states_entered, src_out,
              -1, tok.node);
      }
      for (int child : node.arcs) {
        const auto &cn = graph_->nodes[static_cast<std::size_t>(child)];
        relax(child, tok.acc_log_score + frame[static_cast<std::size_t>(cn.emit_state)],
              tok.frames + 1, tok.states_entered + 1, src_out, cn.emit_state, tok.node);
      }
    }
    for (const auto &tok : next_) node_slot_[static_cast<std::size_t>(tok.node)] = -1;
    prune();

    std::swap(cur_, next_);
    std::swap(cur_out_, next_out_);
    ++frame_;

    const auto best = best_final();
    if (best && best->score >= config_.trigger_threshold) {
      TriggerEvent ev;
      ev.command = best->command;
      ev.score = best->score;
      ev.end_frame = frame_ - 1;
      for (const auto &tok : cur_) {
        if (tok.node != best->node) continue;
        const auto out = output_of(tok);
        ev.states_path.assign(out.begin(), out.begin() + tok.states_entered);
        break;
      }
      restart();
      return ev;
    }
    return std::nullopt;
  }

 private:
  void restart() {
    cur_.clear();
    next_.clear();
    cur_.push_back(Token{0, 0.0, 0, 0, 0});
    std::fill(cur_out_.begin(), cur_out_.begin() + static_cast<std::ptrdiff_t>(width_), -1);
  }

  // Recombination: keep the better score per node; ties go to the
  // predecessor with the smaller node id.
  void relax(int node, double score, long frames, int depth, const int *src_out, int new_state,
             int from_node) {
    int &slot = node_slot_[static_cast<std::size_t>(node)];
    if (slot >= 0) {
      Token &existing = next_[static_cast<std::size_t>(slot)];
      const bool better = score > existing.acc_log_score ||
                          (score == existing.acc_log_score && from_node < from_node_[static_cast<std::size_t>(slot)]);
      if (!better) return;
      existing.acc_log_score = score;
      existing.frames = frames;
      existing.states_entered = depth;
      from_node_[static_cast<std::size_t>(slot)] = from_node;
      // The output array of a node is fixed by its root path, so it is
      // already correct for any predecessor.
      return;
    }
    slot = static_cast<int>(next_.size());
    const std::size_t row = next_.size();
    next_.push_back(Token{node, score, frames, depth, row});
    from_node_[row] = from_node;
    int *dst = next_out_.data() + row * width_;
    std::copy(src_out, src_out + width_, dst);
    if (new_state >= 0) dst[depth - 1] = new_state;
  }

  void prune() {
    if (next_.empty()) return;
    double best = -std::numeric_limits<double>::infinity();
    for (const auto &tok : next_) best = std::max(best, tok.acc_log_score);
    // the start token is never pruned so a command can begin on any frame
    if (std::isfinite(config_.beam)) {
      const double floor = best - config_.beam;
      std::erase_if(next_, [&](const Token &t) { return t.node != 0 && t.acc_log_score < floor; });
    }
    if (next_.size() > config_.max_tokens) {
      auto ranked = [](const Token &a, const Token &b) {
        if ((a.node == 0) != (b.node == 0)) return a.node == 0;
        return a.acc_log_score > b.acc_log_score ||
               (a.acc_log_score == b.acc_log_score && a.node < b.node);
      };
      std::nth_element(next_.begin(), next_.begin() + static_cast<std::ptrdiff_t>(config_.max_tokens),
                       next_.end(), ranked);
      next_.resize(config_.max_tokens);
    }
  }

  const DecodingGraph *graph_;
  DecoderConfig config_;
  std::size_t width_ = 1;
  std::vector<Token> cur_, next_;
  std::vector<int> cur_out_, next_out_;
  std::vector<int> node_slot_;
  std::vector<int> from_node_;  // predecessor of each next_ token, by row
  long frame_ = 0;
};

}  // namespace msce

#endif  // MSCE_DECODER_HPP_
