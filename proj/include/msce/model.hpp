// msce/model.hpp

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

#ifndef MSCE_MODEL_HPP_
#define MSCE_MODEL_HPP_

// Dilated temporal-convolution acoustic model. Each block is
//   conv1d(kernel K, dilation d, same length) -> batch norm over time -> ReLU
//   -> dropout
// and a linear output layer maps the last block to U logits (emission states
// followed by blank). Causal blocks see only the current and past frames.
//
// Batch norm statistics are taken over the frames of one utterance in train
// mode; infer mode uses running statistics. The convolution carries no bias:
// batch norm subtracts the per-channel mean, so a bias would receive an
// identically zero gradient.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "msce/error.hpp"
#include "msce/numerics.hpp"

namespace msce {

struct ModelConfig {
  int num_blocks = 16;
  int kernel_size = 3;
  int channels = 128;
  std::vector<int> dilations = {1, 2, 4, 4, 2, 1, 1, 2, 4, 4, 2, 1, 1, 2, 4, 4};
  std::set<int> causal_blocks = {6, 7, 8, 9};
  int input_dim = 40;
  int output_units = 2;
  double dropout_rate = 0.1;

  static constexpr double kBatchNormEpsilon = 1e-5;
  static constexpr double kRunningMomentum = 0.99;

  void validate() const {
    if (num_blocks < 1) throw ConfigError("num_blocks must be >= 1");
    if (static_cast<int>(dilations.size()) != num_blocks)
      throw ConfigError("expected " + std::to_string(num_blocks) + " dilations, got " +
                        std::to_string(dilations.size()));
    if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("kernel_size must be odd");
    if (channels < 1 || input_dim < 1) throw ConfigError("channels and input_dim must be >= 1");
    if (output_units < 2) throw ConfigError("output_units must be >= 2");
    for (int d : dilations)
      if (d < 1) throw ConfigError("dilations must be >= 1");
    for (int b : causal_blocks)
      if (b < 0 || b >= num_blocks)
        throw ConfigError("causal block " + std::to_string(b) + " out of range");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
      throw ConfigError("dropout_rate must lie in [0, 1)");
  }

  bool is_causal(int block) const { return causal_blocks.count(block) != 0; }
  int block_input_dim(int block) const { return block == 0 ? input_dim : channels; }

  /// Frame offset of kernel tap k in block b.
  int tap_offset(int block, int k) const {
    const int d = dilations[static_cast<std::size_t>(block)];
    return is_causal(block) ? (k - (kernel_size - 1)) * d : (k - (kernel_size - 1) / 2) * d;
  }

  nlohmann::json to_json() const {
    return {{"num_blocks", num_blocks},
            {"kernel_size", kernel_size},
            {"channels", channels},
            {"dilations", dilations},
            {"causal_blocks", std::vector<int>(causal_blocks.begin(), causal_blocks.end())},
            {"input_dim", input_dim},
            {"output_units", output_units},
            {"dropout_rate", dropout_rate}};
  }

  /// Missing keys keep their defaults.
  static ModelConfig from_json(const nlohmann::json &j) {
    ModelConfig c;
    c.num_blocks = j.value("num_blocks", c.num_blocks);
    c.kernel_size = j.value("kernel_size", c.kernel_size);
    c.channels = j.value("channels", c.channels);
    c.dilations = j.value("dilations", c.dilations);
    if (j.contains("causal_blocks")) {
      auto v = j.at("causal_blocks").get<std::vector<int>>();
      c.causal_blocks = std::set<int>(v.begin(), v.end());
    }
    c.input_dim = j.value("input_dim", c.input_dim);
    c.output_units = j.value("output_units", c.output_units);
    c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
    return c;
  }

  friend bool operator==(const ModelConfig &, const ModelConfig &) = default;
};

/// (left, right) context in frames seen by one output frame.
inline std::pair<int, int> receptive_field(const ModelConfig &config) {
  config.validate();
  int left = 0, right = 0;
  for (int b = 0; b < config.num_blocks; ++b) {
    const int d = config.dilations[static_cast<std::size_t>(b)];
    if (config.is_causal(b)) {
      left += d * (config.kernel_size - 1);
    } else {
      left += d * (config.kernel_size - 1) / 2;
      right += d * (config.kernel_size - 1) / 2;
    }
  }
  return {left, right};
}

struct BlockParameters {
  // Stored tap-major: weight[k] is a C_out x C_in matrix.
  std::vector<Matrix> weight;
  std::vector<double> gamma, beta;
  std::vector<double> running_mean, running_var;

  friend bool operator==(const BlockParameters &, const BlockParameters &) = default;
};

struct ModelParameters {
  std::vector<BlockParameters> blocks;
  Matrix out_weight;  // U x C
  std::vector<double> out_bias;

  friend bool operator==(const ModelParameters &, const ModelParameters &) = default;
};

/// Zero-valued parameters shaped for `config`.
inline ModelParameters zero_parameters(const ModelConfig &config) {
  config.validate();
  ModelParameters p;
  const auto C = static_cast<std::size_t>(config.channels);
  for (int b = 0; b < config.num_blocks; ++b) {
    BlockParameters bp;
    for (int k = 0; k < config.kernel_size; ++k)
      bp.weight.emplace_back(C, static_cast<std::size_t>(config.block_input_dim(b)));
    bp.gamma.assign(C, 0.0);
    bp.beta.assign(C, 0.0);
    bp.running_mean.assign(C, 0.0);
    bp.running_var.assign(C, 0.0);
    p.blocks.push_back(std::move(bp));
  }
  p.out_weight = Matrix(static_cast<std::size_t>(config.output_units), C);
  p.out_bias.assign(static_cast<std::size_t>(config.output_units), 0.0);
  return p;
}

/// Visits every trainable tensor in a fixed order: per block conv weight taps,
/// gamma, beta; then output weight and bias. Running statistics are not
/// trainable and are skipped.
template <typename Params, typename Fn>
void for_each_trainable(Params &p, Fn &&fn) {
  for (auto &b : p.blocks) {
    for (auto &w : b.weight) fn(std::span(w.data()));
    fn(std::span(b.gamma));
    fn(std::span(b.beta));
  }
  fn(std::span(p.out_weight.data()));
  fn(std::span(p.out_bias));
}

/// Every tensor including running statistics, for averaging.
template <typename Params, typename Fn>
void for_each_tensor(Params &p, Fn &&fn) {
  for (auto &b : p.blocks) {
    for (auto &w : b.weight) fn(std::span(w.data()));
    fn(std::span(b.gamma));
    fn(std::span(b.beta));
    fn(std::span(b.running_mean));
    fn(std::span(b.running_var));
  }
  fn(std::span(p.out_weight.data()));
  fn(std::span(p.out_bias));
}

inline std::size_t num_trainable(const ModelParameters &p) {
  std::size_t n = 0;
  for_each_trainable(p, [&](auto s) { n += s.size(); });
  return n;
}

inline std::vector<double> flatten_trainable(const ModelParameters &p) {
  std::vector<double> flat;
  flat.reserve(num_trainable(p));
  for_each_trainable(p, [&](auto s) { flat.insert(flat.end(), s.begin(), s.end()); });
  return flat;
}

inline void unflatten_trainable(std::span<const double> flat, ModelParameters &p) {
  if (flat.size() != num_trainable(p)) throw ShapeError("unflatten_trainable: size mismatch");
  std::size_t off = 0;
  for_each_trainable(p, [&](auto s) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), s.size(), s.begin());
    off += s.size();
  });
}

/// Conv weights ~ U(+-sqrt(6 / (fan_in + fan_out))) with fan_in = C_in * K and
/// fan_out = C_out * K; output layer likewise with K = 1. Batch norm starts at
/// scale 1, shift 0, running statistics (0, 1); biases 0.
inline ModelParameters init_parameters(const ModelConfig &config, Rng &rng) {
  ModelParameters p = zero_parameters(config);
  const int K = config.kernel_size;
  for (int b = 0; b < config.num_blocks; ++b) {
    auto &bp = p.blocks[static_cast<std::size_t>(b)];
    const double limit =
        std::sqrt(6.0 / static_cast<double>((config.block_input_dim(b) + config.channels) * K));
    // fill in (out, in, k) order so the draw sequence matches the checkpoint layout
    for (std::size_t o = 0; o < bp.weight[0].rows(); ++o)
      for (std::size_t i = 0; i < bp.weight[0].cols(); ++i)
        for (int k = 0; k < K; ++k) bp.weight[static_cast<std::size_t>(k)](o, i) = rng.uniform(-limit, limit);
    std::fill(bp.gamma.begin(), bp.gamma.end(), 1.0);
    std::fill(bp.running_var.begin(), bp.running_var.end(), 1.0);
  }
  const double limit = std::sqrt(6.0 / static_cast<double>(config.channels + config.output_units));
  for (double &w : p.out_weight.data()) w = rng.uniform(-limit, limit);
  return p;
}

enum class Mode { kTrain, kInfer };

struct BlockCache {
  Matrix input;       // T x C_in
  Matrix normalized;  // x_hat, T x C
  Matrix activated;   // post-BN pre-ReLU, T x C (sign gives the ReLU mask)
  std::vector<double> mean, var, inv_std;
  std::vector<std::uint8_t> keep;  // dropout mask, empty when dropout is off
};

struct ForwardCache {
  Mode mode = Mode::kInfer;
  double dropout_rate = 0.0;
  std::vector<BlockCache> blocks;
  Matrix final_hidden;  // T x C, input to the output layer
};

struct ForwardResult {
  Matrix logits;          // T x U
  Matrix log_posteriors;  // row-wise log-softmax of logits
  ForwardCache cache;
};

namespace detail {

inline void check_shapes(const ModelParameters &params, const ModelConfig &config) {
  if (params.blocks.size() != static_cast<std::size_t>(config.num_blocks))
    throw ShapeError("parameters have " + std::to_string(params.blocks.size()) +
                     " blocks, config expects " + std::to_string(config.num_blocks));
  for (int b = 0; b < config.num_blocks; ++b) {
    const auto &bp = params.blocks[static_cast<std::size_t>(b)];
    if (bp.weight.size() != static_cast<std::size_t>(config.kernel_size) ||
        bp.weight[0].rows() != static_cast<std::size_t>(config.channels) ||
        bp.weight[0].cols() != static_cast<std::size_t>(config.block_input_dim(b)))
      throw ShapeError("block " + std::to_string(b) + " weight shape does not match config");
  }
  if (params.out_weight.rows() != static_cast<std::size_t>(config.output_units) ||
      params.out_weight.cols() != static_cast<std::size_t>(config.channels))
    throw ShapeError("output layer shape does not match config");
}

// Rows [t0, t0 + n) of the output pair with rows [t0 + offset, ...) of the
// input; returns {t0, n} clipped to frames where the shifted input exists.
inline std::pair<Eigen::Index, Eigen::Index> valid_range(Eigen::Index T, int offset) {
  const Eigen::Index lo = std::max<Eigen::Index>(0, -offset);
  const Eigen::Index hi = std::min<Eigen::Index>(T, T - offset);
  return {lo, std::max<Eigen::Index>(0, hi - lo)};
}

}  // namespace detail

/// Runs the network on a T x F feature matrix. The rng is consumed only for
/// dropout masks in train mode.
inline ForwardResult forward(const ModelParameters &params, const ModelConfig &config,
                             const Matrix &features, Mode mode, Rng &rng) {
  config.validate();
  detail::check_shapes(params, config);
  if (features.cols() != static_cast<std::size_t>(config.input_dim))
    throw ShapeError("features have " + std::to_string(features.cols()) +
                     " columns, model expects " + std::to_string(config.input_dim));
  if (features.rows() == 0) throw ShapeError("features have no frames");

  const auto T = static_cast<Eigen::Index>(features.rows());
  const auto C = static_cast<std::size_t>(config.channels);
  const double eps = ModelConfig::kBatchNormEpsilon;
  const bool use_dropout = mode == Mode::kTrain && config.dropout_rate > 0.0;
  const double keep_scale = use_dropout ? 1.0 / (1.0 - config.dropout_rate) : 1.0;

  ForwardResult res;
  res.cache.mode = mode;
  res.cache.dropout_rate = use_dropout ? config.dropout_rate : 0.0;
  Matrix x = features;
  for (int b = 0; b < config.num_blocks; ++b) {
    const auto &bp = params.blocks[static_cast<std::size_t>(b)];
    BlockCache bc;
    Matrix z(static_cast<std::size_t>(T), C);
    auto Z = z.eigen();
    const auto X = x.eigen();
    for (int k = 0; k < config.kernel_size; ++k) {
      const int off = config.tap_offset(b, k);
      auto [t0, n] = detail::valid_range(T, off);
      if (n == 0) continue;
      Z.middleRows(t0, n).noalias() +=
          X.middleRows(t0 + off, n) * bp.weight[static_cast<std::size_t>(k)].eigen().transpose();
    }

    bc.mean.resize(C);
    bc.var.resize(C);
    bc.inv_std.resize(C);
    if (mode == Mode::kTrain) {
      const Eigen::RowVectorXd mean = Z.colwise().mean();
      const Eigen::RowVectorXd var =
          (Z.rowwise() - mean).array().square().colwise().mean().matrix();
      for (std::size_t c = 0; c < C; ++c) {
        bc.mean[c] = mean(static_cast<Eigen::Index>(c));
        bc.var[c] = var(static_cast<Eigen::Index>(c));
      }
    } else {
      bc.mean = bp.running_mean;
      bc.var = bp.running_var;
    }
    for (std::size_t c = 0; c < C; ++c) bc.inv_std[c] = 1.0 / std::sqrt(bc.var[c] + eps);

    bc.normalized = Matrix(static_cast<std::size_t>(T), C);
    bc.activated = Matrix(static_cast<std::size_t>(T), C);
    Matrix next(static_cast<std::size_t>(T), C);
    if (use_dropout) bc.keep.resize(static_cast<std::size_t>(T) * C);
    for (std::size_t t = 0; t < static_cast<std::size_t>(T); ++t) {
      for (std::size_t c = 0; c < C; ++c) {
        const double xh = (z(t, c) - bc.mean[c]) * bc.inv_std[c];
        const double y = bp.gamma[c] * xh + bp.beta[c];
        bc.normalized(t, c) = xh;
        bc.activated(t, c) = y;
        double a = y > 0.0 ? y : 0.0;
        if (use_dropout) {
          const bool keep = rng.uniform() >= config.dropout_rate;
          bc.keep[t * C + c] = keep;
          a = keep ? a * keep_scale : 0.0;
        }
        next(t, c) = a;
      }
    }
    bc.input = std::move(x);
    x = std::move(next);
    res.cache.blocks.push_back(std::move(bc));
  }

  res.logits = Matrix(static_cast<std::size_t>(T), static_cast<std::size_t>(config.output_units));
  res.logits.eigen().noalias() = x.eigen() * params.out_weight.eigen().transpose();
  for (std::size_t t = 0; t < static_cast<std::size_t>(T); ++t)
    for (std::size_t u = 0; u < res.logits.cols(); ++u) res.logits(t, u) += params.out_bias[u];
  res.log_posteriors = softmax_log_rows(res.logits);
  res.cache.final_hidden = std::move(x);
  return res;
}

inline ForwardResult forward_infer(const ModelParameters &params, const ModelConfig &config,
                                   const Matrix &features) {
  Rng unused(0);
  return forward(params, config, features, Mode::kInfer, unused);
}

struct BackwardResult {
  ModelParameters grads;  // running statistics fields are left at zero
  Matrix grad_input;      // T x F
};

/// Reverse pass for a cache produced by `forward` with the same parameters.
inline BackwardResult backward(const ModelParameters &params, const ModelConfig &config,
                               const ForwardCache &cache, const Matrix &grad_logits) {
  detail::check_shapes(params, config);
  if (cache.blocks.size() != static_cast<std::size_t>(config.num_blocks))
    throw ShapeError("backward: cache has " + std::to_string(cache.blocks.size()) +
                     " blocks, config expects " + std::to_string(config.num_blocks));
  const std::size_t T = cache.final_hidden.rows();
  const auto C = static_cast<std::size_t>(config.channels);
  if (grad_logits.rows() != T || grad_logits.cols() != static_cast<std::size_t>(config.output_units))
    throw ShapeError("backward: grad_logits shape does not match the cached forward pass");
  if (cache.final_hidden.cols() != C) throw ShapeError("backward: cache/config channel mismatch");

  BackwardResult res{zero_parameters(config), Matrix()};
  auto &g = res.grads;
  const auto G = grad_logits.eigen();
  g.out_weight.eigen().noalias() = G.transpose() * cache.final_hidden.eigen();
  for (std::size_t u = 0; u < g.out_bias.size(); ++u) g.out_bias[u] = G.col(static_cast<Eigen::Index>(u)).sum();

  Matrix dx(T, C);
  dx.eigen().noalias() = G * params.out_weight.eigen();
  const double keep_scale = cache.dropout_rate > 0.0 ? 1.0 / (1.0 - cache.dropout_rate) : 1.0;
  const double inv_t = 1.0 / static_cast<double>(T);

  for (int b = config.num_blocks - 1; b >= 0; --b) {
    const auto &bc = cache.blocks[static_cast<std::size_t>(b)];
    const auto &bp = params.blocks[static_cast<std::size_t>(b)];
    auto &gb = g.blocks[static_cast<std::size_t>(b)];

    // through dropout and ReLU into dL/dx_hat
    Matrix dxhat(T, C);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t c = 0; c < C; ++c) {
        double d = dx(t, c);
        if (!bc.keep.empty()) d = bc.keep[t * C + c] ? d * keep_scale : 0.0;
        if (bc.activated(t, c) <= 0.0) d = 0.0;
        gb.gamma[c] += d * bc.normalized(t, c);
        gb.beta[c] += d;
        dxhat(t, c) = d * bp.gamma[c];
      }
    }

    Matrix dz(T, C);
    if (cache.mode == Mode::kTrain) {
      for (std::size_t c = 0; c < C; ++c) {
        double sum = 0.0, dot = 0.0;
        for (std::size_t t = 0; t < T; ++t) {
          sum += dxhat(t, c);
          dot += dxhat(t, c) * bc.normalized(t, c);
        }
        for (std::size_t t = 0; t < T; ++t)
          dz(t, c) = bc.inv_std[c] * (dxhat(t, c) - inv_t * sum - bc.normalized(t, c) * inv_t * dot);
      }
    } else {
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < C; ++c) dz(t, c) = dxhat(t, c) * bc.inv_std[c];
    }

    Matrix dinput(T, bc.input.cols());
    const auto DZ = dz.eigen();
    const auto X = bc.input.eigen();
    auto DI = dinput.eigen();
    const auto Tn = static_cast<Eigen::Index>(T);
    for (int k = 0; k < config.kernel_size; ++k) {
      const int off = config.tap_offset(b, k);
      auto [t0, n] = detail::valid_range(Tn, off);
      if (n == 0) continue;
      gb.weight[static_cast<std::size_t>(k)].eigen().noalias() +=
          DZ.middleRows(t0, n).transpose() * X.middleRows(t0 + off, n);
      DI.middleRows(t0 + off, n).noalias() +=
          DZ.middleRows(t0, n) * bp.weight[static_cast<std::size_t>(k)].eigen();
    }
    dx = std::move(dinput);
  }
  res.grad_input = std::move(dx);
  return res;
}

/// Folds the batch statistics of a train-mode pass into the running
/// statistics: running = m * running + (1 - m) * batch.
inline void update_running_stats(ModelParameters &params, const ForwardCache &cache,
                                 double momentum = ModelConfig::kRunningMomentum) {
  if (cache.mode != Mode::kTrain) return;
  if (cache.blocks.size() != params.blocks.size())
    throw ShapeError("update_running_stats: cache/parameter block mismatch");
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    auto &bp = params.blocks[b];
    const auto &bc = cache.blocks[b];
    for (std::size_t c = 0; c < bp.running_mean.size(); ++c) {
      bp.running_mean[c] = momentum * bp.running_mean[c] + (1.0 - momentum) * bc.mean[c];
      bp.running_var[c] = momentum * bp.running_var[c] + (1.0 - momentum) * bc.var[c];
    }
  }
}

/// Element-wise mean of parameter sets (running statistics included).
inline ModelParameters average_parameters(std::span<const ModelParameters> checkpoints,
                                          std::span<const ModelConfig> configs = {}) {
  if (checkpoints.empty()) throw ContractError("average_parameters: no checkpoints");
  for (const auto &c : configs)
    if (!(c == configs.front()))
      throw ConfigError("average_parameters: checkpoints have different model configs");
  ModelParameters avg = checkpoints.front();
  std::vector<std::span<double>> dst;
  for_each_tensor(avg, [&](std::span<double> s) { dst.push_back(s); });
  for (std::size_t i = 1; i < checkpoints.size(); ++i) {
    std::size_t idx = 0;
    bool shapes_ok = true;
    for_each_tensor(checkpoints[i], [&](std::span<const double> s) {
      if (idx >= dst.size() || s.size() != dst[idx].size()) {
        shapes_ok = false;
        return;
      }
      for (std::size_t j = 0; j < s.size(); ++j) dst[idx][j] += s[j];
      ++idx;
    });
    if (!shapes_ok || idx != dst.size())
      throw ConfigError("average_parameters: checkpoint shapes differ");
  }
  const double inv = 1.0 / static_cast<double>(checkpoints.size());
  for (auto s : dst)
    for (double &v : s) v *= inv;
  return avg;
}

// Checkpoint file, little-endian:
//   "MSCE" | u32 version | u64 config length | config JSON (canonical, sorted keys)
//   then per block: conv weight (rank 3: C_out, C_in, K), gamma, beta,
//   running_mean, running_var (rank 1: C); output weight (rank 2: U, C),
//   output bias (rank 1: U). Each tensor is u32 rank, u32 dims, f32 data.
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::array<char, 4> kCheckpointMagic = {'M', 'S', 'C', 'E'};

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

template <typename T>
void put(std::ostream &os, T v) {
  os.write(reinterpret_cast<const char *>(&v), sizeof(T));
}

template <typename T>
T get(std::istream &is, const std::string &what) {
  T v;
  if (!is.read(reinterpret_cast<char *>(&v), sizeof(T)))
    throw TruncatedError("truncated file while reading " + what);
  return v;
}

inline void put_tensor(std::ostream &os, std::initializer_list<std::uint32_t> dims,
                       const std::vector<float> &data) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) put<std::uint32_t>(os, d);
  os.write(reinterpret_cast<const char *>(data.data()),
           static_cast<std::streamsize>(data.size() * sizeof(float)));
}

inline std::vector<float> get_tensor(std::istream &is, std::initializer_list<std::uint32_t> dims,
                                     const std::string &what) {
  const auto rank = get<std::uint32_t>(is, what);
  if (rank != dims.size()) throw FormatError(what + ": unexpected tensor rank");
  std::size_t n = 1;
  for (auto d : dims) {
    if (get<std::uint32_t>(is, what) != d) throw FormatError(what + ": tensor shape mismatch");
    n *= d;
  }
  std::vector<float> data(n);
  if (!is.read(reinterpret_cast<char *>(data.data()), static_cast<std::streamsize>(n * sizeof(float))))
    throw TruncatedError("truncated file while reading " + what);
  return data;
}

inline std::vector<float> to_f32(std::span<const double> v) {
  return {v.begin(), v.end()};
}

}  // namespace detail

inline void write_checkpoint(std::ostream &os, const ModelParameters &params,
                             const ModelConfig &config) {
  detail::check_shapes(params, config);
  const std::string blob = config.to_json().dump();
  os.write(kCheckpointMagic.data(), 4);
  detail::put<std::uint32_t>(os, kCheckpointVersion);
  detail::put<std::uint64_t>(os, blob.size());
  os.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  const auto C = static_cast<std::uint32_t>(config.channels);
  const auto K = static_cast<std::uint32_t>(config.kernel_size);
  for (int b = 0; b < config.num_blocks; ++b) {
    const auto &bp = params.blocks[static_cast<std::size_t>(b)];
    const auto Cin = static_cast<std::uint32_t>(config.block_input_dim(b));
    std::vector<float> w;
    w.reserve(static_cast<std::size_t>(C) * Cin * K);
    for (std::uint32_t o = 0; o < C; ++o)
      for (std::uint32_t i = 0; i < Cin; ++i)
        for (std::uint32_t k = 0; k < K; ++k) w.push_back(static_cast<float>(bp.weight[k](o, i)));
    detail::put_tensor(os, {C, Cin, K}, w);
    detail::put_tensor(os, {C}, detail::to_f32(bp.gamma));
    detail::put_tensor(os, {C}, detail::to_f32(bp.beta));
    detail::put_tensor(os, {C}, detail::to_f32(bp.running_mean));
    detail::put_tensor(os, {C}, detail::to_f32(bp.running_var));
  }
  const auto U = static_cast<std::uint32_t>(config.output_units);
  detail::put_tensor(os, {U, C}, detail::to_f32(params.out_weight.data()));
  detail::put_tensor(os, {U}, detail::to_f32(params.out_bias));
}

struct Checkpoint {
  ModelParameters params;
  ModelConfig config;
};

inline Checkpoint read_checkpoint(std::istream &is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4)) throw TruncatedError("truncated checkpoint header");
  if (magic != kCheckpointMagic) throw MagicError("not a checkpoint file (bad magic)");
  const auto version = detail::get<std::uint32_t>(is, "checkpoint version");
  if (version != kCheckpointVersion)
    throw VersionError("unsupported checkpoint version " + std::to_string(version));
  const auto len = detail::get<std::uint64_t>(is, "config length");
  if (len > (1u << 24)) throw FormatError("implausible checkpoint config length");
  std::string blob(len, '\0');
  if (!is.read(blob.data(), static_cast<std::streamsize>(len)))
    throw TruncatedError("truncated checkpoint config");
  Checkpoint ck;
  try {
    ck.config = ModelConfig::from_json(nlohmann::json::parse(blob));
  } catch (const nlohmann::json::exception &e) {
    throw FormatError(std::string("checkpoint config is not valid JSON: ") + e.what());
  }
  ck.config.validate();
  ck.params = zero_parameters(ck.config);
  const auto C = static_cast<std::uint32_t>(ck.config.channels);
  const auto K = static_cast<std::uint32_t>(ck.config.kernel_size);
  auto assign = [](std::vector<double> &dst, const std::vector<float> &src) {
    dst.assign(src.begin(), src.end());
  };
  for (int b = 0; b < ck.config.num_blocks; ++b) {
    auto &bp = ck.params.blocks[static_cast<std::size_t>(b)];
    const auto Cin = static_cast<std::uint32_t>(ck.config.block_input_dim(b));
    const std::string where = "block " + std::to_string(b);
    const auto w = detail::get_tensor(is, {C, Cin, K}, where + " weight");
    std::size_t idx = 0;
    for (std::uint32_t o = 0; o < C; ++o)
      for (std::uint32_t i = 0; i < Cin; ++i)
        for (std::uint32_t k = 0; k < K; ++k) bp.weight[k](o, i) = w[idx++];
    assign(bp.gamma, detail::get_tensor(is, {C}, where + " gamma"));
    assign(bp.beta, detail::get_tensor(is, {C}, where + " beta"));
    assign(bp.running_mean, detail::get_tensor(is, {C}, where + " running_mean"));
    assign(bp.running_var, detail::get_tensor(is, {C}, where + " running_var"));
  }
  const auto U = static_cast<std::uint32_t>(ck.config.output_units);
  assign(ck.params.out_weight.data(), detail::get_tensor(is, {U, C}, "output weight"));
  assign(ck.params.out_bias, detail::get_tensor(is, {U}, "output bias"));
  return ck;
}

inline void save_checkpoint(const ModelParameters &params, const ModelConfig &config,
                            const std::string &path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  write_checkpoint(os, params, config);
  if (!os) throw IoError("write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "' for reading");
  return read_checkpoint(is);
}

/// Parameters as they come back from a checkpoint: every value rounded to f32.
inline ModelParameters quantize_f32(ModelParameters p) {
  for_each_tensor(p, [](std::span<double> s) {
    for (double &v : s) v = static_cast<double>(static_cast<float>(v));
  });
  return p;
}

}  // namespace msce

#endif  // MSCE_MODEL_HPP_
