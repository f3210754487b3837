// msce/numerics.hpp

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

#ifndef MSCE_NUMERICS_HPP_
#define MSCE_NUMERICS_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "msce/error.hpp"

namespace msce {

/// Log-domain zero. A large finite negative number rather than -inf, so that
/// sums of several log-zeros stay finite and no arithmetic produces NaN.
inline constexpr double kLogZero = -1.0e30;

using EigenRowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense row-major matrix of doubles. Rows are time frames wherever the
/// matrix holds per-frame quantities (features, activations, posteriors).
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
      throw ShapeError("Matrix: data length " + std::to_string(data_.size()) +
                       " != " + std::to_string(rows_) + "x" +
                       std::to_string(cols_));
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double &operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<double> &data() { return data_; }
  const std::vector<double> &data() const { return data_; }

  Eigen::Map<EigenRowMatrix> eigen() {
    return {data_.data(), static_cast<Eigen::Index>(rows_),
            static_cast<Eigen::Index>(cols_)};
  }
  Eigen::Map<const EigenRowMatrix> eigen() const {
    return {data_.data(), static_cast<Eigen::Index>(rows_),
            static_cast<Eigen::Index>(cols_)};
  }

  void set_zero() { std::fill(data_.begin(), data_.end(), 0.0); }

  friend bool operator==(const Matrix &, const Matrix &) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// ln(e^a + e^b); log-zero absorbs.
inline double log_add(double a, double b) {
  if (a < b) std::swap(a, b);
  if (b <= kLogZero) return a;
  return a + std::log1p(std::exp(b - a));
}

/// a + b in log space (a product of probabilities); log-zero absorbs.
inline double log_mul(double a, double b) {
  if (a <= kLogZero || b <= kLogZero) return kLogZero;
  return a + b;
}

/// ln sum_i exp(values_i), computed with a max shift.
inline double log_sum_exp(std::span<const double> values) {
  if (values.empty()) throw ContractError("log_sum_exp: empty input");
  const double max_value = *std::max_element(values.begin(), values.end());
  if (max_value <= kLogZero) return kLogZero;
  double sum = 0.0;
  for (double v : values) {
    if (v > kLogZero) sum += std::exp(v - max_value);
  }
  return max_value + std::log(sum);
}

inline double log_sum_exp(std::initializer_list<double> values) {
  return log_sum_exp(std::span<const double>(values.begin(), values.size()));
}

/// Log-softmax of one row of logits.
inline std::vector<double> softmax_log(std::span<const double> logits) {
  for (double v : logits) {
    if (!std::isfinite(v)) throw NumericError("softmax_log: non-finite logit");
  }
  const double norm = log_sum_exp(logits);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - norm;
  return out;
}

/// Row-wise log-softmax of a T x U logit matrix.
inline Matrix softmax_log_rows(const Matrix &logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t t = 0; t < logits.rows(); ++t) {
    auto row = softmax_log(logits.row(t));
    std::copy(row.begin(), row.end(), out.row(t).begin());
  }
  return out;
}

/// Pseudo-random generator: xoshiro256** whose 256-bit state is seeded by
/// four SplitMix64 outputs of (seed, stream). Distributions are implemented
/// here, not taken from <random>, because the standard library leaves their
/// algorithms implementation-defined. Gaussians use the Marsaglia polar
/// method with the spare value cached.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream) {
    std::uint64_t x = seed ^ (0x9E3779B97F4A7C15ULL * (stream + 1));
    for (auto &s : state_) s = splitmix64(x);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  /// Independent generator for a sub-stream (an utterance, an epoch, ...).
  Rng derive(std::uint64_t index) const {
    std::uint64_t x = stream_ ^ (0xD1B54A32D192ED03ULL * (index + 1));
    return Rng(seed_, splitmix64(x));
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n), unbiased by rejection.
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) throw ContractError("Rng::uniform_int: n == 0");
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  /// Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(uniform_int(static_cast<std::uint64_t>(hi - lo + 1)));
  }

  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double scale = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * scale;
    has_spare_ = true;
    return u * scale;
  }

  template <typename T>
  void shuffle(std::vector<T> &items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  /// k distinct elements of pool, uniformly, by partial Fisher-Yates.
  template <typename T>
  std::vector<T> sample(std::vector<T> pool, std::size_t k) {
    if (k > pool.size()) throw ContractError("Rng::sample: k > pool size");
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(uniform_int(pool.size() - i));
      std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
  }

 private:
  static std::uint64_t splitmix64(std::uint64_t &x) {
    std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t state_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Central-difference gradient check over the listed coordinates. Returns
/// the largest relative error |g_fd - g_an| / max(1e-8, |g_fd| + |g_an|).
inline double finite_diff_check(
    const std::function<double(std::span<const double>)> &f,
    std::span<const double> analytic_grad, std::span<const double> point, double step,
    std::span<const std::size_t> coords) {
  if (analytic_grad.size() != point.size())
    throw ShapeError("finite_diff_check: gradient/point size mismatch");
  std::vector<double> x(point.begin(), point.end());
  double max_err = 0.0;
  for (std::size_t i : coords) {
    if (i >= x.size()) throw ShapeError("finite_diff_check: coordinate out of range");
    const double saved = x[i];
    x[i] = saved + step;
    const double f_plus = f(x);
    x[i] = saved - step;
    const double f_minus = f(x);
    x[i] = saved;
    if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
      throw NumericError("finite_diff_check: non-finite function value at coordinate " +
                         std::to_string(i));
    const double g_fd = (f_plus - f_minus) / (2.0 * step);
    const double g_an = analytic_grad[i];
    const double err =
        std::abs(g_fd - g_an) / std::max(1e-8, std::abs(g_fd) + std::abs(g_an));
    max_err = std::max(max_err, err);
  }
  return max_err;
}

/// Same check over every coordinate.
inline double finite_diff_check(
    const std::function<double(std::span<const double>)> &f,
    std::span<const double> analytic_grad, std::span<const double> point,
    double step) {
  std::vector<std::size_t> all(point.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return finite_diff_check(f, analytic_grad, point, step, all);
}

/// 64-bit FNV-1a, used for content hashes recorded in manifests and reports.
inline std::uint64_t fnv1a64(std::string_view bytes,
                             std::uint64_t hash = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

inline std::string hex64(std::uint64_t v) {
  static const char *digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) out[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return out;
}

}  // namespace msce

#endif  // MSCE_NUMERICS_HPP_
