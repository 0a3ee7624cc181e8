// Copyright 2026 The qlstm Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef QLSTM_NUM_CORE_HPP_
#define QLSTM_NUM_CORE_HPP_

// Dense float64 kernels used by the LSTM forward/backward passes. Everything
// here is a pure function over value types.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace qlstm {

using Vec = std::vector<double>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string shape_str(std::size_t rows, std::size_t cols) {
  return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")";
}

/// Row-major dense matrix.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Vec data;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  static Mat identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Mat from_rows(const std::vector<Vec>& rows_in) {
    if (rows_in.empty()) return {};
    Mat m(rows_in.size(), rows_in.front().size());
    for (std::size_t i = 0; i < m.rows; ++i) {
      if (rows_in[i].size() != m.cols) throw ShapeError("Mat::from_rows: ragged rows");
      std::copy(rows_in[i].begin(), rows_in[i].end(), m.data.begin() + static_cast<std::ptrdiff_t>(i * m.cols));
    }
    return m;
  }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  std::size_t size() const { return data.size(); }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

  friend bool operator==(const Mat&, const Mat&) = default;
};

inline void require_len(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": length mismatch " + std::to_string(a) + " vs " + std::to_string(b));
  }
}

/// W·x + b.
inline Vec affine(const Mat& w, std::span<const double> x, std::span<const double> b) {
  if (w.cols != x.size() || w.rows != b.size()) {
    throw ShapeError("affine: W " + shape_str(w.rows, w.cols) + " incompatible with x " + shape_str(x.size(), 1) +
                     " and b " + shape_str(b.size(), 1));
  }
  Vec out(b.begin(), b.end());
  for (std::size_t r = 0; r < w.rows; ++r) {
    const double* wr = w.data.data() + r * w.cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < w.cols; ++c) acc += wr[c] * x[c];
    out[r] += acc;
  }
  return out;
}

/// out += W·x
inline void gemv_acc(const Mat& w, std::span<const double> x, std::span<double> out) {
  if (w.cols != x.size() || w.rows != out.size()) {
    throw ShapeError("gemv_acc: W " + shape_str(w.rows, w.cols) + " vs x " + shape_str(x.size(), 1));
  }
  for (std::size_t r = 0; r < w.rows; ++r) {
    const double* wr = w.data.data() + r * w.cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < w.cols; ++c) acc += wr[c] * x[c];
    out[r] += acc;
  }
}

/// out += Wᵀ·y
inline void gemv_t_acc(const Mat& w, std::span<const double> y, std::span<double> out) {
  if (w.rows != y.size() || w.cols != out.size()) {
    throw ShapeError("gemv_t_acc: W " + shape_str(w.rows, w.cols) + " vs y " + shape_str(y.size(), 1));
  }
  for (std::size_t r = 0; r < w.rows; ++r) {
    const double* wr = w.data.data() + r * w.cols;
    const double yr = y[r];
    if (yr == 0.0) continue;
    for (std::size_t c = 0; c < w.cols; ++c) out[c] += wr[c] * yr;
  }
}

/// g += a·bᵀ
inline void outer_acc(std::span<const double> a, std::span<const double> b, Mat& g) {
  if (g.rows != a.size() || g.cols != b.size()) {
    throw ShapeError("outer_acc: target " + shape_str(g.rows, g.cols) + " vs " + shape_str(a.size(), b.size()));
  }
  for (std::size_t r = 0; r < g.rows; ++r) {
    const double ar = a[r];
    if (ar == 0.0) continue;
    double* gr = g.data.data() + r * g.cols;
    for (std::size_t c = 0; c < g.cols; ++c) gr[c] += ar * b[c];
  }
}

inline Vec hadamard(std::span<const double> a, std::span<const double> b) {
  require_len(a.size(), b.size(), "hadamard");
  Vec out(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) out[k] = a[k] * b[k];
  return out;
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  require_len(x.size(), y.size(), "axpy");
  for (std::size_t k = 0; k < x.size(); ++k) y[k] += alpha * x[k];
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Vec sigmoid(std::span<const double> v) {
  Vec out(v.size());
  std::transform(v.begin(), v.end(), out.begin(), [](double x) { return sigmoid(x); });
  return out;
}

inline Vec tanh(std::span<const double> v) {
  Vec out(v.size());
  std::transform(v.begin(), v.end(), out.begin(), [](double x) { return std::tanh(x); });
  return out;
}

inline double log_sum_exp(std::span<const double> v) {
  if (v.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

inline Vec softmax(std::span<const double> v) {
  Vec out(v.size());
  if (v.empty()) return out;
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) {
    out[k] = std::exp(v[k] - m);
    s += out[k];
  }
  for (double& x : out) x /= s;
  return out;
}

inline double squared_norm(std::span<const double> v) {
  return std::inner_product(v.begin(), v.end(), v.begin(), 0.0);
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace qlstm

#endif  // QLSTM_NUM_CORE_HPP_
