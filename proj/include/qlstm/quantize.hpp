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

#ifndef QLSTM_QUANTIZE_HPP_
#define QLSTM_QUANTIZE_HPP_

// Parameter transforms: Round & Clip onto a fixed-point grid, the Gumbel
// gate, and per-matrix binary (sign + scale) weight quantization.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>

#include "qlstm/num_core.hpp"
#include "qlstm/random.hpp"

namespace qlstm {

/// Fixed-point grid with step `r` and symmetric clip bound `c`.
class RoundClipScheme {
 public:
  RoundClipScheme() = default;

  RoundClipScheme(double r, double c) : r_(r), c_(c) {
    if (!(r > 0.0) || !(c > 0.0) || !std::isfinite(r) || !std::isfinite(c)) {
      throw std::invalid_argument("RoundClipScheme: r and c must be positive, got r=" + std::to_string(r) +
                                  " c=" + std::to_string(c));
    }
    const double steps = c / r;
    if (std::abs(steps - std::round(steps)) > 1e-9 * std::max(1.0, steps)) {
      throw std::invalid_argument("RoundClipScheme: c=" + std::to_string(c) + " is not a multiple of r=" +
                                  std::to_string(r));
    }
  }

  double r() const { return r_; }
  double c() const { return c_; }

  friend bool operator==(const RoundClipScheme&, const RoundClipScheme&) = default;

 private:
  double r_ = 0.5;
  double c_ = 1.0;
};

/// clip(round(x / r) * r, -c, c), rounding halves away from zero.
inline double round_clip(double x, const RoundClipScheme& s) {
  const double q = std::round(x / s.r()) * s.r();
  return std::clamp(q, -s.c(), s.c());
}

inline Vec round_clip(std::span<const double> x, const RoundClipScheme& s) {
  Vec out(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = round_clip(x[k], s);
  return out;
}

/// f = f_bar + delta_f, with f_bar on the grid.
struct QuantDecomp {
  Vec f_bar;
  Vec delta_f;
};

inline QuantDecomp quant_decompose(std::span<const double> f, const RoundClipScheme& s) {
  QuantDecomp d{Vec(f.size()), Vec(f.size())};
  for (std::size_t k = 0; k < f.size(); ++k) {
    d.f_bar[k] = round_clip(f[k], s);
    d.delta_f[k] = f[k] - d.f_bar[k];
  }
  return d;
}

struct GumbelCfg {
  double epsilon = 1.0;
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
      throw std::invalid_argument("GumbelCfg: epsilon must be positive, got " + std::to_string(epsilon));
    }
  }
};

inline constexpr double kNoiseClamp = 1e-12;

inline double clamp_noise(double u) { return std::clamp(u, kNoiseClamp, 1.0 - kNoiseClamp); }

/// sigmoid((alpha + log u - log(1 - u)) / epsilon) for a given noise sample u.
inline double gumbel_transform(double alpha, double u, double epsilon) {
  u = clamp_noise(u);
  return sigmoid((alpha + std::log(u) - std::log1p(-u)) / epsilon);
}

/// Draws one Uniform(0,1) sample per element from `rng`.
inline Vec gumbel_gate(std::span<const double> alpha, const GumbelCfg& cfg, Rng& rng) {
  Vec out(alpha.size());
  for (std::size_t k = 0; k < alpha.size(); ++k) out[k] = gumbel_transform(alpha[k], rng.uniform(), cfg.epsilon);
  return out;
}

/// Mean absolute value; the least-squares scale for a fixed sign pattern.
inline double binary_scale(std::span<const double> w) {
  if (w.empty()) throw std::invalid_argument("binary_scale: empty tensor");
  double s = 0.0;
  for (double x : w) s += std::abs(x);
  return s / static_cast<double>(w.size());
}

/// In-place alpha * sign(w), sign(0) = +1.
inline void binarize_in_place(std::span<double> w) {
  const double alpha = binary_scale(w);
  for (double& x : w) x = x < 0.0 ? -alpha : alpha;
}

inline Mat binary_weight_quantize(const Mat& w) {
  Mat out = w;
  binarize_in_place(out.data);
  return out;
}

}  // namespace qlstm

#endif  // QLSTM_QUANTIZE_HPP_
