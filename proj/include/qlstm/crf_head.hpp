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

#ifndef QLSTM_CRF_HEAD_HPP_
#define QLSTM_CRF_HEAD_HPP_

// Output heads over per-step tag scores ("emissions"): a linear-chain CRF
// and a per-step softmax.
//
// Path score of tags y(0..n-1):
//   start[y0] + sum_t emit[t][y_t] + sum_{t>0} trans[y_{t-1}][y_t] + stop[y_{n-1}]

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "qlstm/num_core.hpp"
#include "qlstm/random.hpp"

namespace qlstm {

using Emissions = std::vector<Vec>;

struct CrfParams {
  Mat emit;        // tags x (2*hidden)
  Vec emit_bias;   // tags
  Mat trans;       // tags x tags, trans(from, to)
  Vec start;
  Vec stop;

  std::size_t tags() const { return emit_bias.size(); }

  friend bool operator==(const CrfParams&, const CrfParams&) = default;
};

template <class Head, class F>
  requires std::is_same_v<std::remove_const_t<Head>, CrfParams>
void visit_head(Head& p, const std::string& prefix, F&& f) {
  f(prefix + "emit", p.emit);
  f(prefix + "emit_bias", p.emit_bias);
  f(prefix + "trans", p.trans);
  f(prefix + "start", p.start);
  f(prefix + "stop", p.stop);
}

inline CrfParams zero_head(std::size_t tags, std::size_t feature_dim) {
  CrfParams p;
  p.emit = Mat(tags, feature_dim);
  p.emit_bias = Vec(tags, 0.0);
  p.trans = Mat(tags, tags);
  p.start = Vec(tags, 0.0);
  p.stop = Vec(tags, 0.0);
  return p;
}

/// Projection uniform in +-1/sqrt(hidden); transitions and boundaries zero.
inline CrfParams init_head(std::size_t tags, std::size_t hidden, std::uint64_t seed) {
  CrfParams p = zero_head(tags, 2 * hidden);
  Rng rng = Rng::derive(seed, {0xc4f});
  const double s = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (double& x : p.emit.data) x = rng.uniform(-s, s);
  return p;
}

inline Emissions project(const CrfParams& p, const std::vector<Vec>& features) {
  Emissions e;
  e.reserve(features.size());
  for (const Vec& h : features) e.push_back(affine(p.emit, h, p.emit_bias));
  return e;
}

namespace detail {

inline void check_emissions(const Emissions& e, const CrfParams& p) {
  if (e.empty()) throw std::invalid_argument("crf: empty emission sequence");
  for (const Vec& v : e) require_len(v.size(), p.tags(), "crf emissions");
  if (p.trans.rows != p.tags() || p.trans.cols != p.tags() || p.start.size() != p.tags() ||
      p.stop.size() != p.tags()) {
    throw ShapeError("crf: transition/boundary shapes do not match " + std::to_string(p.tags()) + " tags");
  }
}

inline void check_tags(const std::vector<int>& tags, std::size_t n, std::size_t k) {
  if (tags.size() != n) {
    throw std::invalid_argument("crf: " + std::to_string(tags.size()) + " gold tags for " + std::to_string(n) +
                                " steps");
  }
  for (int y : tags) {
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw std::out_of_range("crf: tag id " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
    }
  }
}

// alpha[t][j] = log-sum over prefixes ending in tag j at step t.
inline std::vector<Vec> forward_lattice(const Emissions& e, const CrfParams& p) {
  const std::size_t n = e.size();
  const std::size_t k = p.tags();
  std::vector<Vec> alpha(n, Vec(k));
  for (std::size_t j = 0; j < k; ++j) alpha[0][j] = p.start[j] + e[0][j];
  Vec tmp(k);
  for (std::size_t t = 1; t < n; ++t) {
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t i = 0; i < k; ++i) tmp[i] = alpha[t - 1][i] + p.trans(i, j);
      alpha[t][j] = log_sum_exp(tmp) + e[t][j];
    }
  }
  return alpha;
}

// beta[t][i] = log-sum over suffixes after step t given tag i at step t.
inline std::vector<Vec> backward_lattice(const Emissions& e, const CrfParams& p) {
  const std::size_t n = e.size();
  const std::size_t k = p.tags();
  std::vector<Vec> beta(n, Vec(k));
  beta[n - 1] = p.stop;
  Vec tmp(k);
  for (std::size_t t = n - 1; t-- > 0;) {
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) tmp[j] = p.trans(i, j) + e[t + 1][j] + beta[t + 1][j];
      beta[t][i] = log_sum_exp(tmp);
    }
  }
  return beta;
}

}  // namespace detail

inline double crf_log_partition(const Emissions& e, const CrfParams& p) {
  detail::check_emissions(e, p);
  const std::vector<Vec> alpha = detail::forward_lattice(e, p);
  Vec last = alpha.back();
  for (std::size_t j = 0; j < last.size(); ++j) last[j] += p.stop[j];
  return log_sum_exp(last);
}

inline double crf_path_score(const Emissions& e, const std::vector<int>& tags, const CrfParams& p) {
  detail::check_emissions(e, p);
  detail::check_tags(tags, e.size(), p.tags());
  double s = p.start[static_cast<std::size_t>(tags[0])] + p.stop[static_cast<std::size_t>(tags.back())];
  for (std::size_t t = 0; t < e.size(); ++t) {
    s += e[t][static_cast<std::size_t>(tags[t])];
    if (t > 0) s += p.trans(static_cast<std::size_t>(tags[t - 1]), static_cast<std::size_t>(tags[t]));
  }
  return s;
}

struct CrfNll {
  double loss = 0.0;
  Emissions d_emissions;
  Mat d_trans;
  Vec d_start;
  Vec d_stop;
};

/// Negative log-likelihood of the gold path and its gradients, from
/// forward-backward marginals.
inline CrfNll crf_nll(const Emissions& e, const std::vector<int>& gold, const CrfParams& p) {
  detail::check_emissions(e, p);
  detail::check_tags(gold, e.size(), p.tags());
  const std::size_t n = e.size();
  const std::size_t k = p.tags();
  const std::vector<Vec> alpha = detail::forward_lattice(e, p);
  const std::vector<Vec> beta = detail::backward_lattice(e, p);
  Vec last = alpha.back();
  for (std::size_t j = 0; j < k; ++j) last[j] += p.stop[j];
  const double log_z = log_sum_exp(last);

  CrfNll out;
  out.loss = log_z - crf_path_score(e, gold, p);
  out.d_emissions.assign(n, Vec(k, 0.0));
  out.d_trans = Mat(k, k);
  out.d_start = Vec(k, 0.0);
  out.d_stop = Vec(k, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t j = 0; j < k; ++j) out.d_emissions[t][j] = std::exp(alpha[t][j] + beta[t][j] - log_z);
  }
  for (std::size_t j = 0; j < k; ++j) {
    out.d_start[j] = out.d_emissions[0][j];
    out.d_stop[j] = out.d_emissions[n - 1][j];
  }
  for (std::size_t t = 1; t < n; ++t) {
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        out.d_trans(i, j) += std::exp(alpha[t - 1][i] + p.trans(i, j) + e[t][j] + beta[t][j] - log_z);
      }
    }
  }
  for (std::size_t t = 0; t < n; ++t) {
    const auto y = static_cast<std::size_t>(gold[t]);
    out.d_emissions[t][y] -= 1.0;
    if (t > 0) out.d_trans(static_cast<std::size_t>(gold[t - 1]), y) -= 1.0;
  }
  out.d_start[static_cast<std::size_t>(gold.front())] -= 1.0;
  out.d_stop[static_cast<std::size_t>(gold.back())] -= 1.0;
  return out;
}

/// Highest-scoring tag path; ties go to the lower tag id.
inline std::vector<int> viterbi_decode(const Emissions& e, const CrfParams& p) {
  detail::check_emissions(e, p);
  const std::size_t n = e.size();
  const std::size_t k = p.tags();
  std::vector<Vec> score(n, Vec(k));
  std::vector<std::vector<int>> back(n, std::vector<int>(k, 0));
  for (std::size_t j = 0; j < k; ++j) score[0][j] = p.start[j] + e[0][j];
  for (std::size_t t = 1; t < n; ++t) {
    for (std::size_t j = 0; j < k; ++j) {
      double best = -std::numeric_limits<double>::infinity();
      int arg = 0;
      for (std::size_t i = 0; i < k; ++i) {
        const double s = score[t - 1][i] + p.trans(i, j);
        if (s > best) {
          best = s;
          arg = static_cast<int>(i);
        }
      }
      score[t][j] = best + e[t][j];
      back[t][j] = arg;
    }
  }
  double best = -std::numeric_limits<double>::infinity();
  int arg = 0;
  for (std::size_t j = 0; j < k; ++j) {
    const double s = score[n - 1][j] + p.stop[j];
    if (s > best) {
      best = s;
      arg = static_cast<int>(j);
    }
  }
  std::vector<int> path(n);
  path[n - 1] = arg;
  for (std::size_t t = n - 1; t > 0; --t) path[t - 1] = back[t][static_cast<std::size_t>(path[t])];
  return path;
}

struct SoftmaxNll {
  double loss = 0.0;
  Emissions d_logits;
};

/// Mean per-step cross-entropy of softmax(logits[t]) against gold[t].
inline SoftmaxNll softmax_nll(const Emissions& logits, const std::vector<int>& gold) {
  if (logits.empty()) throw std::invalid_argument("softmax_nll: empty sequence");
  const std::size_t k = logits.front().size();
  detail::check_tags(gold, logits.size(), k);
  const double inv_n = 1.0 / static_cast<double>(logits.size());
  SoftmaxNll out;
  out.d_logits.resize(logits.size());
  for (std::size_t t = 0; t < logits.size(); ++t) {
    const auto y = static_cast<std::size_t>(gold[t]);
    out.loss += (log_sum_exp(logits[t]) - logits[t][y]) * inv_n;
    Vec d = softmax(logits[t]);
    d[y] -= 1.0;
    for (double& x : d) x *= inv_n;
    out.d_logits[t] = std::move(d);
  }
  return out;
}

struct SoftmaxHeadNll {
  double loss = 0.0;
  std::vector<Vec> d_features;
  Mat d_proj;
  Vec d_bias;
};

/// softmax(proj . h(t) + bias) head over a feature sequence.
inline SoftmaxHeadNll softmax_head_nll(const std::vector<Vec>& h, const Mat& proj, const Vec& bias,
                                       const std::vector<int>& gold) {
  Emissions logits;
  logits.reserve(h.size());
  for (const Vec& x : h) logits.push_back(affine(proj, x, bias));
  SoftmaxNll s = softmax_nll(logits, gold);
  SoftmaxHeadNll out;
  out.loss = s.loss;
  out.d_proj = Mat(proj.rows, proj.cols);
  out.d_bias = Vec(proj.rows, 0.0);
  out.d_features.assign(h.size(), Vec(proj.cols, 0.0));
  for (std::size_t t = 0; t < h.size(); ++t) {
    outer_acc(s.d_logits[t], h[t], out.d_proj);
    axpy(1.0, s.d_logits[t], out.d_bias);
    gemv_t_acc(proj, s.d_logits[t], out.d_features[t]);
  }
  return out;
}

inline std::vector<int> argmax_decode(const Emissions& logits) {
  std::vector<int> out(logits.size());
  for (std::size_t t = 0; t < logits.size(); ++t) {
    out[t] = static_cast<int>(std::max_element(logits[t].begin(), logits[t].end()) - logits[t].begin());
  }
  return out;
}

}  // namespace qlstm

#endif  // QLSTM_CRF_HEAD_HPP_
