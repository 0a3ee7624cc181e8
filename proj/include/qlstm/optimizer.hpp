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

#ifndef QLSTM_OPTIMIZER_HPP_
#define QLSTM_OPTIMIZER_HPP_

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

#include "qlstm/model.hpp"

namespace qlstm {

enum class OptimizerKind { Sgd, Adam };

inline const char* optimizer_name(OptimizerKind k) { return k == OptimizerKind::Sgd ? "sgd" : "adam"; }

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "adam") return OptimizerKind::Adam;
  throw std::invalid_argument("optimizer must be 'sgd' or 'adam', got '" + s + "'");
}

struct OptimizerCfg {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 1e-3;
  double momentum = 0.0;  // sgd
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;  // <= 0 disables clipping

  void validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("optimizer: lr must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("optimizer: momentum must be in [0, 1)");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
      throw std::invalid_argument("optimizer: betas must be in [0, 1)");
    if (!(eps > 0.0)) throw std::invalid_argument("optimizer: eps must be > 0");
  }

  friend bool operator==(const OptimizerCfg&, const OptimizerCfg&) = default;
};

struct OptimizerState {
  Model m;  // momentum buffer / first moment
  Model v;  // second moment (adam)
  long step = 0;
  bool initialized = false;
};

/// Rescales `g` in place so its global norm is at most `max_norm`.
/// Returns the norm before clipping.
inline double clip_global_norm(Model& g, double max_norm) {
  const double n = global_norm(g);
  if (max_norm > 0.0 && n > max_norm) scale_by(g, max_norm / n);
  return n;
}

/// One update; clips `grads` in place first.
inline void optimizer_step(Model& params, Model& grads, OptimizerState& st, const OptimizerCfg& cfg) {
  if (!st.initialized) {
    st.m = zeros_like(params);
    if (cfg.kind == OptimizerKind::Adam) st.v = zeros_like(params);
    st.initialized = true;
  }
  clip_global_norm(grads, cfg.clip_norm);
  ++st.step;
  auto p = tensors(params);
  const auto g = tensors(std::as_const(grads));
  auto m = tensors(st.m);
  if (cfg.kind == OptimizerKind::Sgd) {
    for (std::size_t ti = 0; ti < p.size(); ++ti) {
      for (std::size_t k = 0; k < p[ti].data.size(); ++k) {
        m[ti].data[k] = cfg.momentum * m[ti].data[k] + g[ti].data[k];
        p[ti].data[k] -= cfg.lr * m[ti].data[k];
      }
    }
    return;
  }
  auto v = tensors(st.v);
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (std::size_t ti = 0; ti < p.size(); ++ti) {
    for (std::size_t k = 0; k < p[ti].data.size(); ++k) {
      const double gk = g[ti].data[k];
      double& mk = m[ti].data[k];
      double& vk = v[ti].data[k];
      mk = cfg.beta1 * mk + (1.0 - cfg.beta1) * gk;
      vk = cfg.beta2 * vk + (1.0 - cfg.beta2) * gk * gk;
      p[ti].data[k] -= cfg.lr * (mk / c1) / (std::sqrt(vk / c2) + cfg.eps);
    }
  }
}

}  // namespace qlstm

#endif  // QLSTM_OPTIMIZER_HPP_
