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

#ifndef QLSTM_BACKPROP_HPP_
#define QLSTM_BACKPROP_HPP_

// Backpropagation through time for one LSTM direction, plus the split of
// the gate-derivative factor f(1-f) into a quantized part and a residual:
//
//   f(1-f) = f_bar(1-f_bar) + df(1 - 2 f_bar - df),   f = f_bar + df.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "qlstm/lstm_net.hpp"
#include "qlstm/num_core.hpp"
#include "qlstm/quantize.hpp"

namespace qlstm {

/// How the backward pass differentiates through a quantized gate.
///
/// FullPrecision treats Round & Clip as the identity and uses the
/// unquantized gate value in the sigmoid derivative. QuantizedDerivative
/// keeps the identity pass-through but evaluates the derivative at the
/// quantized value, f_bar(1 - f_bar).
enum class SteRule { FullPrecision, QuantizedDerivative };

struct BackwardCache {
  CellParams grads;
  std::vector<Vec> delta_c;  // dL/dC(t) after all contributions at step t
  std::vector<Vec> delta_h;  // dL/dh(t), external plus recurrent
  std::vector<Vec> dx;       // dL/dx(t) for the embedded input
  // dL/d(gate value) per step; the forget-gate one is delta_c(t) . C(t-1).
  std::vector<Vec> d_gate_i, d_gate_f, d_gate_o;
};

/// d(gate value)/d(alpha), element k, under `ste`.
inline double gate_derivative(const GateCache& gc, std::size_t k, SteRule ste, double epsilon) {
  double f = gc.soft[k];
  if (gc.quantized && ste == SteRule::QuantizedDerivative) f = gc.decomp.f_bar[k];
  const double d = f * (1.0 - f);
  return gc.gumbel ? d / epsilon : d;
}

/// Gradients of every CellParams field given dL/dh(t) for each step.
inline BackwardCache lstm_backward(const ForwardCache& cache, const CellParams& p, const std::vector<Vec>& loss_grads,
                                   SteRule ste = SteRule::FullPrecision) {
  const std::size_t steps = cache.steps.size();
  const std::size_t n = p.hidden();
  if (loss_grads.size() != steps) {
    throw ShapeError("lstm_backward: " + std::to_string(loss_grads.size()) + " loss gradients for " +
                     std::to_string(steps) + " cached steps");
  }
  for (const StepCache& s : cache.steps) {
    if (s.h.size() != n || s.x.size() != p.input_dim()) {
      throw ShapeError("lstm_backward: cache hidden=" + std::to_string(s.h.size()) + " input=" +
                       std::to_string(s.x.size()) + " does not match params hidden=" + std::to_string(n) +
                       " input=" + std::to_string(p.input_dim()));
    }
  }

  BackwardCache bc;
  bc.grads = zero_cell(n, p.input_dim());
  bc.delta_c.assign(steps, Vec(n, 0.0));
  bc.delta_h.assign(steps, Vec(n, 0.0));
  bc.dx.assign(steps, Vec(p.input_dim(), 0.0));
  bc.d_gate_i.assign(steps, Vec(n, 0.0));
  bc.d_gate_f.assign(steps, Vec(n, 0.0));
  bc.d_gate_o.assign(steps, Vec(n, 0.0));
  CellParams& gp = bc.grads;
  const bool peep = cache.peepholes;
  const double eps = cache.epsilon;

  Vec dh_next(n, 0.0);
  Vec dc_next(n, 0.0);
  Vec da_i(n), da_f(n), da_c(n), da_o(n), dz(n);
  for (std::size_t tt = steps; tt-- > 0;) {
    const StepCache& s = cache.steps[tt];
    Vec& dh = bc.delta_h[tt];
    require_len(loss_grads[tt].size(), n, "lstm_backward loss gradient");
    for (std::size_t k = 0; k < n; ++k) dh[k] = loss_grads[tt][k] + dh_next[k];

    // h = o . m, m = tanh(V_c c)
    for (std::size_t k = 0; k < n; ++k) {
      bc.d_gate_o[tt][k] = dh[k] * s.m[k];
      dz[k] = dh[k] * s.o.value[k] * (1.0 - s.m[k] * s.m[k]);
      da_o[k] = bc.d_gate_o[tt][k] * gate_derivative(s.o, k, ste, eps);
    }
    outer_acc(dz, s.c, gp.V_c);
    Vec& dc = bc.delta_c[tt];
    dc = dc_next;
    gemv_t_acc(p.V_c, dz, dc);
    if (peep) {
      for (std::size_t k = 0; k < n; ++k) {
        dc[k] += p.v_o[k] * da_o[k];
        gp.v_o[k] += da_o[k] * s.c[k];
      }
    }

    // c = f . c' + i . g
    for (std::size_t k = 0; k < n; ++k) {
      bc.d_gate_f[tt][k] = dc[k] * s.c_prev[k];
      bc.d_gate_i[tt][k] = dc[k] * s.g[k];
      da_f[k] = bc.d_gate_f[tt][k] * gate_derivative(s.f, k, ste, eps);
      da_i[k] = bc.d_gate_i[tt][k] * gate_derivative(s.i, k, ste, eps);
      da_c[k] = dc[k] * s.i.value[k] * (1.0 - s.g[k] * s.g[k]);
      dc_next[k] = dc[k] * s.f.value[k];
    }
    if (peep) {
      for (std::size_t k = 0; k < n; ++k) {
        dc_next[k] += p.v_i[k] * da_i[k] + p.v_f[k] * da_f[k];
        gp.v_i[k] += da_i[k] * s.c_prev[k];
        gp.v_f[k] += da_f[k] * s.c_prev[k];
      }
    }

    outer_acc(da_i, s.x, gp.U_i);
    outer_acc(da_f, s.x, gp.U_f);
    outer_acc(da_c, s.x, gp.U_c);
    outer_acc(da_o, s.x, gp.U_o);
    outer_acc(da_i, s.h_prev, gp.W_i);
    outer_acc(da_f, s.h_prev, gp.W_f);
    outer_acc(da_c, s.h_prev, gp.W_c);
    outer_acc(da_o, s.h_prev, gp.W_o);
    axpy(1.0, da_i, gp.b_i);
    axpy(1.0, da_f, gp.b_f);
    axpy(1.0, da_c, gp.b_c);
    axpy(1.0, da_o, gp.b_o);

    std::fill(dh_next.begin(), dh_next.end(), 0.0);
    gemv_t_acc(p.W_i, da_i, dh_next);
    gemv_t_acc(p.W_f, da_f, dh_next);
    gemv_t_acc(p.W_c, da_c, dh_next);
    gemv_t_acc(p.W_o, da_o, dh_next);
    Vec& dx = bc.dx[tt];
    gemv_t_acc(p.U_i, da_i, dx);
    gemv_t_acc(p.U_f, da_f, dx);
    gemv_t_acc(p.U_c, da_c, dx);
    gemv_t_acc(p.U_o, da_o, dx);
  }
  return bc;
}

/// Elementwise split of the sigmoid-derivative factor at one gate vector.
struct GateFactorSplit {
  Vec full;   // f(1-f)
  Vec term1;  // f_bar(1-f_bar)
  Vec term2;  // df(1 - 2 f_bar - df)
};

/// `f` is the unquantized gate vector that `d` decomposes.
inline GateFactorSplit split_gate_factor(std::span<const double> f, const QuantDecomp& d) {
  const std::size_t n = d.f_bar.size();
  require_len(f.size(), n, "split_gate_factor");
  GateFactorSplit s{Vec(n), Vec(n), Vec(n)};
  for (std::size_t k = 0; k < n; ++k) {
    const double fb = d.f_bar[k];
    const double df = d.delta_f[k];
    s.full[k] = f[k] * (1.0 - f[k]);
    s.term1[k] = fb * (1.0 - fb);
    s.term2[k] = df * (1.0 - 2.0 * fb - df);
  }
  return s;
}

inline GateFactorSplit split_gate_factor(std::span<const double> f, const RoundClipScheme& scheme) {
  return split_gate_factor(f, quant_decompose(f, scheme));
}

/// Recurrent-weight gradient of one gate split into the quantized-gate term
/// and the residual term. full is what the unquantized factor produces.
struct GateGradientSplit {
  Gate gate = Gate::Forget;
  Mat term1;
  Mat term2;
  Mat full;
  double mean_abs_delta = 0.0;
  double max_factor_error = 0.0;  // max |full - term1 - term2| over factors
};

class MissingDecompError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Requires the gate to have been quantized in the forward pass.
inline GateGradientSplit decompose_gate_gradient(const ForwardCache& fc, const BackwardCache& bc, Gate gate) {
  if (fc.steps.empty()) throw std::invalid_argument("decompose_gate_gradient: empty cache");
  const std::size_t n = fc.steps.front().h.size();
  GateGradientSplit out;
  out.gate = gate;
  out.term1 = Mat(n, n);
  out.term2 = Mat(n, n);
  out.full = Mat(n, n);
  const std::vector<Vec>& upstream =
      gate == Gate::Input ? bc.d_gate_i : (gate == Gate::Forget ? bc.d_gate_f : bc.d_gate_o);
  double abs_sum = 0.0;
  std::size_t count = 0;
  Vec e1(n), e2(n), ef(n);
  for (std::size_t t = 0; t < fc.steps.size(); ++t) {
    const StepCache& s = fc.steps[t];
    const GateCache& gc = s.gate(gate);
    if (!gc.quantized) {
      throw MissingDecompError(std::string("decompose_gate_gradient: ") + gate_name(gate) +
                               " gate was not quantized at step " + std::to_string(t));
    }
    const GateFactorSplit split = split_gate_factor(gc.soft, gc.decomp);
    const double scale = gc.gumbel ? 1.0 / fc.epsilon : 1.0;
    for (std::size_t k = 0; k < n; ++k) {
      e1[k] = upstream[t][k] * split.term1[k] * scale;
      e2[k] = upstream[t][k] * split.term2[k] * scale;
      ef[k] = upstream[t][k] * split.full[k] * scale;
      out.max_factor_error =
          std::max(out.max_factor_error, std::abs(split.full[k] - split.term1[k] - split.term2[k]));
      abs_sum += std::abs(gc.decomp.delta_f[k]);
      ++count;
    }
    outer_acc(e1, s.h_prev, out.term1);
    outer_acc(e2, s.h_prev, out.term2);
    outer_acc(ef, s.h_prev, out.full);
  }
  out.mean_abs_delta = count ? abs_sum / static_cast<double>(count) : 0.0;
  return out;
}

/// Per-gate, per-epoch diagnostics.
struct GateDecompStats {
  double term1_norm = 0.0;
  double term2_norm = 0.0;
  double mean_abs_delta_f = 0.0;

  friend bool operator==(const GateDecompStats&, const GateDecompStats&) = default;
};

struct DecompReport {
  int epoch = 0;
  GateDecompStats input;
  GateDecompStats forget;

  friend bool operator==(const DecompReport&, const DecompReport&) = default;
};

struct ResidualTrend {
  std::vector<double> input_series;
  std::vector<double> forget_series;
  bool input_decreased = false;
  bool forget_decreased = false;
};

inline ResidualTrend residual_trend(const std::vector<DecompReport>& reports) {
  ResidualTrend t;
  for (const DecompReport& r : reports) {
    t.input_series.push_back(r.input.mean_abs_delta_f);
    t.forget_series.push_back(r.forget.mean_abs_delta_f);
  }
  if (reports.size() >= 2) {
    t.input_decreased = t.input_series.back() < t.input_series.front();
    t.forget_decreased = t.forget_series.back() < t.forget_series.front();
  }
  return t;
}

}  // namespace qlstm

#endif  // QLSTM_BACKPROP_HPP_
