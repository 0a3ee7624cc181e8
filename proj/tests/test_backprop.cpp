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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "qlstm/backprop.hpp"
#include "qlstm/grad_check.hpp"
#include "qlstm/model.hpp"

namespace qlstm {
namespace {

// Linear probe loss L = sum_t <w_t, h_t> over one direction; its gradient
// w.r.t. h_t is w_t, which isolates lstm_backward from any head.
struct CellProbe {
  CellParams p;
  std::vector<Vec> xs;
  std::vector<Vec> w;
};

CellProbe make_probe(std::size_t hidden, std::size_t input, std::size_t steps, std::uint64_t seed) {
  Rng rng(seed);
  CellProbe c;
  c.p = init_cell(hidden, input, rng);
  for (double& v : c.p.V_c.data) v += rng.uniform(-0.3, 0.3);
  for (Vec* b : {&c.p.b_i, &c.p.b_c, &c.p.b_o})
    for (double& v : *b) v = rng.uniform(-0.5, 0.5);
  for (std::size_t t = 0; t < steps; ++t) {
    Vec x(input), w(hidden);
    for (double& v : x) v = rng.uniform(-1, 1);
    for (double& v : w) v = rng.uniform(-1, 1);
    c.xs.push_back(x);
    c.w.push_back(w);
  }
  return c;
}

double probe_loss(const CellParams& p, const CellProbe& c, const GateMode& mode) {
  Rng rng(0);
  const ForwardCache fc = lstm_forward(p, c.xs, {}, mode, Phase::Train, rng);
  double l = 0;
  for (std::size_t t = 0; t < fc.steps.size(); ++t)
    for (std::size_t k = 0; k < c.w[t].size(); ++k) l += c.w[t][k] * fc.steps[t].h[k];
  return l;
}

double cell_fd_max_rel_error(const CellProbe& c, double eps) {
  Rng rng(0);
  const ForwardCache fc = lstm_forward(c.p, c.xs, {}, GateMode{}, Phase::Train, rng);
  const BackwardCache bc = lstm_backward(fc, c.p, c.w);
  CellParams probe = c.p;
  std::vector<std::pair<std::span<double>, std::span<const double>>> pairs;
  std::vector<std::span<double>> ps;
  std::vector<std::span<const double>> gs;
  visit_cell(probe, "", [&](const std::string&, auto& t) {
    if constexpr (std::is_same_v<std::remove_cvref_t<decltype(t)>, Mat>) ps.emplace_back(t.data);
    else ps.emplace_back(t);
  });
  visit_cell(bc.grads, "", [&](const std::string&, const auto& t) {
    if constexpr (std::is_same_v<std::remove_cvref_t<decltype(t)>, Mat>) gs.emplace_back(t.data);
    else gs.emplace_back(t);
  });
  double worst = 0;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    for (std::size_t k = 0; k < ps[i].size(); ++k) {
      const double saved = ps[i][k];
      ps[i][k] = saved + eps;
      const double lp = probe_loss(probe, c, GateMode{});
      ps[i][k] = saved - eps;
      const double lm = probe_loss(probe, c, GateMode{});
      ps[i][k] = saved;
      const double num = (lp - lm) / (2 * eps);
      const double a = gs[i][k];
      worst = std::max(worst, std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-8}));
    }
  }
  return worst;
}

TEST(LstmBackward, ZeroLossGradientGivesZeroGradients) {
  const CellProbe c = make_probe(3, 2, 4, 1);
  Rng rng(0);
  const ForwardCache fc = lstm_forward(c.p, c.xs, {}, GateMode{}, Phase::Train, rng);
  const BackwardCache bc = lstm_backward(fc, c.p, std::vector<Vec>(4, Vec(3, 0.0)));
  visit_cell(bc.grads, "", [](const std::string& name, const auto& t) {
    if constexpr (std::is_same_v<std::remove_cvref_t<decltype(t)>, Mat>) {
      for (double v : t.data) EXPECT_EQ(v, 0.0) << name;
    } else {
      for (double v : t) EXPECT_EQ(v, 0.0) << name;
    }
  });
}

TEST(LstmBackward, SingleStepMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    EXPECT_LT(cell_fd_max_rel_error(make_probe(2, 2, 1, seed), 1e-5), 1e-6) << "seed " << seed;
  }
}

TEST(LstmBackward, FiveStepsMatchFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    EXPECT_LT(cell_fd_max_rel_error(make_probe(4, 3, 5, seed), 1e-5), 1e-4) << "seed " << seed;
  }
}

TEST(LstmBackward, MismatchedCacheThrows) {
  const CellProbe c = make_probe(3, 2, 4, 1);
  Rng rng(0);
  const ForwardCache fc = lstm_forward(c.p, c.xs, {}, GateMode{}, Phase::Train, rng);
  EXPECT_THROW(lstm_backward(fc, c.p, std::vector<Vec>(3, Vec(3, 0.0))), ShapeError);
  Rng r2(1);
  const CellParams other = init_cell(5, 2, r2);
  EXPECT_THROW(lstm_backward(fc, other, std::vector<Vec>(4, Vec(5, 0.0))), ShapeError);
}

GateMode train_quant_mode() {
  GateMode m;
  m.input.round_clip = m.forget.round_clip = true;
  m.apply_phase = ApplyPhase::TrainAndTest;
  return m;
}

TEST(LstmBackward, SteRulesCoincideWhenGatesSitOnCodePoints) {
  // Zero weights and biases put every gate at sigmoid(0) = 0.5, a code point.
  CellParams p = zero_cell(3, 2);
  p.U_c.data = {0.2, -0.4, 0.3, 0.1, -0.5, 0.6};
  std::vector<Vec> xs{{1, 0.5}, {-0.3, 0.2}, {0.7, -0.9}};
  Rng r1(0), r2(0);
  const ForwardCache fc = lstm_forward(p, xs, {}, train_quant_mode(), Phase::Train, r1);
  for (const StepCache& s : fc.steps) EXPECT_EQ(s.f.decomp.delta_f, Vec(3, 0.0));
  const std::vector<Vec> dh{{1, 0, 0}, {0, 1, 0}, {0.5, 0.5, -1}};
  const BackwardCache a = lstm_backward(fc, p, dh, SteRule::FullPrecision);
  const BackwardCache b = lstm_backward(fc, p, dh, SteRule::QuantizedDerivative);
  EXPECT_EQ(a.grads, b.grads);
}

TEST(LstmBackward, SteRuleNeverChangesForwardLoss) {
  const CellProbe c = make_probe(4, 3, 5, 2);
  EXPECT_EQ(probe_loss(c.p, c, train_quant_mode()), probe_loss(c.p, c, train_quant_mode()));
  Rng r1(0);
  const ForwardCache fc = lstm_forward(c.p, c.xs, {}, train_quant_mode(), Phase::Train, r1);
  const BackwardCache a = lstm_backward(fc, c.p, c.w, SteRule::FullPrecision);
  const BackwardCache b = lstm_backward(fc, c.p, c.w, SteRule::QuantizedDerivative);
  // Same cache feeds both rules; only the derivative factor differs.
  EXPECT_NE(a.grads.W_f, b.grads.W_f);
}

TEST(FactorSplit, ScalarExamples) {
  const GateFactorSplit a = split_gate_factor(Vec{0.6}, QuantDecomp{{0.5}, {0.1}});
  EXPECT_NEAR(a.full[0], 0.24, 1e-15);
  EXPECT_NEAR(a.term1[0], 0.25, 1e-15);
  EXPECT_NEAR(a.term2[0], -0.01, 1e-15);
  const GateFactorSplit b = split_gate_factor(Vec{0.8}, QuantDecomp{{1.0}, {-0.2}});
  EXPECT_NEAR(b.full[0], 0.16, 1e-15);
  EXPECT_EQ(b.term1[0], 0.0);
  EXPECT_NEAR(b.term2[0], 0.16, 1e-15);
}

TEST(FactorSplit, IdentityAndBoundOnRandomGates) {
  Rng rng(4);
  Vec f(1000);
  for (double& v : f) v = rng.uniform();
  const RoundClipScheme s(0.5, 1.0);
  const QuantDecomp d = quant_decompose(f, s);
  const GateFactorSplit sp = split_gate_factor(f, d);
  double worst = 0;
  for (std::size_t k = 0; k < f.size(); ++k) {
    worst = std::max(worst, std::abs(sp.full[k] - (sp.term1[k] + sp.term2[k])));
    const double factor = 1.0 - 2.0 * d.f_bar[k] - d.delta_f[k];
    EXPECT_GE(factor, -1.0);
    EXPECT_LE(factor, 1.0);
  }
  EXPECT_LT(worst, 1e-12);
}

TEST(GradientSplit, ReconstructsFullPrecisionGradient) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const CellProbe c = make_probe(5, 3, 6, seed);
    Rng rng(0);
    const ForwardCache fc = lstm_forward(c.p, c.xs, {}, train_quant_mode(), Phase::Train, rng);
    const BackwardCache bc = lstm_backward(fc, c.p, c.w, SteRule::FullPrecision);
    for (Gate g : {Gate::Input, Gate::Forget}) {
      const GateGradientSplit s = decompose_gate_gradient(fc, bc, g);
      EXPECT_LT(s.max_factor_error, 1e-12);
      for (std::size_t k = 0; k < s.full.size(); ++k) {
        EXPECT_NEAR(s.term1.data[k] + s.term2.data[k], s.full.data[k], 1e-10);
      }
      // With the full-precision rule the backward pass itself produces "full".
      const Mat& w = g == Gate::Input ? bc.grads.W_i : bc.grads.W_f;
      for (std::size_t k = 0; k < w.size(); ++k) EXPECT_NEAR(w.data[k], s.full.data[k], 1e-12);
    }
  }
}

TEST(GradientSplit, QuantizedRuleProducesFirstTermOnly) {
  const CellProbe c = make_probe(4, 3, 5, 3);
  Rng rng(0);
  const ForwardCache fc = lstm_forward(c.p, c.xs, {}, train_quant_mode(), Phase::Train, rng);
  const BackwardCache full = lstm_backward(fc, c.p, c.w, SteRule::FullPrecision);
  const BackwardCache quant = lstm_backward(fc, c.p, c.w, SteRule::QuantizedDerivative);
  // Upstream signals agree at the last step, so the last-step contribution
  // to W_f equals term1 under the quantized rule.
  EXPECT_EQ(full.d_gate_f.back(), quant.d_gate_f.back());
}

TEST(GradientSplit, MissingDecompositionThrows) {
  const CellProbe c = make_probe(3, 2, 3, 1);
  Rng rng(0);
  const ForwardCache fc = lstm_forward(c.p, c.xs, {}, GateMode{}, Phase::Train, rng);
  const BackwardCache bc = lstm_backward(fc, c.p, c.w);
  EXPECT_THROW(decompose_gate_gradient(fc, bc, Gate::Forget), MissingDecompError);
}

TEST(ResidualTrend, Flags) {
  DecompReport a, b, c;
  a.input.mean_abs_delta_f = b.input.mean_abs_delta_f = 0.2;
  a.forget.mean_abs_delta_f = 0.3;
  b.forget.mean_abs_delta_f = 0.2;
  c.forget.mean_abs_delta_f = 0.1;
  c.input.mean_abs_delta_f = 0.2;
  const ResidualTrend t = residual_trend({a, b, c});
  EXPECT_FALSE(t.input_decreased);
  EXPECT_TRUE(t.forget_decreased);
  EXPECT_EQ(t.forget_series, (std::vector<double>{0.3, 0.2, 0.1}));
  EXPECT_FALSE(residual_trend({a}).forget_decreased);
}

Model perturbed_model(const Dims& d, std::uint64_t seed, bool peepholes = true) {
  Model m = init_model(d, seed, peepholes);
  Rng rng(seed * 31 + 7);
  // Nonzero transitions/biases so every head parameter carries gradient.
  for (auto& t : tensors(m)) {
    if (t.name == "head.trans" || t.name == "head.start" || t.name == "head.stop" || t.name == "head.emit_bias")
      for (double& v : t.data) v = rng.uniform(-0.5, 0.5);
  }
  return m;
}

TEST(FiniteDiffCheck, TinyNetCrf) {
  const Dims d{5, 3, 2, 2};
  Rng rng(1);
  const auto batch = random_batch(5, 2, 4, rng, 2);
  const Model m = perturbed_model(d, 1);
  const GradCheckResult r = finite_diff_check(m, batch, GateMode{}, 1e-2, HeadKind::Crf, {}, FdStencil::Richardson);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_tensor << "[" << r.worst_index << "] " << r.worst_analytic << " vs " << r.worst_numeric;
  EXPECT_GT(r.checked, 100u);
}

TEST(FiniteDiffCheck, SoftmaxHeadAndNoPeepholes) {
  const Dims d{6, 3, 3, 3};
  Rng rng(2);
  const auto batch = random_batch(6, 3, 5, rng, 2);
  const auto r = FdStencil::Richardson;
  EXPECT_LT(finite_diff_check(perturbed_model(d, 2), batch, GateMode{}, 1e-2, HeadKind::Softmax, {}, r).max_rel_error,
            1e-4);
  EXPECT_LT(finite_diff_check(perturbed_model(d, 3, false), batch, GateMode{}, 1e-2, HeadKind::Crf, {}, r).max_rel_error,
            1e-4);
}

TEST(FiniteDiffCheck, StepSizesAgreeOnVerdict) {
  const Dims d{5, 3, 2, 2};
  Rng rng(3);
  const auto batch = random_batch(5, 2, 4, rng, 2);
  const Model m = perturbed_model(d, 4);
  const auto r = FdStencil::Richardson;
  const bool a = finite_diff_check(m, batch, GateMode{}, 1e-2, HeadKind::Crf, {}, r).max_rel_error < 1e-4;
  const bool b = finite_diff_check(m, batch, GateMode{}, 3e-3, HeadKind::Crf, {}, r).max_rel_error < 1e-4;
  EXPECT_TRUE(a);
  EXPECT_EQ(a, b);
}

TEST(FiniteDiffCheck, DetectsCorruptedForgetGradient) {
  const Dims d{5, 3, 2, 2};
  Rng rng(1);
  const auto batch = random_batch(5, 2, 4, rng, 2);
  const Model m = perturbed_model(d, 1);
  const GradCheckResult r =
      finite_diff_check(m, batch, GateMode{}, 1e-2, HeadKind::Crf, [](Model& g) {
        for (double& v : g.lstm.fwd.W_f.data) v *= 1.01;
      }, FdStencil::Richardson);
  EXPECT_GT(r.max_rel_error, 1e-4);
  EXPECT_NE(r.worst_tensor.find("W_f"), std::string::npos);
}

TEST(FiniteDiffCheck, RefusesQuantizedModes) {
  const Dims d{5, 3, 2, 2};
  Rng rng(1);
  const auto batch = random_batch(5, 2, 4, rng, 2);
  GateMode m;
  m.forget.round_clip = true;
  EXPECT_THROW(finite_diff_check(init_model(d, 1), batch, m, 1e-5), std::invalid_argument);
  GateMode g;
  g.input.gumbel = true;
  EXPECT_THROW(finite_diff_check(init_model(d, 1), batch, g, 1e-5), std::invalid_argument);
}

}  // namespace
}  // namespace qlstm
