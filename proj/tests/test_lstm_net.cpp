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

#include <cmath>
#include <vector>

#include "qlstm/lstm_net.hpp"

namespace qlstm {
namespace {

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Straight-line evaluation of one peephole LSTM step, written against the
// textbook equations rather than the library kernels.
struct OracleStep {
  std::vector<double> h, c;
};

OracleStep oracle_step(const CellParams& p, const Vec& x, const Vec& hp, const Vec& cp) {
  const std::size_t n = p.hidden(), m = x.size();
  auto lin = [&](const Mat& U, const Mat& W, const Vec& b, std::size_t k) {
    double s = b[k];
    for (std::size_t j = 0; j < m; ++j) s += U.data[k * m + j] * x[j];
    for (std::size_t j = 0; j < n; ++j) s += W.data[k * n + j] * hp[j];
    return s;
  };
  OracleStep out{std::vector<double>(n), std::vector<double>(n)};
  for (std::size_t k = 0; k < n; ++k) {
    const double i = sig(lin(p.U_i, p.W_i, p.b_i, k) + p.v_i[k] * cp[k]);
    const double f = sig(lin(p.U_f, p.W_f, p.b_f, k) + p.v_f[k] * cp[k]);
    const double g = std::tanh(lin(p.U_c, p.W_c, p.b_c, k));
    out.c[k] = f * cp[k] + i * g;
  }
  for (std::size_t k = 0; k < n; ++k) {
    const double o = sig(lin(p.U_o, p.W_o, p.b_o, k) + p.v_o[k] * out.c[k]);
    double z = 0;
    for (std::size_t j = 0; j < n; ++j) z += p.V_c.data[k * n + j] * out.c[j];
    out.h[k] = o * std::tanh(z);
  }
  return out;
}

CellParams random_cell(std::size_t hidden, std::size_t input, std::uint64_t seed) {
  Rng rng(seed);
  CellParams p = init_cell(hidden, input, rng);
  for (double& v : p.V_c.data) v += rng.uniform(-0.3, 0.3);
  for (Vec* b : {&p.b_i, &p.b_f, &p.b_c, &p.b_o})
    for (double& v : *b) v = rng.uniform(-0.5, 0.5);
  return p;
}

GateMode round_clip_mode(ApplyPhase phase) {
  GateMode m;
  m.input.round_clip = m.forget.round_clip = true;
  m.apply_phase = phase;
  return m;
}

TEST(InitParams, DeterministicBoundedAndForgetBiasOne) {
  const Dims d{7, 3, 4, 2};
  const LstmParams a = init_params(d, 12);
  EXPECT_EQ(a, init_params(d, 12));
  EXPECT_NE(a, init_params(d, 13));
  for (const CellParams* c : {&a.fwd, &a.bwd}) {
    for (const Mat* m : {&c->U_i, &c->W_f, &c->U_o, &c->W_c}) {
      for (double v : m->data) {
        EXPECT_GE(v, -0.5);
        EXPECT_LE(v, 0.5);
      }
    }
    EXPECT_EQ(c->b_f, Vec(4, 1.0));
    EXPECT_EQ(c->b_i, Vec(4, 0.0));
    EXPECT_EQ(c->V_c, Mat::identity(4));
  }
  EXPECT_THROW(init_params(Dims{0, 3, 4, 2}, 1), std::invalid_argument);
  EXPECT_THROW(init_params(Dims{3, 3, 0, 2}, 1), std::invalid_argument);
}

TEST(CellForward, ZeroParams) {
  const CellParams p = zero_cell(3, 2);
  Rng rng(0);
  const Vec z(3, 0.0);
  for (const GateMode& mode : {GateMode{}, round_clip_mode(ApplyPhase::TrainAndTest)}) {
    const StepCache s = lstm_cell_forward(p, Vec{0.4, -0.2}, z, z, mode, Phase::Train, rng);
    EXPECT_EQ(s.i.value, Vec(3, 0.5));
    EXPECT_EQ(s.f.value, Vec(3, 0.5));
    EXPECT_EQ(s.o.value, Vec(3, 0.5));
    EXPECT_EQ(s.c, z);
    EXPECT_EQ(s.h, z);
  }
}

TEST(CellForward, SaturatedInputGate) {
  CellParams p = zero_cell(2, 2);
  p.b_i = Vec{10, 10};
  Rng rng(0);
  const StepCache s = lstm_cell_forward(p, Vec{0, 0}, Vec{0, 0}, Vec{0, 0}, GateMode{}, Phase::Train, rng);
  EXPECT_NEAR(s.i.value[0], 0.9999546, 1e-7);
}

TEST(CellForward, MatchesStraightLineOracle) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const CellParams p = random_cell(4, 3, seed);
    Rng rng(seed + 100);
    Vec x(3), hp(4), cp(4);
    for (double& v : x) v = rng.uniform(-1, 1);
    for (double& v : hp) v = rng.uniform(-1, 1);
    for (double& v : cp) v = rng.uniform(-2, 2);
    const StepCache s = lstm_cell_forward(p, x, hp, cp, GateMode{}, Phase::Train, rng);
    const OracleStep o = oracle_step(p, x, hp, cp);
    for (std::size_t k = 0; k < 4; ++k) {
      EXPECT_NEAR(s.h[k], o.h[k], 1e-14);
      EXPECT_NEAR(s.c[k], o.c[k], 1e-14);
    }
  }
}

TEST(CellForward, ShapeMismatchThrows) {
  const CellParams p = zero_cell(3, 2);
  Rng rng(0);
  EXPECT_THROW(lstm_cell_forward(p, Vec{0, 0, 0}, Vec(3), Vec(3), GateMode{}, Phase::Train, rng), ShapeError);
  EXPECT_THROW(lstm_cell_forward(p, Vec{0, 0}, Vec(2), Vec(3), GateMode{}, Phase::Train, rng), ShapeError);
}

TEST(CellForward, PeepholesOffIgnoresVectors) {
  CellParams p = random_cell(3, 2, 4);
  CellParams q = p;
  for (Vec* v : {&q.v_i, &q.v_f, &q.v_o}) std::fill(v->begin(), v->end(), 0.0);
  Rng r1(0), r2(0);
  const Vec x{0.3, -0.7}, hp{0.1, 0.2, -0.3}, cp{1.0, -1.0, 0.5};
  const StepCache a = lstm_cell_forward(p, x, hp, cp, GateMode{}, Phase::Train, r1, false);
  const StepCache b = lstm_cell_forward(q, x, hp, cp, GateMode{}, Phase::Train, r2, true);
  EXPECT_EQ(a.h, b.h);
}

TEST(BiLstm, LengthOneSeesSameToken) {
  const LstmParams p = init_params(Dims{5, 3, 4, 2}, 3);
  Rng rng(0);
  const BiForward out = bilstm_forward(p, std::vector<int>{2}, GateMode{}, Phase::Test, rng);
  ASSERT_EQ(out.outputs.size(), 1u);
  EXPECT_EQ(out.outputs[0].size(), 8u);
  EXPECT_EQ(out.fwd.steps[0].x, out.bwd.steps[0].x);
}

TEST(BiLstm, PalindromeWithTiedDirections) {
  LstmParams p = init_params(Dims{6, 3, 4, 2}, 9);
  p.bwd = p.fwd;
  const std::vector<int> seq{1, 4, 2, 4, 1};
  Rng rng(0);
  const BiForward out = bilstm_forward(p, seq, GateMode{}, Phase::Test, rng);
  const std::size_t n = seq.size();
  for (std::size_t t = 0; t < n; ++t) {
    const Vec& a = out.outputs[t];
    const Vec& b = out.outputs[n - 1 - t];
    for (std::size_t k = 0; k < 4; ++k) {
      EXPECT_EQ(a[k], b[k + 4]);
      EXPECT_EQ(a[k + 4], b[k]);
    }
  }
}

TEST(BiLstm, ConcatenatesIndependentUnidirectionalRuns) {
  const LstmParams p = init_params(Dims{8, 3, 5, 2}, 21);
  const std::vector<int> seq{3, 1, 7, 0, 2, 2};
  Rng rng(0);
  const BiForward out = bilstm_forward(p, seq, GateMode{}, Phase::Test, rng);
  const std::size_t n = seq.size();
  // Oracle: chain oracle_step forward and over the reversed sequence.
  Vec h(5, 0.0), c(5, 0.0), hb(5, 0.0), cb(5, 0.0);
  std::vector<Vec> fwd(n), bwd(n);
  for (std::size_t t = 0; t < n; ++t) {
    const auto r = p.embedding.row(static_cast<std::size_t>(seq[t]));
    OracleStep s = oracle_step(p.fwd, Vec(r.begin(), r.end()), h, c);
    h = s.h;
    c = s.c;
    fwd[t] = h;
    const auto rb = p.embedding.row(static_cast<std::size_t>(seq[n - 1 - t]));
    OracleStep sb = oracle_step(p.bwd, Vec(rb.begin(), rb.end()), hb, cb);
    hb = sb.h;
    cb = sb.c;
    bwd[n - 1 - t] = hb;
  }
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t k = 0; k < 5; ++k) {
      EXPECT_NEAR(out.outputs[t][k], fwd[t][k], 1e-13);
      EXPECT_NEAR(out.outputs[t][k + 5], bwd[t][k], 1e-13);
    }
  }
}

TEST(BiLstm, EmptySequenceThrows) {
  const LstmParams p = init_params(Dims{5, 3, 4, 2}, 3);
  Rng rng(0);
  EXPECT_THROW(bilstm_forward(p, std::vector<int>{}, GateMode{}, Phase::Test, rng), std::invalid_argument);
  EXPECT_THROW(bilstm_forward(p, std::vector<int>{9}, GateMode{}, Phase::Test, rng), std::out_of_range);
}

TEST(GateModes, RawGatesStayInOpenUnitInterval) {
  const LstmParams p = init_params(Dims{10, 4, 6, 2}, 5);
  Rng rng(1);
  std::vector<int> seq;
  for (int i = 0; i < 30; ++i) seq.push_back(static_cast<int>(rng.below(10)));
  const BiForward out = bilstm_forward(p, seq, round_clip_mode(ApplyPhase::TrainAndTest), Phase::Train, rng);
  for (const ForwardCache* fc : {&out.fwd, &out.bwd}) {
    for (const StepCache& s : fc->steps) {
      for (const GateCache* g : {&s.i, &s.f, &s.o}) {
        for (double v : g->raw) {
          EXPECT_GT(v, 0.0);
          EXPECT_LT(v, 1.0);
        }
      }
    }
  }
}

TEST(GateModes, IdentityIgnoresApplyPhase) {
  const LstmParams p = init_params(Dims{10, 4, 6, 2}, 5);
  const std::vector<int> seq{1, 2, 3, 9, 0};
  GateMode a, b;
  a.apply_phase = ApplyPhase::TrainAndTest;
  b.apply_phase = ApplyPhase::TestOnly;
  for (Phase ph : {Phase::Train, Phase::Test}) {
    Rng r1(3), r2(3);
    EXPECT_EQ(bilstm_forward(p, seq, a, ph, r1).outputs, bilstm_forward(p, seq, b, ph, r2).outputs);
  }
}

TEST(GateModes, TestTimeRoundClipGatesOnGrid) {
  const LstmParams p = init_params(Dims{10, 4, 6, 2}, 8);
  const std::vector<int> seq{4, 4, 1, 7, 3, 2, 8};
  for (ApplyPhase ap : {ApplyPhase::TestOnly, ApplyPhase::TrainAndTest}) {
    Rng rng(0);
    const BiForward out = bilstm_forward(p, seq, round_clip_mode(ap), Phase::Test, rng);
    for (const ForwardCache* fc : {&out.fwd, &out.bwd}) {
      for (const StepCache& s : fc->steps) {
        for (const GateCache* g : {&s.i, &s.f}) {
          EXPECT_TRUE(g->quantized);
          for (double v : g->value) EXPECT_TRUE(v == 0.0 || v == 0.5 || v == 1.0) << v;
        }
        EXPECT_FALSE(s.o.quantized);
      }
    }
  }
}

TEST(GateModes, TestOnlyLeavesTrainPassUntouched) {
  const LstmParams p = init_params(Dims{10, 4, 6, 2}, 8);
  const std::vector<int> seq{4, 4, 1, 7};
  Rng r1(0), r2(0);
  EXPECT_EQ(bilstm_forward(p, seq, round_clip_mode(ApplyPhase::TestOnly), Phase::Train, r1).outputs,
            bilstm_forward(p, seq, GateMode{}, Phase::Train, r2).outputs);
}

TEST(GateModes, DeterministicUnderFixedSeed) {
  const LstmParams p = init_params(Dims{10, 4, 6, 2}, 8);
  const std::vector<int> seq{4, 4, 1, 7, 9};
  GateMode m;
  m.input.gumbel = m.forget.gumbel = true;
  m.gumbel.epsilon = 0.5;
  Rng r1(77), r2(77);
  EXPECT_EQ(bilstm_forward(p, seq, m, Phase::Train, r1).outputs,
            bilstm_forward(p, seq, m, Phase::Train, r2).outputs);
}

TEST(GateModes, OutputTransformIsolatedFromInputAndForget) {
  const LstmParams p = init_params(Dims{10, 4, 6, 2}, 8);
  const std::vector<int> seq{4, 4, 1, 7, 9};
  GateMode with = round_clip_mode(ApplyPhase::TrainAndTest);
  with.output.round_clip = true;
  with.allow_output_transform = true;
  const GateMode without = round_clip_mode(ApplyPhase::TrainAndTest);
  Rng r1(0), r2(0);
  const BiForward a = bilstm_forward(p, seq, with, Phase::Test, r1);
  const BiForward b = bilstm_forward(p, seq, without, Phase::Test, r2);
  // First step: identical inputs to the i/f transforms, so identical results.
  EXPECT_EQ(a.fwd.steps[0].i.value, b.fwd.steps[0].i.value);
  EXPECT_EQ(a.fwd.steps[0].f.value, b.fwd.steps[0].f.value);
  EXPECT_TRUE(a.fwd.steps[0].o.quantized);
  EXPECT_FALSE(b.fwd.steps[0].o.quantized);
  for (const StepCache& s : a.fwd.steps) {
    EXPECT_TRUE(s.i.quantized);
    EXPECT_TRUE(s.f.quantized);
  }
}

TEST(GateModes, OutputTransformNeedsExplicitFlag) {
  GateMode m;
  m.output.gumbel = true;
  EXPECT_THROW(m.validate(), std::invalid_argument);
  m.allow_output_transform = true;
  EXPECT_NO_THROW(m.validate());
}

TEST(GateModes, GumbelOffAtTestTime) {
  const LstmParams p = init_params(Dims{10, 4, 6, 2}, 8);
  const std::vector<int> seq{4, 4, 1};
  GateMode m;
  m.input.gumbel = m.forget.gumbel = true;
  Rng r1(1), r2(2);
  EXPECT_EQ(bilstm_forward(p, seq, m, Phase::Test, r1).outputs,
            bilstm_forward(p, seq, GateMode{}, Phase::Test, r2).outputs);
}

}  // namespace
}  // namespace qlstm
