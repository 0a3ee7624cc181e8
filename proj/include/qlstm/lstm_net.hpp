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

#ifndef QLSTM_LSTM_NET_HPP_
#define QLSTM_LSTM_NET_HPP_

// Peephole LSTM cell and bidirectional driver.
//
//   i = T_i(U_i x + W_i h' + v_i . C' + b_i)
//   f = T_f(U_f x + W_f h' + v_f . C' + b_f)
//   C = f . C' + i . tanh(U_C x + W_C h' + b_C)
//   o = T_o(U_o x + W_o h' + v_o . C + b_o)
//   h = o . tanh(V_C C)
//
// where primes denote the previous step, v_* are diagonal peepholes and T_*
// is the per-gate transform selected by GateMode (plain sigmoid, Gumbel
// sigmoid, either followed by Round & Clip).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "qlstm/num_core.hpp"
#include "qlstm/quantize.hpp"
#include "qlstm/random.hpp"

namespace qlstm {

enum class Gate { Input, Forget, Output };

inline const char* gate_name(Gate g) {
  switch (g) {
    case Gate::Input: return "input";
    case Gate::Forget: return "forget";
    case Gate::Output: return "output";
  }
  return "?";
}

/// Which side of the train/test split a forward pass belongs to.
enum class Phase { Train, Test };

/// When Round & Clip gates are active: TestOnly is post-training
/// quantization; TrainAndTest quantizes inside every training iteration.
enum class ApplyPhase { TrainAndTest, TestOnly };

struct GateTransform {
  bool gumbel = false;
  bool round_clip = false;

  bool is_identity() const { return !gumbel && !round_clip; }
  friend bool operator==(const GateTransform&, const GateTransform&) = default;
};

struct GateMode {
  GateTransform input;
  GateTransform forget;
  GateTransform output;
  ApplyPhase apply_phase = ApplyPhase::TestOnly;
  GumbelCfg gumbel;
  RoundClipScheme scheme;
  /// Required for any output-gate transform.
  bool allow_output_transform = false;

  const GateTransform& gate(Gate g) const {
    switch (g) {
      case Gate::Input: return input;
      case Gate::Forget: return forget;
      default: return output;
    }
  }

  bool gumbel_active(Gate g, Phase phase) const { return phase == Phase::Train && gate(g).gumbel; }

  bool quant_active(Gate g, Phase phase) const {
    return gate(g).round_clip && (phase == Phase::Test || apply_phase == ApplyPhase::TrainAndTest);
  }

  bool is_identity() const { return input.is_identity() && forget.is_identity() && output.is_identity(); }

  void validate() const {
    if (!output.is_identity() && !allow_output_transform) {
      throw std::invalid_argument("GateMode: output-gate transform requires allow_output_transform");
    }
    gumbel.validate();
  }
};

struct Dims {
  std::size_t vocab = 0;
  std::size_t emb_dim = 0;
  std::size_t hidden = 0;
  std::size_t tags = 0;

  friend bool operator==(const Dims&, const Dims&) = default;
};

/// Weights of one LSTM direction.
struct CellParams {
  Mat U_i, U_f, U_c, U_o;  // hidden x emb
  Mat W_i, W_f, W_c, W_o;  // hidden x hidden
  Vec v_i, v_f, v_o;       // diagonal peepholes
  Mat V_c;                 // hidden x hidden, inside the output tanh
  Vec b_i, b_f, b_c, b_o;

  std::size_t hidden() const { return b_i.size(); }
  std::size_t input_dim() const { return U_i.cols; }

  friend bool operator==(const CellParams&, const CellParams&) = default;
};

/// Applies f(name, Mat&|Vec&) to every tensor, in declaration order.
template <class Cell, class F>
  requires std::is_same_v<std::remove_const_t<Cell>, CellParams>
void visit_cell(Cell& p, const std::string& prefix, F&& f) {
  f(prefix + "U_i", p.U_i);
  f(prefix + "U_f", p.U_f);
  f(prefix + "U_c", p.U_c);
  f(prefix + "U_o", p.U_o);
  f(prefix + "W_i", p.W_i);
  f(prefix + "W_f", p.W_f);
  f(prefix + "W_c", p.W_c);
  f(prefix + "W_o", p.W_o);
  f(prefix + "v_i", p.v_i);
  f(prefix + "v_f", p.v_f);
  f(prefix + "v_o", p.v_o);
  f(prefix + "V_c", p.V_c);
  f(prefix + "b_i", p.b_i);
  f(prefix + "b_f", p.b_f);
  f(prefix + "b_c", p.b_c);
  f(prefix + "b_o", p.b_o);
}

struct LstmParams {
  Mat embedding;  // vocab x emb
  CellParams fwd;
  CellParams bwd;
  bool peepholes = true;

  friend bool operator==(const LstmParams&, const LstmParams&) = default;
};

inline CellParams zero_cell(std::size_t hidden, std::size_t input_dim) {
  CellParams p;
  for (Mat* m : {&p.U_i, &p.U_f, &p.U_c, &p.U_o}) *m = Mat(hidden, input_dim);
  for (Mat* m : {&p.W_i, &p.W_f, &p.W_c, &p.W_o, &p.V_c}) *m = Mat(hidden, hidden);
  for (Vec* v : {&p.v_i, &p.v_f, &p.v_o, &p.b_i, &p.b_f, &p.b_c, &p.b_o}) *v = Vec(hidden, 0.0);
  return p;
}

inline CellParams init_cell(std::size_t hidden, std::size_t input_dim, Rng& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(hidden));
  CellParams p = zero_cell(hidden, input_dim);
  auto fill = [&](std::span<double> xs) {
    for (double& x : xs) x = rng.uniform(-s, s);
  };
  for (Mat* m : {&p.U_i, &p.U_f, &p.U_c, &p.U_o, &p.W_i, &p.W_f, &p.W_c, &p.W_o}) fill(m->data);
  fill(p.v_i);
  fill(p.v_f);
  fill(p.v_o);
  p.V_c = Mat::identity(hidden);
  std::fill(p.b_f.begin(), p.b_f.end(), 1.0);
  return p;
}

inline void check_dims(const Dims& d) {
  if (d.vocab == 0 || d.emb_dim == 0 || d.hidden == 0 || d.tags == 0) {
    throw std::invalid_argument("init_params: all dims must be >= 1 (vocab=" + std::to_string(d.vocab) +
                                " emb=" + std::to_string(d.emb_dim) + " hidden=" + std::to_string(d.hidden) +
                                " tags=" + std::to_string(d.tags) + ")");
  }
}

/// Uniform(-1/sqrt(hidden), 1/sqrt(hidden)) weights, b_f = 1, V_c = I,
/// other biases zero.
inline LstmParams init_params(const Dims& d, std::uint64_t seed, bool peepholes = true) {
  check_dims(d);
  Rng rng = Rng::derive(seed, {0x15a});
  LstmParams p;
  const double s = 1.0 / std::sqrt(static_cast<double>(d.hidden));
  p.embedding = Mat(d.vocab, d.emb_dim);
  for (double& x : p.embedding.data) x = rng.uniform(-s, s);
  p.fwd = init_cell(d.hidden, d.emb_dim, rng);
  p.bwd = init_cell(d.hidden, d.emb_dim, rng);
  p.peepholes = peepholes;
  if (!peepholes) {
    for (CellParams* c : {&p.fwd, &p.bwd}) {
      std::fill(c->v_i.begin(), c->v_i.end(), 0.0);
      std::fill(c->v_f.begin(), c->v_f.end(), 0.0);
      std::fill(c->v_o.begin(), c->v_o.end(), 0.0);
    }
  }
  return p;
}

/// One gate's values at one timestep.
struct GateCache {
  Vec alpha;  // pre-activation
  Vec raw;    // sigmoid(alpha)
  Vec soft;   // after Gumbel noise when active, else == raw
  Vec value;  // what the cell consumes (Round & Clip of soft when active)
  bool gumbel = false;
  bool quantized = false;
  QuantDecomp decomp;  // filled when quantized
};

struct StepCache {
  int token = -1;
  Vec x;       // embedded input
  Vec h_prev;
  Vec c_prev;
  GateCache i, f, o;
  Vec g;       // tanh(U_c x + W_c h' + b_c)
  Vec c;
  Vec m;       // tanh(V_c c)
  Vec h;

  const GateCache& gate(Gate which) const {
    switch (which) {
      case Gate::Input: return i;
      case Gate::Forget: return f;
      default: return o;
    }
  }
};

struct ForwardCache {
  std::vector<StepCache> steps;
  Phase phase = Phase::Train;
  double epsilon = 1.0;
  RoundClipScheme scheme;
  bool peepholes = true;
};

namespace detail {

inline void finish_gate(GateCache& gc, Gate which, const GateMode& mode, Phase phase, Rng& rng) {
  gc.raw = sigmoid(gc.alpha);
  gc.gumbel = mode.gumbel_active(which, phase);
  gc.soft = gc.gumbel ? gumbel_gate(gc.alpha, mode.gumbel, rng) : gc.raw;
  gc.quantized = mode.quant_active(which, phase);
  if (gc.quantized) {
    gc.decomp = quant_decompose(gc.soft, mode.scheme);
    gc.value = gc.decomp.f_bar;
  } else {
    gc.value = gc.soft;
  }
}

inline void check_cell_shapes(const CellParams& p, std::size_t x_len, std::size_t h_len, std::size_t c_len) {
  const std::size_t h = p.hidden();
  if (p.U_i.cols != x_len || h_len != h || c_len != h || p.W_i.rows != h || p.W_i.cols != h) {
    throw ShapeError("lstm_cell_forward: params hidden=" + std::to_string(h) + " input=" +
                     std::to_string(p.U_i.cols) + " but x=" + std::to_string(x_len) + " h=" + std::to_string(h_len) +
                     " c=" + std::to_string(c_len));
  }
}

}  // namespace detail

/// One step. The returned cache holds h and c for the next step.
inline StepCache lstm_cell_forward(const CellParams& p, std::span<const double> x, std::span<const double> h_prev,
                                   std::span<const double> c_prev, const GateMode& mode, Phase phase, Rng& rng,
                                   bool peepholes = true) {
  detail::check_cell_shapes(p, x.size(), h_prev.size(), c_prev.size());
  const std::size_t n = p.hidden();
  StepCache s;
  s.x.assign(x.begin(), x.end());
  s.h_prev.assign(h_prev.begin(), h_prev.end());
  s.c_prev.assign(c_prev.begin(), c_prev.end());

  s.i.alpha = affine(p.U_i, x, p.b_i);
  gemv_acc(p.W_i, h_prev, s.i.alpha);
  s.f.alpha = affine(p.U_f, x, p.b_f);
  gemv_acc(p.W_f, h_prev, s.f.alpha);
  if (peepholes) {
    for (std::size_t k = 0; k < n; ++k) {
      s.i.alpha[k] += p.v_i[k] * c_prev[k];
      s.f.alpha[k] += p.v_f[k] * c_prev[k];
    }
  }
  detail::finish_gate(s.i, Gate::Input, mode, phase, rng);
  detail::finish_gate(s.f, Gate::Forget, mode, phase, rng);

  Vec a_c = affine(p.U_c, x, p.b_c);
  gemv_acc(p.W_c, h_prev, a_c);
  s.g = tanh(a_c);

  s.c.resize(n);
  for (std::size_t k = 0; k < n; ++k) s.c[k] = s.f.value[k] * c_prev[k] + s.i.value[k] * s.g[k];

  s.o.alpha = affine(p.U_o, x, p.b_o);
  gemv_acc(p.W_o, h_prev, s.o.alpha);
  if (peepholes) {
    for (std::size_t k = 0; k < n; ++k) s.o.alpha[k] += p.v_o[k] * s.c[k];
  }
  detail::finish_gate(s.o, Gate::Output, mode, phase, rng);

  Vec z(n, 0.0);
  gemv_acc(p.V_c, s.c, z);
  s.m = tanh(z);
  s.h = hadamard(s.o.value, s.m);
  return s;
}

/// Runs one direction over already-embedded inputs, starting from zero state.
inline ForwardCache lstm_forward(const CellParams& p, const std::vector<Vec>& xs, const std::vector<int>& tokens,
                                 const GateMode& mode, Phase phase, Rng& rng, bool peepholes = true) {
  ForwardCache cache;
  cache.phase = phase;
  cache.epsilon = mode.gumbel.epsilon;
  cache.scheme = mode.scheme;
  cache.peepholes = peepholes;
  cache.steps.reserve(xs.size());
  Vec h(p.hidden(), 0.0);
  Vec c(p.hidden(), 0.0);
  for (std::size_t t = 0; t < xs.size(); ++t) {
    StepCache s = lstm_cell_forward(p, xs[t], h, c, mode, phase, rng, peepholes);
    s.token = t < tokens.size() ? tokens[t] : -1;
    h = s.h;
    c = s.c;
    cache.steps.push_back(std::move(s));
  }
  return cache;
}

struct BiForward {
  std::vector<Vec> outputs;  // [h_fwd(t); h_bwd(t)], length 2*hidden
  ForwardCache fwd;
  ForwardCache bwd;          // step k corresponds to position n - 1 - k
};

inline std::vector<Vec> embed(const Mat& embedding, std::span<const int> seq) {
  std::vector<Vec> xs;
  xs.reserve(seq.size());
  for (int tok : seq) {
    if (tok < 0 || static_cast<std::size_t>(tok) >= embedding.rows) {
      throw std::out_of_range("embed: token id " + std::to_string(tok) + " outside vocab of " +
                              std::to_string(embedding.rows));
    }
    auto r = embedding.row(static_cast<std::size_t>(tok));
    xs.emplace_back(r.begin(), r.end());
  }
  return xs;
}

inline BiForward bilstm_forward(const Mat& embedding, const CellParams& p_fwd, const CellParams& p_bwd,
                                std::span<const int> seq, const GateMode& mode, Phase phase, Rng& rng,
                                bool peepholes = true) {
  if (seq.empty()) throw std::invalid_argument("bilstm_forward: empty sequence");
  const std::vector<Vec> xs = embed(embedding, seq);
  const std::vector<int> tokens(seq.begin(), seq.end());
  BiForward out;
  out.fwd = lstm_forward(p_fwd, xs, tokens, mode, phase, rng, peepholes);
  const std::vector<Vec> xs_rev(xs.rbegin(), xs.rend());
  const std::vector<int> tokens_rev(tokens.rbegin(), tokens.rend());
  out.bwd = lstm_forward(p_bwd, xs_rev, tokens_rev, mode, phase, rng, peepholes);

  const std::size_t n = seq.size();
  out.outputs.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    Vec& o = out.outputs[t];
    const Vec& hf = out.fwd.steps[t].h;
    const Vec& hb = out.bwd.steps[n - 1 - t].h;
    o.reserve(hf.size() + hb.size());
    o.insert(o.end(), hf.begin(), hf.end());
    o.insert(o.end(), hb.begin(), hb.end());
  }
  return out;
}

inline BiForward bilstm_forward(const LstmParams& p, std::span<const int> seq, const GateMode& mode, Phase phase,
                                Rng& rng) {
  return bilstm_forward(p.embedding, p.fwd, p.bwd, seq, mode, phase, rng, p.peepholes);
}

}  // namespace qlstm

#endif  // QLSTM_LSTM_NET_HPP_
