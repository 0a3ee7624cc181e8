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

#ifndef QLSTM_MODEL_HPP_
#define QLSTM_MODEL_HPP_

// Bi-LSTM tagger: embedding -> forward/backward LSTM -> tag head.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "qlstm/backprop.hpp"
#include "qlstm/crf_head.hpp"
#include "qlstm/lstm_net.hpp"
#include "qlstm/num_core.hpp"
#include "qlstm/quantize.hpp"
#include "qlstm/random.hpp"

namespace qlstm {

enum class HeadKind { Crf, Softmax };

inline const char* head_name(HeadKind h) { return h == HeadKind::Crf ? "crf" : "softmax"; }

inline HeadKind parse_head(const std::string& s) {
  if (s == "crf") return HeadKind::Crf;
  if (s == "softmax") return HeadKind::Softmax;
  throw std::invalid_argument("unknown head '" + s + "' (expected crf or softmax)");
}

struct Model {
  Dims dims;
  LstmParams lstm;
  CrfParams head;

  friend bool operator==(const Model&, const Model&) = default;
};

template <class T>
struct TensorView {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::span<T> data;
};

namespace detail {

template <class M, class F>
void visit_model(M& m, F&& f) {
  f(std::string("embedding"), m.lstm.embedding);
  visit_cell(m.lstm.fwd, "fwd.", f);
  visit_cell(m.lstm.bwd, "bwd.", f);
  visit_head(m.head, "head.", f);
}

template <class T, class M>
std::vector<TensorView<T>> collect(M& m) {
  std::vector<TensorView<T>> out;
  visit_model(m, [&](const std::string& name, auto& t) {
    using U = std::remove_cvref_t<decltype(t)>;
    if constexpr (std::is_same_v<U, Mat>) {
      out.push_back({name, t.rows, t.cols, std::span<T>(t.data)});
    } else {
      out.push_back({name, 1, t.size(), std::span<T>(t)});
    }
  });
  return out;
}

}  // namespace detail

/// Every trainable tensor in a fixed order; vectors appear as 1 x n.
inline std::vector<TensorView<double>> tensors(Model& m) { return detail::collect<double>(m); }
inline std::vector<TensorView<const double>> tensors(const Model& m) { return detail::collect<const double>(m); }

inline Model init_model(const Dims& d, std::uint64_t seed, bool peepholes = true) {
  Model m;
  m.dims = d;
  m.lstm = init_params(d, seed, peepholes);
  m.head = init_head(d.tags, d.hidden, seed);
  return m;
}

inline Model zeros_like(const Model& m) {
  Model z = m;
  for (auto& t : tensors(z)) std::fill(t.data.begin(), t.data.end(), 0.0);
  return z;
}

inline void add_into(Model& acc, const Model& x, double scale = 1.0) {
  auto a = tensors(acc);
  auto b = tensors(x);
  for (std::size_t i = 0; i < a.size(); ++i) {
    require_len(a[i].data.size(), b[i].data.size(), "add_into");
    for (std::size_t k = 0; k < a[i].data.size(); ++k) a[i].data[k] += scale * b[i].data[k];
  }
}

inline void scale_by(Model& m, double s) {
  for (auto& t : tensors(m))
    for (double& x : t.data) x *= s;
}

inline double global_norm(const Model& m) {
  double s = 0.0;
  for (const auto& t : tensors(m)) s += squared_norm(t.data);
  return std::sqrt(s);
}

inline bool all_finite(const Model& m) {
  for (const auto& t : tensors(m))
    if (!all_finite(t.data)) return false;
  return true;
}

/// Binarizes every U, W and V tensor (including diagonal peepholes) to
/// alpha * sign per tensor. Embedding, biases and the head stay as-is.
inline void binarize_weights(Model& m) {
  for (CellParams* c : {&m.lstm.fwd, &m.lstm.bwd}) {
    for (Mat* w : {&c->U_i, &c->U_f, &c->U_c, &c->U_o, &c->W_i, &c->W_f, &c->W_c, &c->W_o, &c->V_c}) {
      binarize_in_place(w->data);
    }
    if (m.lstm.peepholes) {
      for (Vec* v : {&c->v_i, &c->v_f, &c->v_o}) binarize_in_place(*v);
    }
  }
}

/// Names of the tensors binarize_weights touches.
inline bool is_binarized_tensor(const std::string& name, bool peepholes) {
  const auto dot = name.find('.');
  if (dot == std::string::npos) return false;
  const std::string dir = name.substr(0, dot);
  const std::string leaf = name.substr(dot + 1);
  if (dir != "fwd" && dir != "bwd") return false;
  if (leaf[0] == 'U' || leaf[0] == 'W' || leaf == "V_c") return true;
  return peepholes && leaf[0] == 'v';
}

/// Running sums behind one DecompReport; one slot per direction.
struct DecompAccumulator {
  std::array<Mat, 2> term1_i, term2_i, term1_f, term2_f;
  double abs_delta_i = 0.0;
  double abs_delta_f = 0.0;
  std::size_t count_i = 0;
  std::size_t count_f = 0;

  void add(std::size_t dir, const GateGradientSplit& s) {
    const std::size_t n = s.term1.rows;
    const bool input = s.gate == Gate::Input;
    Mat& t1 = input ? term1_i[dir] : term1_f[dir];
    Mat& t2 = input ? term2_i[dir] : term2_f[dir];
    if (t1.size() == 0) {
      t1 = Mat(n, n);
      t2 = Mat(n, n);
    }
    axpy(1.0, s.term1.data, t1.data);
    axpy(1.0, s.term2.data, t2.data);
  }

  void merge(const DecompAccumulator& o) {
    for (std::size_t d = 0; d < 2; ++d) {
      merge_mat(term1_i[d], o.term1_i[d]);
      merge_mat(term2_i[d], o.term2_i[d]);
      merge_mat(term1_f[d], o.term1_f[d]);
      merge_mat(term2_f[d], o.term2_f[d]);
    }
    abs_delta_i += o.abs_delta_i;
    abs_delta_f += o.abs_delta_f;
    count_i += o.count_i;
    count_f += o.count_f;
  }

  static double norm2(const std::array<Mat, 2>& m) {
    return std::sqrt(squared_norm(m[0].data) + squared_norm(m[1].data));
  }

  GateDecompStats stats(Gate g) const {
    GateDecompStats s;
    if (g == Gate::Input) {
      s.term1_norm = norm2(term1_i);
      s.term2_norm = norm2(term2_i);
      s.mean_abs_delta_f = count_i ? abs_delta_i / static_cast<double>(count_i) : 0.0;
    } else {
      s.term1_norm = norm2(term1_f);
      s.term2_norm = norm2(term2_f);
      s.mean_abs_delta_f = count_f ? abs_delta_f / static_cast<double>(count_f) : 0.0;
    }
    return s;
  }

 private:
  static void merge_mat(Mat& a, const Mat& b) {
    if (b.size() == 0) return;
    if (a.size() == 0) {
      a = b;
      return;
    }
    axpy(1.0, b.data, a.data);
  }
};

/// Gradients of one sentence. The embedding gradient is kept sparse (one
/// row per position, duplicates allowed); `grads.lstm.embedding` is empty.
struct SentenceResult {
  double loss = 0.0;
  Model grads;
  std::vector<std::pair<int, Vec>> emb_rows;
  bool has_grads = false;
};

/// Zero gradient holder without an embedding table.
inline Model zeros_without_embedding(const Model& m) {
  Model z;
  z.dims = m.dims;
  z.lstm.peepholes = m.lstm.peepholes;
  z.lstm.fwd = m.lstm.fwd;
  z.lstm.bwd = m.lstm.bwd;
  z.head = m.head;
  z.lstm.embedding = Mat(0, m.lstm.embedding.cols);
  for (auto& t : tensors(z)) std::fill(t.data.begin(), t.data.end(), 0.0);
  return z;
}

/// acc += scale * r, densifying the sparse embedding rows.
inline void accumulate(Model& acc, const SentenceResult& r, double scale = 1.0) {
  auto a = tensors(acc);
  const auto b = tensors(r.grads);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name == "embedding") continue;
    require_len(a[i].data.size(), b[i].data.size(), "accumulate");
    for (std::size_t k = 0; k < a[i].data.size(); ++k) a[i].data[k] += scale * b[i].data[k];
  }
  for (const auto& [id, row] : r.emb_rows) axpy(scale, row, acc.lstm.embedding.row(static_cast<std::size_t>(id)));
}

/// Loss of one sentence and, when `want_grads`, its gradient w.r.t. every
/// model tensor. Gradient-split diagnostics for Round & Clip gates active in
/// this pass are added to `decomp` when given.
inline SentenceResult sentence_loss(const Model& m, std::span<const int> tokens, const std::vector<int>& tags,
                                    const GateMode& mode, Phase phase, SteRule ste, HeadKind head, Rng& rng,
                                    bool want_grads, DecompAccumulator* decomp = nullptr) {
  const BiForward fw = bilstm_forward(m.lstm, tokens, mode, phase, rng);
  const Emissions e = project(m.head, fw.outputs);
  SentenceResult r;
  Emissions d_e;
  CrfNll crf;
  if (head == HeadKind::Crf) {
    crf = crf_nll(e, tags, m.head);
    r.loss = crf.loss;
    d_e = std::move(crf.d_emissions);
  } else {
    SoftmaxNll sm = softmax_nll(e, tags);
    r.loss = sm.loss;
    d_e = std::move(sm.d_logits);
  }
  if (!want_grads) return r;

  r.grads = zeros_without_embedding(m);
  r.has_grads = true;
  Model& g = r.grads;
  const std::size_t n = tokens.size();
  const std::size_t h = m.dims.hidden;
  std::vector<Vec> dh_f(n, Vec(h, 0.0));
  std::vector<Vec> dh_b(n, Vec(h, 0.0));
  Vec dfeat(2 * h);
  for (std::size_t t = 0; t < n; ++t) {
    outer_acc(d_e[t], fw.outputs[t], g.head.emit);
    axpy(1.0, d_e[t], g.head.emit_bias);
    std::fill(dfeat.begin(), dfeat.end(), 0.0);
    gemv_t_acc(m.head.emit, d_e[t], dfeat);
    std::copy(dfeat.begin(), dfeat.begin() + static_cast<std::ptrdiff_t>(h), dh_f[t].begin());
    std::copy(dfeat.begin() + static_cast<std::ptrdiff_t>(h), dfeat.end(), dh_b[n - 1 - t].begin());
  }
  if (head == HeadKind::Crf) {
    g.head.trans = crf.d_trans;
    g.head.start = crf.d_start;
    g.head.stop = crf.d_stop;
  }

  const BackwardCache bf = lstm_backward(fw.fwd, m.lstm.fwd, dh_f, ste);
  const BackwardCache bb = lstm_backward(fw.bwd, m.lstm.bwd, dh_b, ste);
  g.lstm.fwd = bf.grads;
  g.lstm.bwd = bb.grads;
  if (!m.lstm.peepholes) {
    for (CellParams* c : {&g.lstm.fwd, &g.lstm.bwd}) {
      std::fill(c->v_i.begin(), c->v_i.end(), 0.0);
      std::fill(c->v_f.begin(), c->v_f.end(), 0.0);
      std::fill(c->v_o.begin(), c->v_o.end(), 0.0);
    }
  }
  r.emb_rows.reserve(n);
  for (std::size_t t = 0; t < n; ++t) {
    Vec row = bf.dx[t];
    axpy(1.0, bb.dx[n - 1 - t], row);
    r.emb_rows.emplace_back(tokens[t], std::move(row));
  }

  if (decomp != nullptr) {
    const std::array<const ForwardCache*, 2> fcs{&fw.fwd, &fw.bwd};
    const std::array<const BackwardCache*, 2> bcs{&bf, &bb};
    for (std::size_t d = 0; d < 2; ++d) {
      for (Gate gate : {Gate::Input, Gate::Forget}) {
        if (!mode.quant_active(gate, phase)) continue;
        GateGradientSplit s = decompose_gate_gradient(*fcs[d], *bcs[d], gate);
        decomp->add(d, s);
        const double abs_sum = s.mean_abs_delta * static_cast<double>(n * h);
        if (gate == Gate::Input) {
          decomp->abs_delta_i += abs_sum;
          decomp->count_i += n * h;
        } else {
          decomp->abs_delta_f += abs_sum;
          decomp->count_f += n * h;
        }
      }
    }
  }
  return r;
}

/// Test-phase decode. Gumbel noise is never applied at test time, so no
/// randomness is consumed.
inline std::vector<int> predict(const Model& m, std::span<const int> tokens, const GateMode& mode, HeadKind head,
                                BiForward* keep = nullptr) {
  Rng unused(0);
  BiForward fw = bilstm_forward(m.lstm, tokens, mode, Phase::Test, unused);
  const Emissions e = project(m.head, fw.outputs);
  std::vector<int> out = head == HeadKind::Crf ? viterbi_decode(e, m.head) : argmax_decode(e);
  if (keep != nullptr) *keep = std::move(fw);
  return out;
}

}  // namespace qlstm

#endif  // QLSTM_MODEL_HPP_
