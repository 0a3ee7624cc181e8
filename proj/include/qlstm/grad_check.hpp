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

#ifndef QLSTM_GRAD_CHECK_HPP_
#define QLSTM_GRAD_CHECK_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "qlstm/data_io.hpp"
#include "qlstm/model.hpp"

namespace qlstm {

/// Central (L+ - L-)/(2 eps), or its Richardson extrapolation from steps
/// eps and eps/2, which cancels the O(eps^2) term and tolerates a larger
/// step (less cancellation error on tiny gradients).
enum class FdStencil { Central, Richardson };

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

/// Mean loss over `batch` (the training reduction).
inline double batch_loss(const Model& m, const std::vector<LabeledSequence>& batch, const GateMode& mode,
                         HeadKind head) {
  double total = 0.0;
  for (const LabeledSequence& s : batch) {
    Rng rng(0);
    total += sentence_loss(m, s.tokens, s.tags, mode, Phase::Train, SteRule::FullPrecision, head, rng, false).loss;
  }
  return total / static_cast<double>(batch.size());
}

/// Compares analytic gradients with central differences on every
/// parameter. Quantizers are not differentiable, so only the
/// full-precision gate mode is accepted. `tamper` may modify the analytic
/// gradient before comparison (mutation testing).
inline GradCheckResult finite_diff_check(const Model& model, const std::vector<LabeledSequence>& batch,
                                         const GateMode& mode, double eps, HeadKind head = HeadKind::Crf,
                                         const std::function<void(Model&)>& tamper = {},
                                         FdStencil stencil = FdStencil::Central) {
  if (!mode.is_identity()) {
    throw std::invalid_argument("finite_diff_check: gate mode must be full precision (no Gumbel or Round & Clip)");
  }
  if (batch.empty()) throw std::invalid_argument("finite_diff_check: empty batch");

  Model analytic = zeros_like(model);
  for (const LabeledSequence& s : batch) {
    Rng rng(0);
    SentenceResult r = sentence_loss(model, s.tokens, s.tags, mode, Phase::Train, SteRule::FullPrecision, head, rng,
                                     true);
    accumulate(analytic, r);
  }
  scale_by(analytic, 1.0 / static_cast<double>(batch.size()));
  if (tamper) tamper(analytic);

  Model probe = model;
  auto params = tensors(probe);
  const auto grads = tensors(std::as_const(analytic));
  GradCheckResult out;
  for (std::size_t ti = 0; ti < params.size(); ++ti) {
    // Peephole vectors are inert when disabled.
    if (!model.lstm.peepholes && params[ti].name.find(".v_") != std::string::npos) continue;
    for (std::size_t k = 0; k < params[ti].data.size(); ++k) {
      const double saved = params[ti].data[k];
      auto central = [&](double h) {
        params[ti].data[k] = saved + h;
        const double lp = batch_loss(probe, batch, mode, head);
        params[ti].data[k] = saved - h;
        const double lm = batch_loss(probe, batch, mode, head);
        params[ti].data[k] = saved;
        return (lp - lm) / (2.0 * h);
      };
      const double numeric =
          stencil == FdStencil::Central ? central(eps) : (4.0 * central(eps / 2.0) - central(eps)) / 3.0;
      const double a = grads[ti].data[k];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      ++out.checked;
      if (rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst_tensor = params[ti].name;
        out.worst_index = k;
        out.worst_analytic = a;
        out.worst_numeric = numeric;
      }
    }
  }
  return out;
}

/// Random tagged sentences, lengths uniform in [1, max_len].
inline std::vector<LabeledSequence> random_batch(std::size_t vocab, std::size_t tags, std::size_t max_len, Rng& rng,
                                                 std::size_t count) {
  std::vector<LabeledSequence> batch;
  for (std::size_t i = 0; i < count; ++i) {
    LabeledSequence s;
    const std::size_t n = 1 + rng.below(max_len);
    for (std::size_t t = 0; t < n; ++t) {
      s.tokens.push_back(static_cast<int>(rng.below(vocab)));
      s.tags.push_back(static_cast<int>(rng.below(tags)));
    }
    batch.push_back(std::move(s));
  }
  return batch;
}

struct GradCheckSuite {
  Dims dims{5, 3, 4, 3};
  std::size_t max_len = 6;
  std::size_t batch = 2;
  std::size_t seeds = 20;
  std::uint64_t first_seed = 1;
  double eps = 1e-2;
  FdStencil stencil = FdStencil::Richardson;
  HeadKind head = HeadKind::Crf;
  bool peepholes = true;
};

/// One full-precision check per seed. Head transitions and biases start at
/// zero after init, so they are randomized to give every parameter a
/// nonzero gradient.
inline std::vector<GradCheckResult> run_grad_check_suite(const GradCheckSuite& s) {
  std::vector<GradCheckResult> out;
  for (std::uint64_t seed = s.first_seed; seed < s.first_seed + s.seeds; ++seed) {
    Rng rng = Rng::derive(seed, {0x9c});
    Model m = init_model(s.dims, seed, s.peepholes);
    for (auto& t : tensors(m)) {
      if (t.name == "head.trans" || t.name == "head.start" || t.name == "head.stop" || t.name == "head.emit_bias")
        for (double& v : t.data) v = rng.uniform(-0.5, 0.5);
    }
    const auto batch = random_batch(s.dims.vocab, s.dims.tags, s.max_len, rng, s.batch);
    out.push_back(finite_diff_check(m, batch, GateMode{}, s.eps, s.head, {}, s.stencil));
  }
  return out;
}

}  // namespace qlstm

#endif  // QLSTM_GRAD_CHECK_HPP_
