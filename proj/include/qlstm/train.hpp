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

// Training loop with early stopping on dev score, evaluated through the
// test-phase graph so B/NEW runs are selected for quantized performance.

#ifndef QLSTM_TRAIN_HPP_
#define QLSTM_TRAIN_HPP_

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "qlstm/data_io.hpp"
#include "qlstm/metrics.hpp"
#include "qlstm/model.hpp"
#include "qlstm/optimizer.hpp"
#include "qlstm/settings.hpp"

namespace qlstm {

enum class Metric { Chunk, Accuracy };

inline const char* metric_name(Metric m) { return m == Metric::Chunk ? "chunk" : "accuracy"; }

inline Metric parse_metric(const std::string& s) {
  if (s == "chunk" || s == "f1") return Metric::Chunk;
  if (s == "accuracy" || s == "pos") return Metric::Accuracy;
  throw std::invalid_argument("metric must be 'chunk' or 'accuracy', got '" + s + "'");
}

inline const char* ste_name(SteRule s) { return s == SteRule::FullPrecision ? "full" : "quantized"; }

inline SteRule parse_ste(const std::string& s) {
  if (s == "full" || s == "identity") return SteRule::FullPrecision;
  if (s == "quantized") return SteRule::QuantizedDerivative;
  throw std::invalid_argument("ste must be 'full' or 'quantized', got '" + s + "'");
}

struct TrainConfig {
  std::string settings;
  RoundClipScheme scheme{0.5, 1.0};
  double gumbel_eps = 1.0;
  SteRule ste = SteRule::FullPrecision;
  OptimizerCfg opt;
  int max_epochs = 25;
  int patience = 5;
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;
  HeadKind head = HeadKind::Crf;
  Metric metric = Metric::Chunk;
  std::size_t emb_dim = 16;
  std::size_t hidden = 16;
  bool peepholes = true;
  std::string embeddings;  // optional text file; rows for unlisted tokens keep their random init
  std::size_t threads = 1;

  RunSettings run_settings() const { return parse_settings(settings, scheme, GumbelCfg{gumbel_eps, seed}); }

  void validate() const {
    run_settings();
    opt.validate();
    if (max_epochs < 0) throw std::invalid_argument("max_epochs must be >= 0");
    if (patience < 1) throw std::invalid_argument("patience must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (emb_dim < 1 || hidden < 1) throw std::invalid_argument("emb_dim and hidden must be >= 1");
    if (threads < 1) throw std::invalid_argument("threads must be >= 1");
  }
};

struct EvalResult {
  Prf prf;
  double accuracy = 0.0;
  // Mean |f - RoundClip(f)| of the raw input/forget gates under the run's scheme.
  double mean_abs_delta_i = 0.0;
  double mean_abs_delta_f = 0.0;
  bool gates_on_grid = true;  // every quantized gate value lies on the scheme grid

  double score(Metric m) const { return m == Metric::Chunk ? prf.f1 : accuracy; }
};

struct EpochReport {
  int epoch = 0;
  double train_loss = 0.0;
  EvalResult dev;
  DecompReport decomp;  // term norms from training (NEW runs), |delta| from dev
  double wall_seconds = 0.0;
};

struct TrainReport {
  std::string settings_label;
  nlohmann::ordered_json config;
  std::vector<EpochReport> epochs;
  int best_epoch = 0;
  EvalResult test;
};

struct TrainResult {
  TrainReport report;
  Model model;  // parameters at the best dev epoch (full precision)
};

class TrainAbort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------

namespace detail {

/// Runs f(i) for i in [0, n) on up to `threads` workers. Each index is
/// handled by exactly one worker; callers reduce results in index order.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& f) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < n; i += threads) f(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline bool on_grid(double v, const RoundClipScheme& s) { return round_clip(v, s) == v; }

}  // namespace detail

inline Model eval_weights(const Model& m, const RunSettings& rs) {
  if (!rs.binary_weights) return m;
  Model b = m;
  binarize_weights(b);
  return b;
}

/// Test-phase evaluation of `m` as given (apply eval_weights first for B(UVW)).
inline EvalResult evaluate(const Model& m, const std::vector<LabeledSequence>& split, const Vocab& tags,
                           const GateMode& mode, HeadKind head, std::size_t threads = 1) {
  std::vector<std::vector<int>> preds(split.size());
  std::vector<double> di(split.size(), 0.0), df(split.size(), 0.0);
  std::vector<std::size_t> counts(split.size(), 0);
  std::vector<char> grid(split.size(), 1);
  detail::parallel_for(split.size(), threads, [&](std::size_t s) {
    BiForward fw;
    preds[s] = predict(m, split[s].tokens, mode, head, &fw);
    for (const ForwardCache* fc : {&fw.fwd, &fw.bwd}) {
      for (const StepCache& st : fc->steps) {
        for (std::size_t k = 0; k < st.i.raw.size(); ++k) {
          di[s] += std::abs(st.i.raw[k] - round_clip(st.i.raw[k], mode.scheme));
          df[s] += std::abs(st.f.raw[k] - round_clip(st.f.raw[k], mode.scheme));
        }
        counts[s] += st.i.raw.size();
        for (const GateCache* g : {&st.i, &st.f, &st.o}) {
          if (!g->quantized) continue;
          for (double v : g->value) grid[s] &= detail::on_grid(v, mode.scheme) ? 1 : 0;
        }
      }
    }
  });
  EvalResult r;
  ChunkCounts cc;
  AccuracyCounts ac;
  double si = 0.0, sf = 0.0;
  std::size_t total = 0;
  std::vector<std::string> g, p;
  for (std::size_t s = 0; s < split.size(); ++s) {
    ac.add(split[s].tags, preds[s]);
    g.clear();
    p.clear();
    for (int t : split[s].tags) g.push_back(tags.word(t));
    for (int t : preds[s]) p.push_back(tags.word(t));
    cc.add(g, p);
    si += di[s];
    sf += df[s];
    total += counts[s];
    r.gates_on_grid = r.gates_on_grid && grid[s];
  }
  r.prf = cc.result();
  r.accuracy = ac.result();
  r.mean_abs_delta_i = total ? si / static_cast<double>(total) : 0.0;
  r.mean_abs_delta_f = total ? sf / static_cast<double>(total) : 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::ordered_json config_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["settings"] = c.settings;
  j["r"] = c.scheme.r();
  j["c"] = c.scheme.c();
  j["gumbel_eps"] = c.gumbel_eps;
  j["ste"] = ste_name(c.ste);
  j["optimizer"] = optimizer_name(c.opt.kind);
  j["lr"] = c.opt.lr;
  j["momentum"] = c.opt.momentum;
  j["beta1"] = c.opt.beta1;
  j["beta2"] = c.opt.beta2;
  j["adam_eps"] = c.opt.eps;
  j["clip_norm"] = c.opt.clip_norm;
  j["max_epochs"] = c.max_epochs;
  j["patience"] = c.patience;
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["head"] = head_name(c.head);
  j["metric"] = metric_name(c.metric);
  j["emb_dim"] = c.emb_dim;
  j["hidden"] = c.hidden;
  j["peepholes"] = c.peepholes;
  j["embeddings"] = c.embeddings;
  return j;
}

inline nlohmann::ordered_json eval_json(const EvalResult& e, Metric m) {
  nlohmann::ordered_json j;
  if (m == Metric::Chunk) {
    j["prec"] = e.prf.precision;
    j["rec"] = e.prf.recall;
    j["f1"] = e.prf.f1;
  } else {
    // Accuracy is reported in the precision column; recall/F1 do not apply.
    j["prec"] = e.accuracy;
    j["rec"] = nullptr;
    j["f1"] = nullptr;
  }
  j["accuracy"] = e.accuracy;
  j["mean_abs_delta_i"] = e.mean_abs_delta_i;
  j["mean_abs_delta_f"] = e.mean_abs_delta_f;
  return j;
}

inline nlohmann::ordered_json epoch_json(const EpochReport& e, Metric m, bool with_time = true) {
  nlohmann::ordered_json j;
  j["type"] = "epoch";
  j["epoch"] = e.epoch;
  j["train_loss"] = e.train_loss;
  j["dev"] = eval_json(e.dev, m);
  j["decomp"] = {{"input", {{"term1_norm", e.decomp.input.term1_norm},
                            {"term2_norm", e.decomp.input.term2_norm},
                            {"mean_abs_delta", e.decomp.input.mean_abs_delta_f}}},
                 {"forget", {{"term1_norm", e.decomp.forget.term1_norm},
                             {"term2_norm", e.decomp.forget.term2_norm},
                             {"mean_abs_delta", e.decomp.forget.mean_abs_delta_f}}}};
  if (with_time) j["wall_seconds"] = e.wall_seconds;
  return j;
}

inline Metric report_metric(const TrainReport& r) {
  return r.config.contains("metric") ? parse_metric(r.config["metric"].get<std::string>()) : Metric::Chunk;
}

inline nlohmann::ordered_json summary_json(const TrainReport& r, bool with_time = true) {
  const Metric m = report_metric(r);
  nlohmann::ordered_json j;
  j["type"] = "summary";
  j["settings"] = r.settings_label;
  j["best_epoch"] = r.best_epoch;
  j["epochs_run"] = r.epochs.size();
  j["test"] = eval_json(r.test, m);
  const ResidualTrend trend = [&] {
    std::vector<DecompReport> d;
    for (const EpochReport& e : r.epochs) d.push_back(e.decomp);
    return residual_trend(d);
  }();
  j["residual_decreased"] = {{"input", trend.input_decreased}, {"forget", trend.forget_decreased}};
  if (with_time) {
    double total = 0.0;
    for (const EpochReport& e : r.epochs) total += e.wall_seconds;
    j["wall_seconds"] = total;
  }
  j["config"] = r.config;
  return j;
}

/// JSON lines: one object per epoch, then the summary.
inline std::string report_jsonl(const TrainReport& r, bool with_time = true) {
  std::string out;
  for (const EpochReport& e : r.epochs) out += epoch_json(e, report_metric(r), with_time).dump() + "\n";
  out += summary_json(r, with_time).dump() + "\n";
  return out;
}

/// Equality of everything except wall-clock time. JSON numbers are printed
/// with round-trip precision, so this is bitwise on every double.
inline bool reports_identical(const TrainReport& a, const TrainReport& b) {
  return report_jsonl(a, false) == report_jsonl(b, false);
}

// ---------------------------------------------------------------------------

using EpochCallback = std::function<void(const EpochReport&)>;

inline std::string describe_batch(const std::vector<LabeledSequence>& data, const std::vector<std::size_t>& batch,
                                  const Vocabs& v) {
  std::ostringstream os;
  for (std::size_t idx : batch) {
    os << "  sentence " << idx << ":";
    for (int t : data[idx].tokens) os << ' ' << v.tokens.word(t);
    os << '\n';
  }
  return os.str();
}

inline TrainResult train(const TrainConfig& cfg, const Dataset& data, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (data.train.empty() || data.dev.empty()) throw std::invalid_argument("train: need nonempty train and dev splits");
  const RunSettings rs = cfg.run_settings();
  const Dims dims{data.vocab.tokens.size(), cfg.emb_dim, cfg.hidden, data.vocab.tags.size()};
  Model m = init_model(dims, cfg.seed, cfg.peepholes);
  if (!cfg.embeddings.empty()) load_embeddings(cfg.embeddings, data.vocab.tokens, m.lstm.embedding);
  OptimizerState opt;

  TrainResult out;
  TrainReport& rep = out.report;
  rep.settings_label = rs.label();
  rep.config = config_json(cfg);

  // Without any epochs the untrained model is the "best" one.
  Model best = m;
  double best_score = -std::numeric_limits<double>::infinity();
  const bool track_decomp = rs.mode.quant_active(Gate::Input, Phase::Train) ||
                            rs.mode.quant_active(Gate::Forget, Phase::Train);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    DecompAccumulator decomp;
    double loss_sum = 0.0;
    const auto batches = batch_iter(data.train.size(), cfg.batch_size, cfg.seed, static_cast<std::uint64_t>(epoch));
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& batch = batches[bi];
      const Model fwd = rs.binary_weights_in_training() ? eval_weights(m, rs) : Model{};
      const Model& w = rs.binary_weights_in_training() ? fwd : m;
      std::vector<SentenceResult> res(batch.size());
      std::vector<DecompAccumulator> dec(track_decomp ? batch.size() : 0);
      detail::parallel_for(batch.size(), cfg.threads, [&](std::size_t k) {
        const std::size_t idx = batch[k];
        Rng rng = Rng::derive(cfg.seed, {0x6b1, static_cast<std::uint64_t>(epoch), idx});
        res[k] = sentence_loss(w, data.train[idx].tokens, data.train[idx].tags, rs.mode, Phase::Train, cfg.ste,
                               cfg.head, rng, true, track_decomp ? &dec[k] : nullptr);
      });
      Model grad = zeros_like(m);
      double batch_loss = 0.0;
      const double inv = 1.0 / static_cast<double>(batch.size());
      for (std::size_t k = 0; k < batch.size(); ++k) {
        batch_loss += res[k].loss;
        accumulate(grad, res[k], inv);
        if (track_decomp) decomp.merge(dec[k]);
      }
      if (!std::isfinite(batch_loss) || !all_finite(grad)) {
        throw TrainAbort("non-finite " + std::string(std::isfinite(batch_loss) ? "gradient" : "loss") + " at epoch " +
                         std::to_string(epoch) + ", batch " + std::to_string(bi) + "\n" +
                         describe_batch(data.train, batch, data.vocab));
      }
      loss_sum += batch_loss;
      optimizer_step(m, grad, opt, cfg.opt);
    }

    EpochReport er;
    er.epoch = epoch;
    er.train_loss = loss_sum / static_cast<double>(data.train.size());
    er.dev = evaluate(eval_weights(m, rs), data.dev, data.vocab.tags, rs.mode, cfg.head, cfg.threads);
    er.decomp.epoch = epoch;
    er.decomp.input = decomp.stats(Gate::Input);
    er.decomp.forget = decomp.stats(Gate::Forget);
    er.decomp.input.mean_abs_delta_f = er.dev.mean_abs_delta_i;
    er.decomp.forget.mean_abs_delta_f = er.dev.mean_abs_delta_f;
    er.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rep.epochs.push_back(er);
    if (on_epoch) on_epoch(er);

    const double score = er.dev.score(cfg.metric);
    if (score > best_score) {
      best_score = score;
      rep.best_epoch = epoch;
      best = m;
    } else if (epoch - rep.best_epoch >= cfg.patience) {
      break;
    }
  }

  out.model = std::move(best);
  rep.test = evaluate(eval_weights(out.model, rs), data.test.empty() ? data.dev : data.test, data.vocab.tags, rs.mode,
                      cfg.head, cfg.threads);
  return out;
}

}  // namespace qlstm

#endif  // QLSTM_TRAIN_HPP_
