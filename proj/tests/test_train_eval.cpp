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
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "qlstm/checkpoint.hpp"
#include "qlstm/metrics.hpp"
#include "qlstm/optimizer.hpp"
#include "qlstm/settings.hpp"
#include "qlstm/train.hpp"

namespace qlstm {
namespace {

// ---------------------------------------------------------------- settings

TEST(Settings, TableRowLabels) {
  const RunSettings base = parse_settings("");
  EXPECT_TRUE(base.mode.is_identity());
  EXPECT_FALSE(base.binary_weights);
  EXPECT_EQ(base.label(), "");
  EXPECT_TRUE(parse_settings("Bi-LSTM-CRF").mode.is_identity());

  const RunSettings g = parse_settings("GI, GF");
  EXPECT_TRUE(g.mode.input.gumbel && g.mode.forget.gumbel);
  EXPECT_FALSE(g.mode.input.round_clip || g.mode.forget.round_clip);
  EXPECT_TRUE(g.mode.output.is_identity());

  const RunSettings gb = parse_settings("GI, GF, BI, BF");
  EXPECT_TRUE(gb.mode.input.gumbel && gb.mode.input.round_clip);
  EXPECT_TRUE(gb.mode.forget.gumbel && gb.mode.forget.round_clip);
  EXPECT_EQ(gb.mode.apply_phase, ApplyPhase::TestOnly);

  const RunSettings bb = parse_settings("BI, BF");
  EXPECT_TRUE(bb.mode.input.round_clip && !bb.mode.input.gumbel);
  EXPECT_EQ(bb.mode.apply_phase, ApplyPhase::TestOnly);
  EXPECT_FALSE(bb.mode.quant_active(Gate::Forget, Phase::Train));
  EXPECT_TRUE(bb.mode.quant_active(Gate::Forget, Phase::Test));

  const RunSettings nw = parse_settings("BI, BF, NEW");
  EXPECT_EQ(nw.mode.apply_phase, ApplyPhase::TrainAndTest);
  EXPECT_TRUE(nw.mode.quant_active(Gate::Forget, Phase::Train));
  EXPECT_FALSE(nw.binary_weights);

  const RunSettings bw = parse_settings("BI, BF, B(UVW)");
  EXPECT_TRUE(bw.binary_weights);
  EXPECT_FALSE(bw.binary_weights_in_training());

  const RunSettings bwn = parse_settings("BI, BF, B(UVW), NEW");
  EXPECT_TRUE(bwn.binary_weights_in_training());
  EXPECT_EQ(bwn.label(), "BI, BF, B(UVW), NEW");

  const RunSettings go = parse_settings("GO");
  EXPECT_TRUE(go.mode.output.gumbel);
  EXPECT_TRUE(go.mode.allow_output_transform);
}

TEST(Settings, SpacingAndCaseAreNormalized) {
  EXPECT_EQ(parse_settings("bi,bf,b (uvw),new").label(), "BI, BF, B(UVW), NEW");
}

TEST(Settings, RejectsUnknownTokensWithValidList) {
  try {
    parse_settings("BI, BX");
    FAIL() << "expected SettingsError";
  } catch (const SettingsError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("BX"), std::string::npos);
    EXPECT_NE(msg.find("B(UVW)"), std::string::npos);
  }
  EXPECT_THROW(parse_settings("BI,,BF"), SettingsError);
  EXPECT_THROW(parse_settings("NEW"), SettingsError);
}

// ----------------------------------------------------------------- metrics

std::vector<std::string> W(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

TEST(ChunkF1, Examples) {
  const auto gold = W("B-PER I-PER O B-LOC");
  EXPECT_EQ(chunk_f1(gold, gold), (Prf{1, 1, 1}));
  EXPECT_EQ(chunk_f1(gold, W("O O O O")), (Prf{0, 0, 0}));
  const Prf half = chunk_f1(W("B-X I-X O O"), W("B-X I-X O B-Y"));
  EXPECT_DOUBLE_EQ(half.precision, 0.5);
  EXPECT_DOUBLE_EQ(half.recall, 1.0);
  EXPECT_NEAR(half.f1, 2.0 / 3.0, 1e-15);
  EXPECT_THROW(chunk_f1(gold, W("O")), std::invalid_argument);
}

TEST(ChunkF1, ExtractionRules) {
  EXPECT_EQ(extract_chunks(W("B-A I-A I-B O I-A B-A B-A")),
            (std::vector<Chunk>{{0, 2, "A"}, {2, 3, "B"}, {4, 5, "A"}, {5, 6, "A"}, {6, 7, "A"}}));
  // A boundary error costs both precision and recall.
  const Prf p = chunk_f1(W("B-A I-A I-A"), W("B-A I-A O"));
  EXPECT_EQ(p, (Prf{0, 0, 0}));
}

TEST(Accuracy, TokenLevel) {
  AccuracyCounts a;
  a.add(std::vector<int>{1, 2, 3, 4}, std::vector<int>{1, 2, 0, 4});
  EXPECT_DOUBLE_EQ(a.result(), 0.75);
}

// --------------------------------------------------------------- optimizer

Model one_hot_grad(const Model& like, double value) {
  Model g = zeros_like(like);
  g.head.stop[0] = value;
  return g;
}

TEST(Optimizer, ZeroGradientLeavesSgdParamsUnchanged) {
  const Model m0 = init_model(Dims{4, 2, 2, 2}, 1);
  Model m = m0;
  Model g = zeros_like(m);
  OptimizerState st;
  OptimizerCfg cfg;
  cfg.kind = OptimizerKind::Sgd;
  cfg.lr = 0.1;
  optimizer_step(m, g, st, cfg);
  EXPECT_EQ(m, m0);
}

TEST(Optimizer, SgdStepOnSquare) {
  Model m = init_model(Dims{4, 2, 2, 2}, 1);
  m.head.stop[0] = 3.0;
  OptimizerCfg cfg;
  cfg.kind = OptimizerKind::Sgd;
  cfg.lr = 1.0;
  cfg.clip_norm = 0.0;  // unclipped
  OptimizerState st;
  Model g = one_hot_grad(m, 2 * 3.0);
  optimizer_step(m, g, st, cfg);
  EXPECT_EQ(m.head.stop[0], -3.0);

  // With the default clip at 5 the step is 5, not 6.
  m.head.stop[0] = 3.0;
  cfg.clip_norm = 5.0;
  OptimizerState st2;
  Model g2 = one_hot_grad(m, 6.0);
  optimizer_step(m, g2, st2, cfg);
  EXPECT_DOUBLE_EQ(m.head.stop[0], -2.0);
}

TEST(Optimizer, AdamFirstStepMovesAgainstGradientByLr) {
  Model m = init_model(Dims{4, 2, 2, 2}, 1);
  const Model m0 = m;
  Model g = zeros_like(m);
  g.head.stop = {0.3, -2.0};
  OptimizerState st;
  OptimizerCfg cfg;  // adam, lr 1e-3
  optimizer_step(m, g, st, cfg);
  EXPECT_NEAR(m.head.stop[0] - m0.head.stop[0], -1e-3, 1e-9);
  EXPECT_NEAR(m.head.stop[1] - m0.head.stop[1], 1e-3, 1e-9);
  EXPECT_EQ(m.lstm.fwd.W_f, m0.lstm.fwd.W_f);
}

TEST(Optimizer, ClipGlobalNorm) {
  Model g = zeros_like(init_model(Dims{4, 2, 2, 2}, 1));
  g.head.stop = {3.0, 4.0};
  g.head.start = {0.0, 12.0};
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 5.0), 13.0);
  EXPECT_NEAR(global_norm(g), 5.0, 1e-12);
  EXPECT_NEAR(g.head.start[1] / g.head.stop[1], 3.0, 1e-12);
}

TEST(Optimizer, RejectsBadConfig) {
  OptimizerCfg c;
  c.lr = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.lr = 1e-3;
  c.momentum = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

// -------------------------------------------------------------- checkpoint

using Code = CheckpointError::Code;

Code load_code(const std::vector<unsigned char>& bytes) {
  try {
    parse_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    return e.code();
  }
  ADD_FAILURE() << "load unexpectedly succeeded";
  return Code::Io;
}

void patch_u64(std::vector<unsigned char>& b, std::size_t at, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b[at + i] = static_cast<unsigned char>(v >> (8 * i));
}

void reseal(std::vector<unsigned char>& b) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i + 8 < b.size(); ++i) {
    h ^= b[i];
    h *= 0x100000001b3ULL;
  }
  patch_u64(b, b.size() - 8, h);
}

Model random_model(std::uint64_t seed, bool peepholes = true) {
  Model m = init_model(Dims{7, 3, 4, 3}, seed, peepholes);
  Rng rng(seed);
  for (auto& t : tensors(m))
    for (double& x : t.data) x = rng.uniform(-1e3, 1e3) * std::pow(10.0, rng.uniform(-20, 20));
  return m;
}

TEST(Checkpoint, BitwiseRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "qlstm_ckpt_test";
  std::filesystem::create_directories(dir);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Model m = random_model(seed, seed % 2 == 0);
    const auto path = dir / "m.ckpt";
    save_checkpoint(path, m, seed % 2 ? HeadKind::Crf : HeadKind::Softmax);
    const Checkpoint ck = load_checkpoint(path);
    EXPECT_EQ(ck.head, seed % 2 ? HeadKind::Crf : HeadKind::Softmax);
    EXPECT_EQ(ck.model.lstm.peepholes, m.lstm.peepholes);
    const auto a = tensors(m);
    const auto b = tensors(ck.model);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      ASSERT_EQ(a[i].data.size(), b[i].data.size());
      EXPECT_EQ(std::memcmp(a[i].data.data(), b[i].data.data(), 8 * a[i].data.size()), 0) << a[i].name;
    }
  }
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, DistinctErrors) {
  const auto good = checkpoint_bytes(random_model(3));
  ASSERT_NO_THROW(parse_checkpoint(good));

  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{20}, good.size() / 2, good.size() - 1}) {
    EXPECT_EQ(load_code(std::vector<unsigned char>(good.begin(), good.begin() + static_cast<long>(cut))),
              Code::Truncated)
        << "cut at " << cut;
  }
  auto magic = good;
  magic[0] = 'X';
  EXPECT_EQ(load_code(magic), Code::BadMagic);

  auto version = good;
  version[8] = 2;  // a file written by a newer format
  EXPECT_EQ(load_code(version), Code::VersionMismatch);

  auto flipped = good;
  flipped[good.size() - 20] ^= 0x01;
  EXPECT_EQ(load_code(flipped), Code::ChecksumMismatch);

  // Consistent checksum but a manifest that disagrees with the dims.
  auto shape = good;
  const std::size_t first_rows = 8 + 4 + 8 + 32 + 2 + 4 + 2 + std::string("embedding").size();
  patch_u64(shape, first_rows, 8);
  reseal(shape);
  EXPECT_EQ(load_code(shape), Code::ShapeMismatch);
}

TEST(Checkpoint, ExpectedDimsAreEnforced) {
  const auto path = std::filesystem::temp_directory_path() / "qlstm_ckpt_dims.ckpt";
  save_checkpoint(path, random_model(1));
  const Dims other{7, 3, 5, 3};
  try {
    load_checkpoint(path, &other);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.code(), Code::ShapeMismatch);
  }
  EXPECT_THROW(load_checkpoint(path.string() + ".missing"), CheckpointError);
  std::filesystem::remove(path);
}

// ------------------------------------------------------------------ train

Dataset small_task() {
  SynthConfig s;
  s.n_train = 150;
  s.n_dev = 60;
  s.n_test = 60;
  s.trigger_distance = 2;
  return synth_task(11, s);
}

TrainConfig small_cfg(const std::string& settings) {
  TrainConfig c;
  c.settings = settings;
  c.hidden = 6;
  c.emb_dim = 5;
  c.max_epochs = 4;
  c.patience = 2;
  c.opt.lr = 1e-2;
  c.seed = 3;
  return c;
}

TEST(Train, ZeroEpochsReportsUntrainedTestMetrics) {
  const Dataset d = small_task();
  TrainConfig c = small_cfg("");
  c.max_epochs = 0;
  const TrainResult r = train(c, d);
  EXPECT_TRUE(r.report.epochs.empty());
  EXPECT_EQ(r.report.best_epoch, 0);
  EXPECT_EQ(r.model, init_model(r.model.dims, c.seed, c.peepholes));
  const EvalResult e = evaluate(r.model, d.test, d.vocab.tags, c.run_settings().mode, c.head);
  EXPECT_EQ(r.report.test.prf, e.prf);
}

TEST(Train, BitReproducibleAndThreadCountInvariant) {
  const Dataset d = small_task();
  TrainConfig c = small_cfg("GI, GF, BI, BF");
  const TrainResult a = train(c, d);
  const TrainResult b = train(c, d);
  EXPECT_TRUE(reports_identical(a.report, b.report));
  EXPECT_EQ(a.model, b.model);
  c.threads = 3;
  const TrainResult t = train(c, d);
  EXPECT_TRUE(reports_identical(a.report, t.report));
}

TEST(Train, TestOnlyTransformsLeaveTrainingUntouched) {
  const Dataset d = small_task();
  TrainConfig base = small_cfg("");
  TrainConfig quant = small_cfg("BI, BF");
  base.patience = quant.patience = 100;
  const TrainResult a = train(base, d);
  const TrainResult b = train(quant, d);
  ASSERT_EQ(a.report.epochs.size(), b.report.epochs.size());
  for (std::size_t e = 0; e < a.report.epochs.size(); ++e)
    EXPECT_EQ(a.report.epochs[e].train_loss, b.report.epochs[e].train_loss) << "epoch " << e + 1;
}

TEST(Train, NewRunsEvaluateOnTheGrid) {
  const Dataset d = small_task();
  const TrainResult r = train(small_cfg("BI, BF, NEW"), d);
  for (const EpochReport& e : r.report.epochs) {
    EXPECT_TRUE(e.dev.gates_on_grid);
    EXPECT_GT(e.decomp.forget.term1_norm, 0.0);
  }
  EXPECT_TRUE(r.report.test.gates_on_grid);
  // The instrumented check is not vacuous: raw gates are off the grid.
  EXPECT_GT(r.report.epochs.back().dev.mean_abs_delta_f, 0.0);
}

TEST(Train, BestEpochHasMaxDevScoreAndPatienceStops) {
  const Dataset d = small_task();
  TrainConfig c = small_cfg("");
  c.max_epochs = 12;
  c.patience = 1;
  const TrainResult r = train(c, d);
  double best = -1;
  for (const EpochReport& e : r.report.epochs) best = std::max(best, e.dev.prf.f1);
  EXPECT_EQ(r.report.epochs[static_cast<std::size_t>(r.report.best_epoch - 1)].dev.prf.f1, best);
  const int last = r.report.epochs.back().epoch;
  EXPECT_TRUE(last == c.max_epochs || last - r.report.best_epoch == c.patience);
  // The returned model is the best-epoch one: re-evaluating reproduces its dev score.
  const EvalResult e = evaluate(r.model, d.dev, d.vocab.tags, c.run_settings().mode, c.head);
  EXPECT_EQ(e.prf.f1, best);
}

TEST(Train, BinaryWeightsAtEvaluation) {
  const Dataset d = small_task();
  TrainConfig c = small_cfg("BI, BF, B(UVW), NEW");
  c.max_epochs = 2;
  const TrainResult r = train(c, d);
  const Model b = eval_weights(r.model, c.run_settings());
  for (const auto& t : tensors(b)) {
    if (!is_binarized_tensor(t.name, b.lstm.peepholes)) continue;
    std::set<double> mags;
    for (double x : t.data) mags.insert(std::abs(x));
    EXPECT_EQ(mags.size(), 1u) << t.name;
  }
}

TEST(Train, SoftmaxHeadAndAccuracyMetric) {
  const Dataset d = small_task();
  TrainConfig c = small_cfg("");
  c.head = HeadKind::Softmax;
  c.metric = Metric::Accuracy;
  const TrainResult r = train(c, d);
  EXPECT_GT(r.report.test.accuracy, 0.5);
  const auto j = summary_json(r.report);
  EXPECT_TRUE(j["test"]["f1"].is_null());
  EXPECT_EQ(j["test"]["prec"].get<double>(), r.report.test.accuracy);
}

TEST(Train, NonFiniteLossAborts) {
  const Dataset d = small_task();
  TrainConfig c = small_cfg("");
  c.opt.kind = OptimizerKind::Sgd;
  c.opt.lr = 1e308;
  try {
    train(c, d);
    FAIL() << "expected TrainAbort";
  } catch (const TrainAbort& e) {
    EXPECT_NE(std::string(e.what()).find("sentence"), std::string::npos);
  }
}

TEST(Train, RejectsBadConfig) {
  const Dataset d = small_task();
  TrainConfig c = small_cfg("BQ");
  EXPECT_THROW(train(c, d), SettingsError);
  TrainConfig p = small_cfg("");
  p.patience = 0;
  EXPECT_THROW(train(p, d), std::invalid_argument);
}

TEST(Report, JsonLinesHaveEpochsThenSummary) {
  const Dataset d = small_task();
  const TrainResult r = train(small_cfg("BI, BF"), d);
  std::istringstream in(report_jsonl(r.report));
  std::vector<nlohmann::json> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(nlohmann::json::parse(l));
  ASSERT_EQ(lines.size(), r.report.epochs.size() + 1);
  EXPECT_EQ(lines.front()["type"], "epoch");
  EXPECT_EQ(lines.back()["type"], "summary");
  EXPECT_EQ(lines.back()["settings"], "BI, BF");
  EXPECT_EQ(lines.back()["config"]["r"], 0.5);
}

}  // namespace
}  // namespace qlstm
