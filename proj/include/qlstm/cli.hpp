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

// The `qlstm` command line: train, quantize, sweep, gradcheck.
// Exit codes: 0 success, 1 runtime failure, 2 usage.

#ifndef QLSTM_CLI_HPP_
#define QLSTM_CLI_HPP_

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "qlstm/checkpoint.hpp"
#include "qlstm/config.hpp"
#include "qlstm/grad_check.hpp"
#include "qlstm/train.hpp"

namespace qlstm {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Artifacts

inline void write_text_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    f << text;
    if (!f.flush()) throw std::runtime_error("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return out + "\"";
}

inline std::string settings_display(const std::string& label) { return label.empty() ? "Bi-LSTM-CRF" : label; }

inline std::string summary_csv(const TrainReport& r, const TrainConfig& c) {
  const auto s = summary_json(r);
  auto num = [](const nlohmann::ordered_json& v) { return v.is_null() ? std::string() : detail::fmt_double(v.get<double>()); };
  std::ostringstream os;
  os << "settings,r,c,seed,best_epoch,epochs_run,prec,rec,f1,accuracy,wall_seconds\n"
     << csv_field(settings_display(r.settings_label)) << ',' << detail::fmt_double(c.scheme.r()) << ','
     << detail::fmt_double(c.scheme.c()) << ',' << c.seed << ',' << r.best_epoch << ',' << r.epochs.size() << ','
     << num(s["test"]["prec"]) << ',' << num(s["test"]["rec"]) << ',' << num(s["test"]["f1"]) << ','
     << detail::fmt_double(r.test.accuracy) << ',' << detail::fmt_double(s["wall_seconds"].get<double>()) << '\n';
  return os.str();
}

/// Trains one configuration into `dir`: config.resolved first (so failed
/// runs still record what they tried), then report.jsonl, best.ckpt and
/// summary.csv. report.jsonl appears only once the run has finished.
inline TrainResult run_training(const ExperimentConfig& cfg, const fs::path& dir, std::ostream* log) {
  validate_experiment(cfg);
  fs::create_directories(dir);
  write_text_atomic(dir / "config.resolved", resolved_config_text(cfg));
  const Dataset data = load_dataset(cfg);
  const TrainConfig tc = cfg.train_config();
  const fs::path partial = dir / "report.jsonl.partial";
  std::ofstream rep(partial, std::ios::binary | std::ios::trunc);
  TrainResult res = train(tc, data, [&](const EpochReport& e) {
    rep << epoch_json(e, tc.metric).dump() << '\n' << std::flush;
    if (log) {
      *log << "epoch " << std::setw(2) << e.epoch << "  loss " << std::fixed << std::setprecision(4) << e.train_loss
           << "  dev " << (tc.metric == Metric::Chunk ? "f1 " : "acc ") << e.dev.score(tc.metric) << "  ("
           << std::setprecision(1) << e.wall_seconds << "s)\n"
           << std::defaultfloat << std::flush;
    }
  });
  save_checkpoint(dir / "best.ckpt", res.model, tc.head);
  write_text_atomic(dir / "summary.csv", summary_csv(res.report, tc));
  rep << summary_json(res.report).dump() << '\n';
  rep.close();
  fs::rename(partial, dir / "report.jsonl");
  return res;
}

// ---------------------------------------------------------------------------
// Option plumbing: each override flag maps onto one config key.

class Overrides {
 public:
  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    std::string& slot = values_[key];
    opts_.emplace_back(app->add_option(flag, slot, help), key);
  }
  void add_set(CLI::App* app) {
    app->add_option("--set", sets_, "Override any config key: section.key=value (repeatable)");
  }
  void apply(ExperimentConfig& c) const {
    for (const std::string& kv : sets_) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects section.key=value, got '" + kv + "'");
      set_config_value(c, detail::trim(kv.substr(0, eq)), kv.substr(eq + 1));
    }
    for (const auto& [opt, key] : opts_)
      if (opt->count() > 0) set_config_value(c, key, values_.at(key));
  }

 private:
  std::map<std::string, std::string> values_;  // node-stable storage for CLI11
  std::vector<std::pair<CLI::Option*, std::string>> opts_;
  std::vector<std::string> sets_;
};

struct DataFlags {
  std::string dir;
  bool synthetic = false;
  CLI::Option* dir_opt = nullptr;

  void add(CLI::App* app) {
    dir_opt = app->add_option("--data", dir, "CoNLL directory with train.txt, dev.txt, test.txt");
    app->add_flag("--synthetic", synthetic, "Use the synthetic delayed-trigger task")->excludes(dir_opt);
  }
  void apply(ExperimentConfig& c) const {
    if (synthetic) c.data.source = DataSource::Synthetic;
    if (dir_opt->count() > 0) {
      c.data.source = DataSource::Conll;
      c.data.dir = dir;
    }
  }
};

inline std::size_t threads_from_env() {
  const char* v = std::getenv("QLSTM_THREADS");
  if (v == nullptr || *v == '\0') return 1;
  const std::string s = v;
  std::size_t n = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), n);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size() || n < 1) {
    throw UsageError("QLSTM_THREADS must be a positive integer, got '" + s + "'");
  }
  return n;
}

inline void add_train_overrides(CLI::App* app, Overrides& o) {
  o.add(app, "--settings", "run.settings", "Settings string, e.g. \"BI, BF, NEW\" (empty: baseline)");
  o.add(app, "--seed", "run.seed", "Run seed");
  o.add(app, "--r", "quant.r", "Round & Clip step");
  o.add(app, "--c", "quant.c", "Round & Clip bound");
  o.add(app, "--epsilon", "gumbel.epsilon", "Gumbel temperature");
  o.add(app, "--ste", "train.ste", "Backward rule through quantized gates: full | quantized");
  o.add(app, "--head", "train.head", "Output head: crf | softmax");
  o.add(app, "--metric", "train.metric", "Dev/test metric: chunk | accuracy");
  o.add(app, "--epochs", "train.max_epochs", "Maximum epochs");
  o.add(app, "--patience", "train.patience", "Early-stopping patience in epochs");
  o.add(app, "--batch-size", "train.batch_size", "Sentences per batch");
  o.add(app, "--optimizer", "optim.kind", "adam | sgd");
  o.add(app, "--lr", "optim.lr", "Learning rate");
  o.add(app, "--hidden", "model.hidden", "LSTM hidden size per direction");
  o.add(app, "--emb-dim", "model.emb_dim", "Embedding size");
  o.add(app, "--embeddings", "model.embeddings", "Initial embeddings (text: token then floats)");
  o.add_set(app);
}

inline ExperimentConfig build_config(const std::string& config_path, const Overrides& o, const DataFlags& d) {
  ExperimentConfig c;
  if (!config_path.empty()) load_config_file(c, config_path);
  o.apply(c);
  d.apply(c);
  c.train.threads = threads_from_env();
  if (c.data.source == DataSource::Unset) throw UsageError("no data: pass --data DIR or --synthetic");
  validate_experiment(c);
  return c;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config;
  std::string out;
  bool quiet = false;
  Overrides overrides;
  DataFlags data;
};

inline int cmd_train(TrainArgs& a, std::ostream& out) {
  const ExperimentConfig cfg = build_config(a.config, a.overrides, a.data);
  const RunSettings rs = cfg.train_config().run_settings();
  out << "training " << settings_display(rs.label()) << " (seed " << cfg.train.seed << ") into " << a.out << "\n";
  const TrainResult res = run_training(cfg, a.out, a.quiet ? nullptr : &out);
  const auto test = summary_json(res.report)["test"];
  out << "best epoch " << res.report.best_epoch << "  test " << test.dump() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// quantize

struct QuantizeArgs {
  std::string checkpoint;
  std::string config;
  std::string gates = "BI, BF";
  bool weights = false;
  std::string split = "test";
  std::string out;
  Overrides overrides;
  DataFlags data;
};

inline std::string eval_line(const EvalResult& e, Metric m) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  if (m == Metric::Chunk) {
    os << "prec " << e.prf.precision << "  rec " << e.prf.recall << "  f1 " << e.prf.f1;
  } else {
    os << "acc " << e.accuracy;
  }
  os << "  mean|dI| " << e.mean_abs_delta_i << "  mean|dF| " << e.mean_abs_delta_f;
  return os.str();
}

inline int cmd_quantize(QuantizeArgs& a, std::ostream& out) {
  std::string config = a.config;
  if (config.empty()) {
    const fs::path beside = fs::path(a.checkpoint).parent_path() / "config.resolved";
    if (fs::exists(beside)) config = beside.string();
  }
  ExperimentConfig cfg;
  try {
    cfg = build_config(config, a.overrides, a.data);
  } catch (const UsageError&) {
    if (!config.empty()) throw;
    throw UsageError("no data: pass --config (the training run's config.resolved), --data DIR or --synthetic");
  }
  if (a.split != "test" && a.split != "dev") throw UsageError("--split must be 'test' or 'dev'");

  const TrainConfig tc = cfg.train_config();
  RunSettings rs = parse_settings(a.gates, tc.scheme, GumbelCfg{tc.gumbel_eps, tc.seed});
  if (rs.mode.apply_phase == ApplyPhase::TrainAndTest) {
    throw UsageError("quantize applies transforms after training; NEW is a training setting");
  }
  if (a.weights && !rs.binary_weights) {
    rs = parse_settings(a.gates + (detail::trim(a.gates).empty() ? "" : ",") + "B(UVW)", tc.scheme,
                        GumbelCfg{tc.gumbel_eps, tc.seed});
  }

  const Dataset data = load_dataset(cfg);
  const Dims expect{data.vocab.tokens.size(), tc.emb_dim, tc.hidden, data.vocab.tags.size()};
  const Checkpoint ck = load_checkpoint(a.checkpoint, &expect);
  const auto& split = a.split == "test" ? data.test : data.dev;

  const EvalResult plain = evaluate(ck.model, split, data.vocab.tags, GateMode{}, ck.head, tc.threads);
  const Model qm = eval_weights(ck.model, rs);
  const EvalResult quant = evaluate(qm, split, data.vocab.tags, rs.mode, ck.head, tc.threads);

  out << a.split << " split, " << split.size() << " sentences\n";
  out << "  plain      " << eval_line(plain, tc.metric) << "\n";
  out << "  quantized  " << eval_line(quant, tc.metric) << "   [" << settings_display(rs.label()) << ", r=" << tc.scheme.r()
      << " c=" << tc.scheme.c() << "]\n";

  if (!a.out.empty()) {
    fs::create_directories(a.out);
    ExperimentConfig qcfg = cfg;
    qcfg.train.settings = rs.label();
    write_text_atomic(fs::path(a.out) / "config.resolved", resolved_config_text(qcfg));
    save_checkpoint(fs::path(a.out) / "quantized.ckpt", qm, ck.head);
    nlohmann::ordered_json j;
    j["checkpoint"] = a.checkpoint;
    j["split"] = a.split;
    j["settings"] = rs.label();
    j["r"] = tc.scheme.r();
    j["c"] = tc.scheme.c();
    j["plain"] = eval_json(plain, tc.metric);
    j["quantized"] = eval_json(quant, tc.metric);
    write_text_atomic(fs::path(a.out) / "eval.json", j.dump(2) + "\n");
    out << "wrote " << (fs::path(a.out) / "quantized.ckpt").string() << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepRow {
  std::string name;   // key in the [rows] section
  std::string settings;
  std::optional<RoundClipScheme> scheme;  // only for rows with Round & Clip gates
  std::string label;
};

struct SweepGrid {
  ExperimentConfig base;
  std::vector<SweepRow> rows;
  int repeats = 1;
  std::string out;
};

inline RoundClipScheme parse_scheme(const std::string& s) {
  const auto slash = s.find('/');
  if (slash == std::string::npos) throw ConfigError("grid.schemes: expected r/c, got '" + s + "'");
  const double r = detail::parse_number<double>("grid.schemes", s.substr(0, slash));
  const double c = detail::parse_number<double>("grid.schemes", s.substr(slash + 1));
  return detail::rethrow_as_config("grid.schemes", [&] { return RoundClipScheme(r, c); });
}

inline std::string safe_name(const std::string& s) {
  std::string out;
  for (char ch : s) out += std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' ? ch : '_';
  return out.empty() ? "row" : out;
}

/// Grid file: the usual config sections (shared by every run) plus
///   [grid]  repeats = N, schemes = 0.5/1.0, 0.2/0.4, out = DIR
///   [rows]  name = settings string, one per row in file order
inline SweepGrid read_grid(const fs::path& path, const Overrides& o, const DataFlags& d) {
  const auto tree = read_ini_file(path);
  SweepGrid g;
  apply_config_tree(g.base, tree, {"grid", "rows"});
  o.apply(g.base);
  d.apply(g.base);
  g.base.train.threads = threads_from_env();

  std::vector<RoundClipScheme> schemes;
  if (auto grid = tree.get_child_optional("grid")) {
    for (const auto& [key, value] : *grid) {
      const std::string v = value.data();
      if (key == "repeats") {
        g.repeats = detail::parse_number<int>("grid.repeats", v);
      } else if (key == "out") {
        g.out = detail::trim(v);
      } else if (key == "schemes") {
        std::stringstream ss(v);
        for (std::string item; std::getline(ss, item, ',');)
          if (!detail::trim(item).empty()) schemes.push_back(parse_scheme(detail::trim(item)));
      } else {
        throw ConfigError("unknown grid key 'grid." + key + "'");
      }
    }
  }
  if (g.repeats < 1) throw ConfigError("grid.repeats must be >= 1");
  if (schemes.empty()) schemes.push_back(g.base.train_config().scheme);

  if (auto rows = tree.get_child_optional("rows")) {
    for (const auto& [name, value] : *rows) {
      const std::string settings = detail::trim(value.data());
      const RunSettings rs = parse_settings(settings);
      const bool uses_scheme = rs.mode.input.round_clip || rs.mode.forget.round_clip || rs.mode.output.round_clip;
      if (!uses_scheme) {
        g.rows.push_back({name, settings, std::nullopt, rs.label()});
        continue;
      }
      for (const RoundClipScheme& s : schemes) g.rows.push_back({name, settings, s, rs.label()});
    }
  }
  return g;
}

struct RunOutcome {
  bool ok = false;
  std::string error;
  int best_epoch = 0;
  double prec = 0.0;
  std::optional<double> rec, f1;
};

inline std::optional<RunOutcome> read_finished_run(const fs::path& dir) {
  const fs::path p = dir / "report.jsonl";
  if (!fs::exists(p)) return std::nullopt;
  std::istringstream in(read_text(p));
  std::string line, last;
  while (std::getline(in, line))
    if (!line.empty()) last = line;
  const auto j = nlohmann::json::parse(last, nullptr, false);
  if (j.is_discarded() || j.value("type", "") != "summary") return std::nullopt;
  RunOutcome r;
  r.ok = true;
  r.best_epoch = j["best_epoch"].get<int>();
  r.prec = j["test"]["prec"].get<double>();
  if (!j["test"]["rec"].is_null()) r.rec = j["test"]["rec"].get<double>();
  if (!j["test"]["f1"].is_null()) r.f1 = j["test"]["f1"].get<double>();
  return r;
}

inline std::string with_decimal(double v) {
  std::string s = detail::fmt_double(v);
  if (s.find_first_of(".e") == std::string::npos) s += ".0";
  return s;
}

struct TableRow {
  std::string no, settings, rc, epoch, prec, rec, f1;  // markdown cells
  std::string c_epoch, c_prec, c_rec, c_f1;            // csv cells, full precision
};

inline std::vector<TableRow> table_rows(const SweepGrid& g, const std::vector<std::vector<std::optional<RunOutcome>>>& res) {
  std::vector<TableRow> out;
  for (std::size_t i = 0; i < g.rows.size(); ++i) {
    TableRow t;
    t.no = std::to_string(i + 1);
    t.settings = settings_display(g.rows[i].label);
    t.rc = g.rows[i].scheme ? with_decimal(g.rows[i].scheme->r()) + " / " + with_decimal(g.rows[i].scheme->c()) : "-";
    bool failed = false, pending = false;
    for (const auto& r : res[i]) {
      if (!r) pending = true;
      else if (!r->ok) failed = true;
    }
    if (failed || pending) {
      const std::string s = failed ? "FAILED" : "pending";
      t.epoch = t.prec = t.rec = t.f1 = t.c_epoch = t.c_prec = t.c_rec = t.c_f1 = s;
      out.push_back(t);
      continue;
    }
    const double n = static_cast<double>(res[i].size());
    double ep = 0, p = 0, rc = 0, f = 0;
    bool has_rec = true;
    for (const auto& r : res[i]) {
      ep += r->best_epoch;
      p += r->prec;
      has_rec = has_rec && r->rec && r->f1;
      rc += r->rec.value_or(0.0);
      f += r->f1.value_or(0.0);
    }
    auto fixed = [](double v, int digits) {
      std::ostringstream os;
      os << std::fixed << std::setprecision(digits) << v;
      return os.str();
    };
    t.epoch = fixed(ep / n, 1);
    t.prec = fixed(p / n, 3);
    t.rec = has_rec ? fixed(rc / n, 3) : "-";
    t.f1 = has_rec ? fixed(f / n, 3) : "-";
    t.c_epoch = detail::fmt_double(ep / n);
    t.c_prec = detail::fmt_double(p / n);
    t.c_rec = has_rec ? detail::fmt_double(rc / n) : "";
    t.c_f1 = has_rec ? detail::fmt_double(f / n) : "";
    out.push_back(t);
  }
  return out;
}

inline void write_tables(const fs::path& dir, const std::vector<TableRow>& rows) {
  std::ostringstream csv, md;
  csv << "No.,Settings,r/c,Epoch,Prec,Rec,F1\n";
  md << "| No. | Settings | r / c | Epoch | Prec | Rec | F1 |\n|---|---|---|---|---|---|---|\n";
  for (const TableRow& r : rows) {
    csv << r.no << ',' << csv_field(r.settings) << ',' << csv_field(r.rc) << ',' << r.c_epoch << ',' << r.c_prec << ','
        << r.c_rec << ',' << r.c_f1 << '\n';
    md << "| " << r.no << " | " << r.settings << " | " << r.rc << " | " << r.epoch << " | " << r.prec << " | " << r.rec
       << " | " << r.f1 << " |\n";
  }
  write_text_atomic(dir / "table.csv", csv.str());
  write_text_atomic(dir / "table.md", md.str());
}

struct SweepArgs {
  std::string grid;
  std::string out;
  bool resume = false;
  std::size_t parallel = 1;
  Overrides overrides;
  DataFlags data;
};

struct SweepStats {
  std::size_t executed = 0, reused = 0, failed = 0;
};

inline fs::path run_dir(const fs::path& out, const SweepGrid& g, std::size_t row, int repeat) {
  const SweepRow& r = g.rows[row];
  std::string name = std::to_string(row + 1) + "-" + safe_name(r.name);
  if (r.scheme) name += "-r" + detail::fmt_double(r.scheme->r()) + "-c" + detail::fmt_double(r.scheme->c());
  return out / "runs" / name / ("seed" + std::to_string(g.base.train.seed + static_cast<std::uint64_t>(repeat)));
}

inline SweepStats run_sweep(const SweepGrid& g, const fs::path& out, bool resume, std::size_t parallel,
                            std::ostream& log) {
  fs::create_directories(out);
  std::vector<std::vector<std::optional<RunOutcome>>> res(g.rows.size(),
                                                          std::vector<std::optional<RunOutcome>>(g.repeats));
  std::vector<std::pair<std::size_t, int>> todo;
  SweepStats stats;
  for (std::size_t i = 0; i < g.rows.size(); ++i) {
    for (int k = 0; k < g.repeats; ++k) {
      if (resume) res[i][k] = read_finished_run(run_dir(out, g, i, k));
      if (res[i][k]) ++stats.reused;
      else todo.emplace_back(i, k);
    }
  }
  write_tables(out, table_rows(g, res));

  std::mutex mu;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t t = next++; t < todo.size(); t = next++) {
      const auto [i, k] = todo[t];
      ExperimentConfig cfg = g.base;
      cfg.train.settings = g.rows[i].settings;
      cfg.train.seed = g.base.train.seed + static_cast<std::uint64_t>(k);
      if (g.rows[i].scheme) {
        cfg.quant_r = g.rows[i].scheme->r();
        cfg.quant_c = g.rows[i].scheme->c();
      }
      const fs::path dir = run_dir(out, g, i, k);
      RunOutcome o;
      try {
        fs::remove(dir / "report.jsonl");
        run_training(cfg, dir, nullptr);
        o = *read_finished_run(dir);
      } catch (const std::exception& e) {
        o.ok = false;
        o.error = e.what();
        std::error_code ec;
        fs::create_directories(dir, ec);
        std::ofstream(dir / "error.txt") << e.what() << '\n';
      }
      std::lock_guard lock(mu);
      res[i][k] = o;
      ++stats.executed;
      if (!o.ok) ++stats.failed;
      log << "[" << stats.executed << "/" << todo.size() << "] row " << i + 1 << " "
          << settings_display(g.rows[i].label) << " seed " << cfg.train.seed << ": "
          << (o.ok ? "f1 " + (o.f1 ? detail::fmt_double(*o.f1) : "-") : "FAILED: " + o.error) << "\n"
          << std::flush;
      write_tables(out, table_rows(g, res));
    }
  };
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 1; w < std::min(parallel, todo.size()); ++w) pool.emplace_back(worker);
    worker();
  }
  return stats;
}

inline int cmd_sweep(SweepArgs& a, std::ostream& out) {
  if (a.parallel < 1) throw UsageError("--parallel must be >= 1");
  SweepGrid g = read_grid(a.grid, a.overrides, a.data);
  if (!a.out.empty()) g.out = a.out;
  if (g.out.empty()) throw UsageError("no output directory: pass --out or set grid.out");
  if (!g.rows.empty()) {
    if (g.base.data.source == DataSource::Unset) throw UsageError("no data: set data.source, --data DIR or --synthetic");
    validate_experiment(g.base);
  }
  const SweepStats s = run_sweep(g, g.out, a.resume, a.parallel, out);
  out << "sweep: " << g.rows.size() << " rows, " << s.executed << " runs executed, " << s.reused << " reused, "
      << s.failed << " failed; tables in " << g.out << "\n";
  return s.failed == 0 ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradCheckArgs {
  GradCheckSuite suite;
  std::string stencil = "richardson";
  std::string head = "crf";
  bool no_peepholes = false;
  double tol = 1e-4;
};

inline int cmd_gradcheck(GradCheckArgs& a, std::ostream& out) {
  GradCheckSuite s = a.suite;
  if (a.stencil == "richardson") s.stencil = FdStencil::Richardson;
  else if (a.stencil == "central") s.stencil = FdStencil::Central;
  else throw UsageError("--stencil must be 'richardson' or 'central'");
  try {
    s.head = parse_head(a.head);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  s.peepholes = !a.no_peepholes;
  if (s.dims.vocab < 1 || s.dims.emb_dim < 1 || s.dims.hidden < 1 || s.dims.tags < 1 || s.max_len < 1 || s.batch < 1 ||
      !(s.eps > 0.0)) {
    throw UsageError("gradcheck sizes and --eps must be positive");
  }
  const auto results = run_grad_check_suite(s);
  double worst = 0.0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const GradCheckResult& r = results[i];
    out << "seed " << s.first_seed + i << ": max rel error " << std::scientific << std::setprecision(3)
        << r.max_rel_error << " over " << r.checked << " params";
    if (r.max_rel_error > 0) out << " (worst " << r.worst_tensor << "[" << r.worst_index << "])";
    out << std::defaultfloat << "\n";
    worst = std::max(worst, r.max_rel_error);
  }
  const bool pass = worst < a.tol;
  out << "max relative error " << std::scientific << std::setprecision(3) << worst << " vs tolerance " << a.tol << ": "
      << (pass ? "PASS" : "FAIL") << std::defaultfloat << "\n";
  return pass ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------------------

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Quantization-aware Bi-LSTM(-CRF) sequence tagger", "qlstm"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train one configuration");
  train_cmd->add_option("--config", ta.config, "Config file (flags override it)")->check(CLI::ExistingFile);
  train_cmd->add_option("--out", ta.out, "Output directory")->required();
  train_cmd->add_flag("--quiet", ta.quiet, "No per-epoch progress");
  add_train_overrides(train_cmd, ta.overrides);
  ta.data.add(train_cmd);

  QuantizeArgs qa;
  auto* quant_cmd = app.add_subcommand("quantize", "Apply test-phase quantization to a trained checkpoint and evaluate");
  quant_cmd->add_option("--checkpoint", qa.checkpoint, "Trained checkpoint")->required()->check(CLI::ExistingFile);
  quant_cmd->add_option("--config", qa.config, "Config of the training run (default: config.resolved beside the checkpoint)")
      ->check(CLI::ExistingFile);
  quant_cmd->add_option("--gates", qa.gates, "Gate transforms to apply, e.g. \"BI, BF\" (empty: none)");
  quant_cmd->add_flag("--weights", qa.weights, "Also binarize U, V, W (alpha * sign)");
  quant_cmd->add_option("--split", qa.split, "Evaluation split: test | dev");
  quant_cmd->add_option("--out", qa.out, "Write quantized.ckpt, eval.json and config.resolved here");
  qa.overrides.add(quant_cmd, "--r", "quant.r", "Round & Clip step");
  qa.overrides.add(quant_cmd, "--c", "quant.c", "Round & Clip bound");
  qa.overrides.add_set(quant_cmd);
  qa.data.add(quant_cmd);

  SweepArgs sa;
  auto* sweep_cmd = app.add_subcommand("sweep", "Run a settings grid and emit table.csv / table.md");
  sweep_cmd->add_option("--grid", sa.grid, "Grid file")->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--out", sa.out, "Output directory (overrides grid.out)");
  sweep_cmd->add_flag("--resume", sa.resume, "Reuse finished runs found in the output directory");
  sweep_cmd->add_option("--parallel", sa.parallel, "Grid cells run concurrently");
  sa.overrides.add_set(sweep_cmd);
  sa.data.add(sweep_cmd);

  GradCheckArgs ga;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients on random tiny nets");
  gc_cmd->add_option("--seeds", ga.suite.seeds, "Number of random nets");
  gc_cmd->add_option("--first-seed", ga.suite.first_seed, "First seed");
  gc_cmd->add_option("--vocab", ga.suite.dims.vocab, "Vocabulary size");
  gc_cmd->add_option("--emb-dim", ga.suite.dims.emb_dim, "Embedding size");
  gc_cmd->add_option("--hidden", ga.suite.dims.hidden, "Hidden size");
  gc_cmd->add_option("--tags", ga.suite.dims.tags, "Tag count");
  gc_cmd->add_option("--max-len", ga.suite.max_len, "Maximum sentence length");
  gc_cmd->add_option("--batch", ga.suite.batch, "Sentences per check");
  gc_cmd->add_option("--eps", ga.suite.eps, "Finite-difference step");
  gc_cmd->add_option("--stencil", ga.stencil, "richardson | central");
  gc_cmd->add_option("--head", ga.head, "crf | softmax");
  gc_cmd->add_flag("--no-peepholes", ga.no_peepholes, "Disable peephole connections");
  gc_cmd->add_option("--tol", ga.tol, "Pass threshold on the max relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train_cmd) return cmd_train(ta, out);
    if (*quant_cmd) return cmd_quantize(qa, out);
    if (*sweep_cmd) return cmd_sweep(sa, out);
    if (*gc_cmd) return cmd_gradcheck(ga, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const SettingsError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const TrainAbort& e) {
    err << "training aborted: " << e.what() << "\n";
    return kExitFailure;
  } catch (const CheckpointError& e) {
    err << "checkpoint error (" << checkpoint_code_name(e.code()) << "): " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace qlstm

#endif  // QLSTM_CLI_HPP_
