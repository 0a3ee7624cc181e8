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

// Experiment configuration: sectioned `key = value` files. Every key has a
// setter and a printer in one table, so command-line overrides, file
// loading and the resolved dump cannot drift apart.

#ifndef QLSTM_CONFIG_HPP_
#define QLSTM_CONFIG_HPP_

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "qlstm/data_io.hpp"
#include "qlstm/train.hpp"

namespace qlstm {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class DataSource { Unset, Synthetic, Conll };

struct DataConfig {
  DataSource source = DataSource::Unset;
  std::string dir;
  CorpusOptions corpus;
  SynthConfig synth;
  std::optional<std::uint64_t> synth_seed;  // unset: follow the run seed
};

struct ExperimentConfig {
  TrainConfig train;  // `scheme` is filled from quant_r/quant_c by train_config()
  DataConfig data;
  // Kept apart from the scheme so r and c can be set in either order.
  double quant_r = 0.5;
  double quant_c = 1.0;

  std::uint64_t data_seed() const { return data.synth_seed.value_or(train.seed); }
  TrainConfig train_config() const;
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  T out{};
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw ConfigError(key + ": not a valid number: '" + raw + "'");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + raw + "'");
}

// Wraps library parse errors so every bad value surfaces as ConfigError.
template <typename F>
auto rethrow_as_config(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

}  // namespace detail

struct ConfigKey {
  const char* name;  // "section.key"
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

inline const std::vector<ConfigKey>& config_keys() {
  using detail::fmt_double;
  using detail::parse_bool;
  using detail::parse_number;
  using E = ExperimentConfig;
  using S = const std::string&;
#define QLSTM_SIZE(field, key)                                                            \
  ConfigKey {                                                                             \
    key, [](E& c, S v) { c.field = parse_number<std::size_t>(key, v); },                  \
        [](const E& c) { return std::to_string(c.field); }                                \
  }
#define QLSTM_INT(field, key)                                                             \
  ConfigKey {                                                                             \
    key, [](E& c, S v) { c.field = parse_number<int>(key, v); },                          \
        [](const E& c) { return std::to_string(c.field); }                                \
  }
#define QLSTM_DOUBLE(field, key)                                                          \
  ConfigKey {                                                                             \
    key, [](E& c, S v) { c.field = parse_number<double>(key, v); },                       \
        [](const E& c) { return fmt_double(c.field); }                                    \
  }
#define QLSTM_BOOL(field, key)                                                            \
  ConfigKey {                                                                             \
    key, [](E& c, S v) { c.field = parse_bool(key, v); },                                 \
        [](const E& c) { return std::string(c.field ? "true" : "false"); }                \
  }
  static const std::vector<ConfigKey> keys = {
      {"run.settings", [](E& c, S v) { c.train.settings = detail::trim(v); },
       [](const E& c) { return c.train.settings; }},
      {"run.seed", [](E& c, S v) { c.train.seed = parse_number<std::uint64_t>("run.seed", v); },
       [](const E& c) { return std::to_string(c.train.seed); }},
      QLSTM_DOUBLE(quant_r, "quant.r"),
      QLSTM_DOUBLE(quant_c, "quant.c"),
      QLSTM_DOUBLE(train.gumbel_eps, "gumbel.epsilon"),
      QLSTM_INT(train.max_epochs, "train.max_epochs"),
      QLSTM_INT(train.patience, "train.patience"),
      QLSTM_SIZE(train.batch_size, "train.batch_size"),
      {"train.ste", [](E& c, S v) { c.train.ste = detail::rethrow_as_config("train.ste", [&] { return parse_ste(detail::trim(v)); }); },
       [](const E& c) { return std::string(ste_name(c.train.ste)); }},
      {"train.head",
       [](E& c, S v) { c.train.head = detail::rethrow_as_config("train.head", [&] { return parse_head(detail::trim(v)); }); },
       [](const E& c) { return std::string(head_name(c.train.head)); }},
      {"train.metric",
       [](E& c, S v) {
         c.train.metric = detail::rethrow_as_config("train.metric", [&] { return parse_metric(detail::trim(v)); });
       },
       [](const E& c) { return std::string(metric_name(c.train.metric)); }},
      QLSTM_SIZE(train.emb_dim, "model.emb_dim"),
      QLSTM_SIZE(train.hidden, "model.hidden"),
      QLSTM_BOOL(train.peepholes, "model.peepholes"),
      {"model.embeddings", [](E& c, S v) { c.train.embeddings = detail::trim(v); },
       [](const E& c) { return c.train.embeddings; }},
      {"optim.kind",
       [](E& c, S v) {
         c.train.opt.kind = detail::rethrow_as_config("optim.kind", [&] { return parse_optimizer(detail::trim(v)); });
       },
       [](const E& c) { return std::string(optimizer_name(c.train.opt.kind)); }},
      QLSTM_DOUBLE(train.opt.lr, "optim.lr"),
      QLSTM_DOUBLE(train.opt.momentum, "optim.momentum"),
      QLSTM_DOUBLE(train.opt.beta1, "optim.beta1"),
      QLSTM_DOUBLE(train.opt.beta2, "optim.beta2"),
      QLSTM_DOUBLE(train.opt.eps, "optim.eps"),
      QLSTM_DOUBLE(train.opt.clip_norm, "optim.clip_norm"),
      {"data.source",
       [](E& c, S raw) {
         const std::string v = detail::trim(raw);
         if (v == "synthetic") c.data.source = DataSource::Synthetic;
         else if (v == "conll") c.data.source = DataSource::Conll;
         else if (v.empty()) c.data.source = DataSource::Unset;
         else throw ConfigError("data.source: expected 'synthetic' or 'conll', got '" + raw + "'");
       },
       [](const E& c) {
         return std::string(c.data.source == DataSource::Synthetic ? "synthetic"
                            : c.data.source == DataSource::Conll   ? "conll"
                                                                   : "");
       }},
      {"data.dir", [](E& c, S v) { c.data.dir = detail::trim(v); }, [](const E& c) { return c.data.dir; }},
      QLSTM_INT(data.corpus.token_col, "data.token_col"),
      QLSTM_INT(data.corpus.tag_col, "data.tag_col"),
      QLSTM_SIZE(data.corpus.min_count, "data.min_count"),
      QLSTM_BOOL(data.corpus.lowercase, "data.lowercase"),
      {"synthetic.seed",
       [](E& c, S v) {
         if (detail::trim(v).empty()) c.data.synth_seed.reset();
         else c.data.synth_seed = parse_number<std::uint64_t>("synthetic.seed", v);
       },
       [](const E& c) { return std::to_string(c.data_seed()); }},
      QLSTM_SIZE(data.synth.n_train, "synthetic.n_train"),
      QLSTM_SIZE(data.synth.n_dev, "synthetic.n_dev"),
      QLSTM_SIZE(data.synth.n_test, "synthetic.n_test"),
      QLSTM_SIZE(data.synth.min_len, "synthetic.min_len"),
      QLSTM_SIZE(data.synth.max_len, "synthetic.max_len"),
      QLSTM_SIZE(data.synth.alphabet, "synthetic.alphabet"),
      QLSTM_SIZE(data.synth.trigger_distance, "synthetic.trigger_distance"),
      QLSTM_DOUBLE(data.synth.p_trigger, "synthetic.p_trigger"),
      QLSTM_DOUBLE(data.synth.p_reset, "synthetic.p_reset"),
  };
#undef QLSTM_SIZE
#undef QLSTM_INT
#undef QLSTM_DOUBLE
#undef QLSTM_BOOL
  return keys;
}

inline void set_config_value(ExperimentConfig& c, const std::string& key, const std::string& value) {
  for (const ConfigKey& k : config_keys()) {
    if (key == k.name) {
      k.set(c, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

inline std::string get_config_value(const ExperimentConfig& c, const std::string& key) {
  for (const ConfigKey& k : config_keys())
    if (key == k.name) return k.get(c);
  throw ConfigError("unknown config key '" + key + "'");
}

/// Applies every `section.key` of `tree` except those in sections listed in
/// `skip_sections` (the sweep grid reuses this for its shared keys).
inline void apply_config_tree(ExperimentConfig& c, const boost::property_tree::ptree& tree,
                              const std::vector<std::string>& skip_sections = {}) {
  for (const auto& [section, body] : tree) {
    if (std::find(skip_sections.begin(), skip_sections.end(), section) != skip_sections.end()) continue;
    if (body.empty()) throw ConfigError("config key '" + section + "' must be inside a [section]");
    for (const auto& [key, value] : body) set_config_value(c, section + "." + key, value.data());
  }
}

inline boost::property_tree::ptree read_ini_file(const std::filesystem::path& path) {
  std::ifstream file(path);
  if (!file) throw ConfigError("cannot open config file " + path.string());
  // Inline comments: whitespace followed by ';' ends the value.
  std::ostringstream cleaned;
  for (std::string line; std::getline(file, line);) {
    std::size_t at = std::string::npos;
    for (std::size_t k = 1; k < line.size() && at == std::string::npos; ++k)
      if (line[k] == ';' && (line[k - 1] == ' ' || line[k - 1] == '\t')) at = k;
    cleaned << line.substr(0, at) << '\n';
  }
  std::istringstream in(cleaned.str());
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(path.string() + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  return tree;
}

inline void load_config_file(ExperimentConfig& c, const std::filesystem::path& path) {
  apply_config_tree(c, read_ini_file(path));
}

/// Every key with its effective value, grouped by section in table order.
inline std::string resolved_config_text(const ExperimentConfig& c) {
  std::ostringstream os;
  std::string section;
  for (const ConfigKey& k : config_keys()) {
    const std::string name = k.name;
    const std::string sec = name.substr(0, name.find('.'));
    if (sec != section) {
      os << (section.empty() ? "" : "\n") << '[' << sec << "]\n";
      section = sec;
    }
    os << name.substr(sec.size() + 1) << " = " << k.get(c) << '\n';
  }
  return os.str();
}

inline TrainConfig ExperimentConfig::train_config() const {
  TrainConfig t = train;
  t.scheme = detail::rethrow_as_config("quant", [&] { return RoundClipScheme(quant_r, quant_c); });
  return t;
}

inline void validate_experiment(const ExperimentConfig& c) {
  detail::rethrow_as_config("config", [&] {
    c.train_config().validate();
    if (c.data.source == DataSource::Synthetic) c.data.synth.validate();
    return 0;
  });
  if (c.data.source == DataSource::Unset) throw ConfigError("no data source: set data.source (or pass --data / --synthetic)");
  if (c.data.source == DataSource::Conll && c.data.dir.empty()) throw ConfigError("data.source = conll needs data.dir");
}

inline Dataset load_dataset(const ExperimentConfig& c) {
  validate_experiment(c);
  if (c.data.source == DataSource::Synthetic) return synth_task(c.data_seed(), c.data.synth);
  return load_corpus(c.data.dir, c.data.corpus);
}

}  // namespace qlstm

#endif  // QLSTM_CONFIG_HPP_
