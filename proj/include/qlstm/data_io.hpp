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

// Corpus ingestion: CoNLL column files, vocabularies, the synthetic
// delayed-trigger task, and deterministic batching.

#ifndef QLSTM_DATA_IO_HPP_
#define QLSTM_DATA_IO_HPP_

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "qlstm/num_core.hpp"
#include "qlstm/random.hpp"

namespace qlstm {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RawSentence {
  std::vector<std::string> tokens;
  std::vector<std::string> tags;

  friend bool operator==(const RawSentence&, const RawSentence&) = default;
};

struct LabeledSequence {
  std::vector<int> tokens;
  std::vector<int> tags;

  friend bool operator==(const LabeledSequence&, const LabeledSequence&) = default;
};

/// Tag column -1 means "last column on the line".
inline constexpr int kLastColumn = -1;

inline std::vector<RawSentence> parse_conll(std::istream& in, const std::string& source = "<stream>",
                                            int token_col = 0, int tag_col = kLastColumn) {
  std::vector<RawSentence> out;
  RawSentence cur;
  std::string line;
  std::size_t lineno = 0;
  auto flush = [&] {
    if (!cur.tokens.empty()) out.push_back(std::move(cur));
    cur = RawSentence{};
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::vector<std::string> cols;
    for (std::string w; ss >> w;) cols.push_back(std::move(w));
    if (cols.empty()) {
      flush();
      continue;
    }
    if (cols.front().front() == '#') continue;
    const auto need = static_cast<std::size_t>(std::max(token_col, tag_col)) + 1;
    if (cols.size() < 2 || cols.size() < need) {
      throw DataError(source + ":" + std::to_string(lineno) + ": expected token and tag columns, found " +
                      std::to_string(cols.size()) + " column(s)");
    }
    cur.tokens.push_back(cols[static_cast<std::size_t>(token_col)]);
    cur.tags.push_back(tag_col == kLastColumn ? cols.back() : cols[static_cast<std::size_t>(tag_col)]);
  }
  flush();
  return out;
}

inline std::vector<RawSentence> read_conll(const std::filesystem::path& path, int token_col = 0,
                                           int tag_col = kLastColumn) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return parse_conll(in, path.string(), token_col, tag_col);
}

/// String <-> id map. Token vocabularies reserve id 0 for the unknown word.
class Vocab {
 public:
  static constexpr int kUnk = 0;
  static constexpr const char* kUnkWord = "<unk>";

  explicit Vocab(bool with_unk = true) : with_unk_(with_unk) {
    if (with_unk_) add(kUnkWord);
  }

  int add(const std::string& w) {
    auto [it, inserted] = index_.emplace(w, static_cast<int>(words_.size()));
    if (inserted) words_.push_back(w);
    return it->second;
  }

  /// -1 when absent.
  int find(const std::string& w) const {
    auto it = index_.find(w);
    return it == index_.end() ? -1 : it->second;
  }

  int encode(const std::string& w) const {
    const int id = find(w);
    if (id >= 0) return id;
    if (with_unk_) return kUnk;
    throw DataError("unknown label '" + w + "'");
  }

  const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return words_.size(); }
  bool has_unk() const { return with_unk_; }
  const std::vector<std::string>& words() const { return words_; }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.words_ == b.words_ && a.with_unk_ == b.with_unk_; }

 private:
  bool with_unk_;
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

namespace detail {

// Ids by (count desc, lexicographic).
inline void fill_by_frequency(Vocab& v, const std::map<std::string, std::size_t>& counts, std::size_t min_count) {
  std::vector<std::pair<std::string, std::size_t>> items(counts.begin(), counts.end());
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  for (const auto& [w, n] : items)
    if (n >= min_count) v.add(w);
}

}  // namespace detail

struct Vocabs {
  Vocab tokens{true};
  Vocab tags{false};
};

/// Tokens seen fewer than `min_count` times fall back to UNK. Tags are
/// never dropped; `extra_tag_sources` lets dev/test contribute labels the
/// training split never uses.
inline Vocabs build_vocab(const std::vector<RawSentence>& train, std::size_t min_count = 1,
                          const std::vector<const std::vector<RawSentence>*>& extra_tag_sources = {},
                          bool lowercase = false) {
  if (train.empty()) throw DataError("build_vocab: empty training split");
  std::map<std::string, std::size_t> tok_counts, tag_counts;
  for (const RawSentence& s : train) {
    for (std::string t : s.tokens) {
      if (lowercase) std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
      ++tok_counts[t];
    }
    for (const std::string& t : s.tags) ++tag_counts[t];
  }
  for (const auto* src : extra_tag_sources)
    for (const RawSentence& s : *src)
      for (const std::string& t : s.tags) tag_counts.try_emplace(t, 0);
  Vocabs v;
  tok_counts.erase(Vocab::kUnkWord);
  detail::fill_by_frequency(v.tokens, tok_counts, min_count);
  detail::fill_by_frequency(v.tags, tag_counts, 0);
  return v;
}

inline LabeledSequence encode(const RawSentence& s, const Vocabs& v, bool lowercase = false) {
  LabeledSequence out;
  for (std::string t : s.tokens) {
    if (lowercase) std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
    out.tokens.push_back(v.tokens.encode(t));
  }
  for (const std::string& t : s.tags) out.tags.push_back(v.tags.encode(t));
  return out;
}

inline RawSentence decode(const LabeledSequence& s, const Vocabs& v) {
  RawSentence out;
  for (int t : s.tokens) out.tokens.push_back(v.tokens.word(t));
  for (int t : s.tags) out.tags.push_back(v.tags.word(t));
  return out;
}

struct Dataset {
  Vocabs vocab;
  std::vector<LabeledSequence> train, dev, test;
};

inline std::vector<LabeledSequence> encode_all(const std::vector<RawSentence>& raw, const Vocabs& v,
                                               bool lowercase = false) {
  std::vector<LabeledSequence> out;
  out.reserve(raw.size());
  for (const RawSentence& s : raw) out.push_back(encode(s, v, lowercase));
  return out;
}

struct CorpusOptions {
  int token_col = 0;
  int tag_col = kLastColumn;
  std::size_t min_count = 1;
  bool lowercase = false;
};

/// Reads train.txt, dev.txt and test.txt from `dir`.
inline Dataset load_corpus(const std::filesystem::path& dir, const CorpusOptions& o = {}) {
  const auto train = read_conll(dir / "train.txt", o.token_col, o.tag_col);
  const auto dev = read_conll(dir / "dev.txt", o.token_col, o.tag_col);
  const auto test = read_conll(dir / "test.txt", o.token_col, o.tag_col);
  Dataset d;
  d.vocab = build_vocab(train, o.min_count, {&dev, &test}, o.lowercase);
  d.train = encode_all(train, d.vocab, o.lowercase);
  d.dev = encode_all(dev, d.vocab, o.lowercase);
  d.test = encode_all(test, d.vocab, o.lowercase);
  return d;
}

/// Text embeddings ("word v1 v2 ..."): fills rows of known tokens and
/// returns how many were filled. Unknown words are skipped.
inline std::size_t load_embeddings(const std::filesystem::path& path, const Vocab& tokens, Mat& embedding) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0, filled = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string w;
    if (!(ss >> w)) continue;
    Vec vals;
    for (double x; ss >> x;) vals.push_back(x);
    if (!ss.eof()) throw DataError(path.string() + ":" + std::to_string(lineno) + ": non-numeric value");
    // A leading "count dim" header line, as written by word2vec.
    if (lineno == 1 && vals.size() == 1) continue;
    if (vals.size() != embedding.cols) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(embedding.cols) +
                      " values, found " + std::to_string(vals.size()));
    }
    const int id = tokens.find(w);
    if (id < 0 || id == Vocab::kUnk) continue;
    std::copy(vals.begin(), vals.end(), embedding.row(static_cast<std::size_t>(id)).begin());
    ++filled;
  }
  return filled;
}

// ---------------------------------------------------------------------------
// Delayed-trigger task. TRIG schedules a span that opens on the d-th symbol
// after it (d = trigger_distance) and runs until RESET or the next TRIG.
// Tagging needs a step count carried from the trigger plus a flag carried
// for the rest of the span.

inline constexpr const char* kTrigger = "TRIG";
inline constexpr const char* kReset = "RESET";
inline constexpr const char* kTagO = "O";
inline constexpr const char* kTagB = "B-SPAN";
inline constexpr const char* kTagI = "I-SPAN";

struct SynthConfig {
  std::size_t n_train = 2000;
  std::size_t n_dev = 500;
  std::size_t n_test = 500;
  std::size_t min_len = 8;
  std::size_t max_len = 24;
  std::size_t alphabet = 10;
  // The span opens on the trigger_distance-th symbol after TRIG.
  std::size_t trigger_distance = 5;
  double p_trigger = 0.08;
  double p_reset = 0.15;

  void validate() const {
    if (n_train < 1 || n_dev < 1 || n_test < 1) throw std::invalid_argument("synthetic split sizes must be >= 1");
    if (min_len < 1 || max_len < min_len) throw std::invalid_argument("synthetic lengths need 1 <= min <= max");
    if (alphabet < 1) throw std::invalid_argument("synthetic alphabet must be >= 1");
    if (trigger_distance < 1) throw std::invalid_argument("synthetic trigger_distance must be >= 1");
    for (double p : {p_trigger, p_reset})
      if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("synthetic probabilities must lie in [0, 1]");
  }
};

/// Pure labeling function of the symbol sequence.
inline std::vector<std::string> synth_labels(const std::vector<std::string>& symbols, std::size_t distance) {
  std::vector<std::string> tags;
  tags.reserve(symbols.size());
  std::size_t wait = 0;  // symbols left until a scheduled span opens
  bool active = false;
  for (const std::string& s : symbols) {
    if (s == kTrigger || s == kReset) {
      wait = s == kTrigger ? distance : 0;
      active = false;
      tags.emplace_back(kTagO);
    } else if (wait > 0 && --wait == 0) {
      active = true;
      tags.emplace_back(kTagB);
    } else {
      tags.emplace_back(active ? kTagI : kTagO);
    }
  }
  return tags;
}

inline std::vector<std::string> synth_symbols(const SynthConfig& cfg, Rng& rng) {
  const std::size_t n = cfg.min_len + rng.below(cfg.max_len - cfg.min_len + 1);
  std::vector<std::string> out;
  out.reserve(n);
  enum { Idle, Waiting, Active } state = Idle;
  std::size_t wait = 0;
  auto letter = [&] { return "a" + std::to_string(rng.below(cfg.alphabet)); };
  for (std::size_t t = 0; t < n; ++t) {
    const double u = rng.uniform();
    if (state == Waiting) {
      out.push_back(letter());
      if (--wait == 0) state = Active;
    } else if (u < (state == Idle ? cfg.p_trigger : cfg.p_trigger / 2.0)) {
      out.emplace_back(kTrigger);
      state = Waiting;
      wait = cfg.trigger_distance;
    } else if (u < cfg.p_trigger + (state == Idle ? cfg.p_reset / 3.0 : cfg.p_reset)) {
      out.emplace_back(kReset);  // a no-op outside a span
      state = Idle;
    } else {
      out.push_back(letter());
    }
  }
  return out;
}

/// Deterministic in `seed`. Sentences are unique across all three splits.
inline Dataset synth_task(std::uint64_t seed, const SynthConfig& cfg = {}) {
  cfg.validate();
  Rng rng = Rng::derive(seed, {0x5e7});
  std::unordered_set<std::string> seen;
  auto draw = [&](std::size_t count) {
    std::vector<RawSentence> split;
    std::size_t attempts = 0;
    while (split.size() < count) {
      if (++attempts > 100 * count + 1000) throw DataError("synthetic task: too few distinct sentences for config");
      RawSentence s;
      s.tokens = synth_symbols(cfg, rng);
      std::string key;
      for (const std::string& w : s.tokens) key += w + ' ';
      if (!seen.insert(key).second) continue;
      s.tags = synth_labels(s.tokens, cfg.trigger_distance);
      split.push_back(std::move(s));
    }
    return split;
  };
  const auto train = draw(cfg.n_train);
  const auto dev = draw(cfg.n_dev);
  const auto test = draw(cfg.n_test);
  Dataset d;
  // Fixed vocabulary so ids do not depend on sampled counts.
  for (std::size_t a = 0; a < cfg.alphabet; ++a) d.vocab.tokens.add("a" + std::to_string(a));
  d.vocab.tokens.add(kTrigger);
  d.vocab.tokens.add(kReset);
  for (const char* t : {kTagO, kTagB, kTagI}) d.vocab.tags.add(t);
  d.train = encode_all(train, d.vocab);
  d.dev = encode_all(dev, d.vocab);
  d.test = encode_all(test, d.vocab);
  return d;
}

/// Index batches for one epoch, shuffled by (shuffle_seed, epoch).
inline std::vector<std::vector<std::size_t>> batch_iter(std::size_t n, std::size_t batch_size,
                                                        std::uint64_t shuffle_seed, std::uint64_t epoch) {
  if (n == 0) throw std::invalid_argument("batch_iter: empty split");
  if (batch_size == 0) throw std::invalid_argument("batch_iter: batch_size must be >= 1");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = Rng::derive(shuffle_seed, {0xba7c, epoch});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  return out;
}

}  // namespace qlstm

#endif  // QLSTM_DATA_IO_HPP_
