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

#ifndef QLSTM_METRICS_HPP_
#define QLSTM_METRICS_HPP_

#include <cstddef>
#include <set>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace qlstm {

struct Chunk {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  std::string type;

  friend auto operator<=>(const Chunk&, const Chunk&) = default;
};

namespace detail {

inline std::pair<char, std::string> split_bio(const std::string& tag) {
  if (tag.size() >= 2 && (tag[0] == 'B' || tag[0] == 'I') && (tag[1] == '-' || tag[1] == '_'))
    return {tag[0], tag.substr(2)};
  return {'O', ""};
}

}  // namespace detail

/// BIO chunks. B-X opens a chunk; I-X extends an open X chunk and, as in
/// conlleval, opens one when nothing of type X is open; O and any
/// non-BIO tag close.
inline std::vector<Chunk> extract_chunks(const std::vector<std::string>& tags) {
  std::vector<Chunk> out;
  bool open = false;
  Chunk cur;
  for (std::size_t t = 0; t < tags.size(); ++t) {
    const auto [kind, type] = detail::split_bio(tags[t]);
    const bool extends = open && kind == 'I' && type == cur.type;
    if (!extends && open) {
      cur.end = t;
      out.push_back(cur);
      open = false;
    }
    if (!extends && kind != 'O') {
      cur = Chunk{t, t, type};
      open = true;
    }
  }
  if (open) {
    cur.end = tags.size();
    out.push_back(cur);
  }
  return out;
}

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  friend bool operator==(const Prf&, const Prf&) = default;
};

inline Prf prf(std::size_t correct, std::size_t predicted, std::size_t gold) {
  Prf r;
  r.precision = predicted ? static_cast<double>(correct) / static_cast<double>(predicted) : 0.0;
  r.recall = gold ? static_cast<double>(correct) / static_cast<double>(gold) : 0.0;
  const double s = r.precision + r.recall;
  r.f1 = s > 0.0 ? 2.0 * r.precision * r.recall / s : 0.0;
  return r;
}

/// Micro-averaged counts accumulated sentence by sentence.
struct ChunkCounts {
  std::size_t correct = 0;
  std::size_t predicted = 0;
  std::size_t gold = 0;

  void add(const std::vector<std::string>& gold_tags, const std::vector<std::string>& pred_tags) {
    if (gold_tags.size() != pred_tags.size()) {
      throw std::invalid_argument("chunk_f1: gold has " + std::to_string(gold_tags.size()) + " tags, prediction " +
                                  std::to_string(pred_tags.size()));
    }
    const auto g = extract_chunks(gold_tags);
    const auto p = extract_chunks(pred_tags);
    const std::set<Chunk> gs(g.begin(), g.end());
    for (const Chunk& c : p) correct += gs.count(c);
    predicted += p.size();
    gold += g.size();
  }
  Prf result() const { return prf(correct, predicted, gold); }
};

inline Prf chunk_f1(const std::vector<std::string>& gold, const std::vector<std::string>& pred) {
  ChunkCounts c;
  c.add(gold, pred);
  return c.result();
}

struct AccuracyCounts {
  std::size_t correct = 0;
  std::size_t total = 0;

  template <class T>
  void add(const std::vector<T>& gold, const std::vector<T>& pred) {
    if (gold.size() != pred.size()) throw std::invalid_argument("token_accuracy: length mismatch");
    for (std::size_t t = 0; t < gold.size(); ++t) correct += gold[t] == pred[t];
    total += gold.size();
  }
  double result() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

}  // namespace qlstm

#endif  // QLSTM_METRICS_HPP_
