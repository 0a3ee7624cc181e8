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

// Settings strings name an experiment: comma-separated tokens where G marks
// a Gumbel gate, B a Round & Clip gate (I/F/O picks the gate), B(UVW) adds
// binary weights and NEW moves the quantizers into training.

#ifndef QLSTM_SETTINGS_HPP_
#define QLSTM_SETTINGS_HPP_

#include <algorithm>
#include <cctype>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "qlstm/lstm_net.hpp"

namespace qlstm {

inline constexpr std::string_view kSettingsTokens[] = {"GI", "GF", "GO", "BI", "BF", "BO", "B(UVW)", "NEW"};

class SettingsError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunSettings {
  GateMode mode;
  // Binary weights on U, W, V: evaluation only, or also in training (NEW).
  bool binary_weights = false;
  std::vector<std::string> tokens;  // canonical, in input order

  bool binary_weights_in_training() const { return binary_weights && mode.apply_phase == ApplyPhase::TrainAndTest; }
  /// Canonical label, e.g. "BI, BF, NEW"; empty for the baseline.
  std::string label() const {
    std::string out;
    for (const std::string& t : tokens) out += (out.empty() ? "" : ", ") + t;
    return out;
  }
};

inline std::string valid_settings_tokens() {
  std::string out;
  for (std::string_view t : kSettingsTokens) out += (out.empty() ? "" : ", ") + std::string(t);
  return out;
}

/// Scheme and Gumbel temperature are carried separately; this only decides
/// which transforms run where.
inline RunSettings parse_settings(std::string_view s, const RoundClipScheme& scheme = {},
                                  const GumbelCfg& gumbel = {}) {
  RunSettings out;
  out.mode.scheme = scheme;
  out.mode.gumbel = gumbel;
  bool any_b = false, is_new = false;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t comma = std::min(s.find(',', start), s.size());
    std::string tok;
    for (char ch : s.substr(start, comma - start))
      if (!std::isspace(static_cast<unsigned char>(ch))) tok += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    start = comma + 1;
    if (tok.empty()) {
      if (comma < s.size()) throw SettingsError("settings: empty token in '" + std::string(s) + "'");
      continue;
    }
    if (tok == "BI-LSTM-CRF" || tok == "BASELINE") continue;
    if (std::find(out.tokens.begin(), out.tokens.end(), tok) != out.tokens.end()) continue;
    GateTransform* gate = nullptr;
    bool gumbel_tok = false;
    if (tok.size() == 2 && (tok[0] == 'G' || tok[0] == 'B')) {
      gumbel_tok = tok[0] == 'G';
      if (tok[1] == 'I') gate = &out.mode.input;
      if (tok[1] == 'F') gate = &out.mode.forget;
      if (tok[1] == 'O') gate = &out.mode.output;
    }
    if (gate) {
      (gumbel_tok ? gate->gumbel : gate->round_clip) = true;
      any_b |= !gumbel_tok;
      if (tok[1] == 'O') out.mode.allow_output_transform = true;
    } else if (tok == "B(UVW)") {
      out.binary_weights = true;
    } else if (tok == "NEW") {
      is_new = true;
    } else {
      throw SettingsError("settings: unknown token '" + tok + "' (valid: " + valid_settings_tokens() + ")");
    }
    out.tokens.push_back(tok);
  }
  if (is_new && !any_b && !out.binary_weights) {
    throw SettingsError("settings: NEW needs a Round & Clip gate (BI, BF, BO) or B(UVW) to move into training");
  }
  out.mode.apply_phase = is_new ? ApplyPhase::TrainAndTest : ApplyPhase::TestOnly;
  out.mode.validate();
  return out;
}

}  // namespace qlstm

#endif  // QLSTM_SETTINGS_HPP_
