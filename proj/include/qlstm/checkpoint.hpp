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

// Binary checkpoint layout (all integers and doubles little-endian):
//
//   "QLSTMCKP"  u32 version  u64 total_bytes
//   u64 vocab, emb_dim, hidden, tags   u8 peepholes   u8 head
//   u32 tensor count, then per tensor:
//     u16 name length, name bytes, u64 rows, u64 cols, u64 data offset
//   u64 data bytes, tensor data as f64 in manifest order
//   u64 FNV-1a hash of every preceding byte

#ifndef QLSTM_CHECKPOINT_HPP_
#define QLSTM_CHECKPOINT_HPP_

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "qlstm/model.hpp"

namespace qlstm {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::string_view kCheckpointMagic = "QLSTMCKP";

class CheckpointError : public std::runtime_error {
 public:
  enum class Code { Io, BadMagic, VersionMismatch, Truncated, ChecksumMismatch, ShapeMismatch };

  CheckpointError(Code c, const std::string& msg) : std::runtime_error(msg), code_(c) {}
  Code code() const { return code_; }

 private:
  Code code_;
};

inline const char* checkpoint_code_name(CheckpointError::Code c) {
  switch (c) {
    case CheckpointError::Code::Io: return "io";
    case CheckpointError::Code::BadMagic: return "bad-magic";
    case CheckpointError::Code::VersionMismatch: return "version-mismatch";
    case CheckpointError::Code::Truncated: return "truncated";
    case CheckpointError::Code::ChecksumMismatch: return "checksum-mismatch";
    case CheckpointError::Code::ShapeMismatch: return "shape-mismatch";
  }
  return "?";
}

struct Checkpoint {
  Model model;
  HeadKind head = HeadKind::Crf;
};

namespace detail {

inline std::uint64_t fnv1a(const unsigned char* p, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

class ByteWriter {
 public:
  template <class T>
  void put(T v) {
    const auto u = static_cast<std::uint64_t>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) buf.push_back(static_cast<unsigned char>(u >> (8 * i)));
  }
  void put_f64(double d) { put(std::bit_cast<std::uint64_t>(d)); }
  void put_bytes(std::string_view s) { buf.insert(buf.end(), s.begin(), s.end()); }
  void patch_u64(std::size_t at, std::uint64_t v) {
    for (std::size_t i = 0; i < 8; ++i) buf[at + i] = static_cast<unsigned char>(v >> (8 * i));
  }
  std::vector<unsigned char> buf;
};

class ByteReader {
 public:
  ByteReader(const std::vector<unsigned char>& b, std::size_t limit) : buf_(b), limit_(limit) {}

  template <class T>
  T get() {
    need(sizeof(T));
    std::uint64_t u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<std::uint64_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }
  double get_f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (n > limit_ || pos_ > limit_ - n)
      throw CheckpointError(CheckpointError::Code::Truncated, "checkpoint: unexpected end of data");
  }
  const std::vector<unsigned char>& buf_;
  std::size_t limit_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<unsigned char> checkpoint_bytes(const Model& m, HeadKind head = HeadKind::Crf) {
  detail::ByteWriter w;
  w.put_bytes(kCheckpointMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  const std::size_t total_at = w.buf.size();
  w.put<std::uint64_t>(0);
  w.put<std::uint64_t>(m.dims.vocab);
  w.put<std::uint64_t>(m.dims.emb_dim);
  w.put<std::uint64_t>(m.dims.hidden);
  w.put<std::uint64_t>(m.dims.tags);
  w.put<std::uint8_t>(m.lstm.peepholes ? 1 : 0);
  w.put<std::uint8_t>(head == HeadKind::Crf ? 0 : 1);
  const auto ts = tensors(m);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ts.size()));
  std::uint64_t offset = 0;
  for (const auto& t : ts) {
    w.put<std::uint16_t>(static_cast<std::uint16_t>(t.name.size()));
    w.put_bytes(t.name);
    w.put<std::uint64_t>(t.rows);
    w.put<std::uint64_t>(t.cols);
    w.put<std::uint64_t>(offset);
    offset += 8 * t.data.size();
  }
  w.put<std::uint64_t>(offset);
  for (const auto& t : ts)
    for (double d : t.data) w.put_f64(d);
  w.patch_u64(total_at, w.buf.size() + 8);
  w.put<std::uint64_t>(detail::fnv1a(w.buf.data(), w.buf.size()));
  return w.buf;
}

/// Parses a checkpoint image. Nothing is returned unless every check passes.
inline Checkpoint parse_checkpoint(const std::vector<unsigned char>& b) {
  using Code = CheckpointError::Code;
  if (b.size() < kCheckpointMagic.size() ||
      std::memcmp(b.data(), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0) {
    throw CheckpointError(b.size() < kCheckpointMagic.size() ? Code::Truncated : Code::BadMagic,
                          "checkpoint: missing QLSTMCKP header");
  }
  detail::ByteReader hdr(b, b.size());
  hdr.get_bytes(kCheckpointMagic.size());
  const auto version = hdr.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError(Code::VersionMismatch, "checkpoint: version " + std::to_string(version) +
                                                     ", this build reads version " +
                                                     std::to_string(kCheckpointVersion));
  }
  const auto total = hdr.get<std::uint64_t>();
  if (b.size() < total) {
    throw CheckpointError(Code::Truncated, "checkpoint: " + std::to_string(b.size()) + " bytes, header declares " +
                                               std::to_string(total));
  }
  if (b.size() > total || total < 8) {
    throw CheckpointError(Code::ChecksumMismatch, "checkpoint: trailing bytes after declared end");
  }
  std::uint64_t stored = 0;
  for (std::size_t i = 0; i < 8; ++i) stored |= static_cast<std::uint64_t>(b[total - 8 + i]) << (8 * i);
  if (stored != detail::fnv1a(b.data(), total - 8)) {
    throw CheckpointError(Code::ChecksumMismatch, "checkpoint: checksum mismatch (file corrupted)");
  }

  detail::ByteReader r(b, total - 8);
  r.get_bytes(kCheckpointMagic.size() + 4 + 8);
  Dims d;
  d.vocab = r.get<std::uint64_t>();
  d.emb_dim = r.get<std::uint64_t>();
  d.hidden = r.get<std::uint64_t>();
  d.tags = r.get<std::uint64_t>();
  const bool peepholes = r.get<std::uint8_t>() != 0;
  const auto head_byte = r.get<std::uint8_t>();
  // Guard against absurd sizes before allocating.
  const std::uint64_t cap = b.size();
  for (std::uint64_t x : {d.vocab * d.emb_dim, d.hidden * d.hidden, d.tags * d.hidden}) {
    if (x / 8 > cap) throw CheckpointError(Code::ShapeMismatch, "checkpoint: dimensions exceed file size");
  }
  Checkpoint ck;
  ck.head = head_byte == 0 ? HeadKind::Crf : HeadKind::Softmax;
  try {
    check_dims(d);
  } catch (const std::exception& e) {
    throw CheckpointError(Code::ShapeMismatch, std::string("checkpoint: ") + e.what());
  }
  ck.model = zeros_like(init_model(d, 0, peepholes));
  auto ts = tensors(ck.model);
  const auto count = r.get<std::uint32_t>();
  if (count != ts.size()) {
    throw CheckpointError(Code::ShapeMismatch, "checkpoint: " + std::to_string(count) + " tensors, expected " +
                                                   std::to_string(ts.size()));
  }
  std::uint64_t expect_offset = 0;
  for (const auto& t : ts) {
    const std::string name = r.get_bytes(r.get<std::uint16_t>());
    const auto rows = r.get<std::uint64_t>();
    const auto cols = r.get<std::uint64_t>();
    const auto off = r.get<std::uint64_t>();
    if (name != t.name || rows != t.rows || cols != t.cols || off != expect_offset) {
      throw CheckpointError(Code::ShapeMismatch, "checkpoint: tensor '" + name + "' " + shape_str(rows, cols) +
                                                     " does not match expected '" + t.name + "' " +
                                                     shape_str(t.rows, t.cols));
    }
    expect_offset += 8 * t.data.size();
  }
  if (r.get<std::uint64_t>() != expect_offset) {
    throw CheckpointError(Code::ShapeMismatch, "checkpoint: data size does not match manifest");
  }
  for (auto& t : ts)
    for (double& x : t.data) x = r.get_f64();
  if (r.pos() != total - 8) throw CheckpointError(Code::ShapeMismatch, "checkpoint: unexpected bytes after data");
  return ck;
}

/// Writes via a temporary file and rename so readers never see a partial file.
inline void save_checkpoint(const std::filesystem::path& path, const Model& m, HeadKind head = HeadKind::Crf) {
  const auto bytes = checkpoint_bytes(m, head);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(CheckpointError::Code::Io, "checkpoint: cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError(CheckpointError::Code::Io, "checkpoint: write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError(CheckpointError::Code::Io, "checkpoint: rename failed: " + ec.message());
}

/// `expect` (when given) must match the stored dimensions.
inline Checkpoint load_checkpoint(const std::filesystem::path& path, const Dims* expect = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Code::Io, "checkpoint: cannot open " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Checkpoint ck = parse_checkpoint(bytes);
  if (expect != nullptr && !(ck.model.dims == *expect)) {
    throw CheckpointError(CheckpointError::Code::ShapeMismatch,
                          "checkpoint: stored dims (vocab " + std::to_string(ck.model.dims.vocab) + ", emb " +
                              std::to_string(ck.model.dims.emb_dim) + ", hidden " +
                              std::to_string(ck.model.dims.hidden) + ", tags " + std::to_string(ck.model.dims.tags) +
                              ") differ from the requested model");
  }
  return ck;
}

}  // namespace qlstm

#endif  // QLSTM_CHECKPOINT_HPP_
