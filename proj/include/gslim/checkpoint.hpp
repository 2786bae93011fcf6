// Copyright 2026 The gslim Authors.
// SPDX-License-Identifier: Apache-2.0

// Checksummed container of named texts and tensors.
//
//   "GSLIMCK1" | u32 version | u32 n_texts | (str name, str body)* |
//   u32 n_tensors | (str name, u8 role, i32 layer, u32 rank, u64 dims[rank],
//   f32 data[numel])* | sha256 of all preceding bytes (32 bytes)

#pragma once

#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gslim/arch.hpp"
#include "gslim/bytes.hpp"
#include "gslim/error.hpp"
#include "gslim/params.hpp"

namespace gslim {

inline std::array<std::uint8_t, 32> sha256(const void* data, std::size_t n) {
  std::array<std::uint8_t, 32> out{};
  unsigned int len = 0;
  if (EVP_Digest(data, n, out.data(), &len, EVP_sha256(), nullptr) != 1 || len != 32)
    throw Error("sha256 failed");
  return out;
}

inline std::string to_hex(const std::uint8_t* p, std::size_t n) {
  static const char* kDigits = "0123456789abcdef";
  std::string s(2 * n, '0');
  for (std::size_t i = 0; i < n; ++i) {
    s[2 * i] = kDigits[p[i] >> 4];
    s[2 * i + 1] = kDigits[p[i] & 15];
  }
  return s;
}

inline std::string sha256_hex(const void* data, std::size_t n) {
  auto h = sha256(data, n);
  return to_hex(h.data(), h.size());
}

inline std::string sha256_hex(const std::string& s) { return sha256_hex(s.data(), s.size()); }

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return buf;
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

inline void write_file_text(const std::filesystem::path& path, const std::string& text) {
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

inline std::string read_file_text(const std::filesystem::path& path) {
  auto b = read_file_bytes(path);
  return std::string(b.begin(), b.end());
}

struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> texts;
  ParamSet<float> tensors;

  std::optional<std::string> text(const std::string& name) const {
    for (const auto& [k, v] : texts)
      if (k == name) return v;
    return std::nullopt;
  }
  void set_text(const std::string& name, std::string body) {
    for (auto& [k, v] : texts)
      if (k == name) {
        v = std::move(body);
        return;
      }
    texts.emplace_back(name, std::move(body));
  }

  bool has_network(const std::string& group) const { return text(group + ".arch").has_value(); }

  template <class T>
  void put_network(const std::string& group, const ArchSpec& spec, const ParamSet<T>& params) {
    set_text(group + ".arch", spec.to_text());
    for (const auto& p : params)
      tensors.add(group + "/" + p.name, p.role, p.layer, p.value.template cast<float>());
  }

  /// Reassembles a network stored under `group`, validated against its census.
  template <class T>
  std::pair<ArchSpec, ParamSet<T>> get_network(const std::string& group) const {
    auto t = text(group + ".arch");
    if (!t) throw IoError("checkpoint has no network '" + group + "'");
    ArchSpec spec = ArchSpec::from_text(*t);
    ParamSet<T> params;
    for (const auto& info : param_census(spec)) {
      auto idx = tensors.find(group + "/" + info.name);
      if (!idx) throw IoError("checkpoint is missing tensor '" + group + "/" + info.name + "'");
      const auto& src = tensors[*idx];
      if (src.value.shape() != info.shape || src.role != info.role)
        throw IoError("checkpoint tensor '" + src.name + "' does not match its architecture");
      params.add(info.name, info.role, info.layer, src.value.template cast<T>());
    }
    return {std::move(spec), std::move(params)};
  }

  std::vector<std::uint8_t> serialize_body() const {
    ByteWriter w;
    w.put_bytes("GSLIMCK1", 8);
    w.put<std::uint32_t>(1);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(texts.size()));
    for (const auto& [k, v] : texts) {
      w.put_string(k);
      w.put_string(v);
    }
    w.put<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& p : tensors) {
      w.put_string(p.name);
      w.put<std::uint8_t>(static_cast<std::uint8_t>(p.role));
      w.put<std::int32_t>(p.layer);
      w.put<std::uint32_t>(static_cast<std::uint32_t>(p.value.rank()));
      for (auto d : p.value.shape()) w.put<std::uint64_t>(d);
      w.put_bytes(p.value.data(), p.value.size() * sizeof(float));
    }
    return w.take();
  }

  /// Hex SHA-256 of the serialized body; this is the checksum embedded in the file.
  std::string checksum() const {
    auto body = serialize_body();
    return sha256_hex(body.data(), body.size());
  }
};

/// Writes the checkpoint and returns its checksum.
inline std::string save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  auto bytes = ck.serialize_body();
  auto digest = sha256(bytes.data(), bytes.size());
  bytes.insert(bytes.end(), digest.begin(), digest.end());
  write_file_bytes(path, bytes);
  return to_hex(digest.data(), digest.size());
}

/// Loads and verifies the embedded checksum; when `expected` is given the
/// checksum must also equal it.
inline Checkpoint load_checkpoint(const std::filesystem::path& path,
                                  const std::optional<std::string>& expected = std::nullopt) {
  auto bytes = read_file_bytes(path);
  if (bytes.size() < 8 + 32) throw IoError("'" + path.string() + "' is truncated");
  const std::size_t body = bytes.size() - 32;
  auto digest = sha256(bytes.data(), body);
  if (std::memcmp(digest.data(), bytes.data() + body, 32) != 0)
    throw IoError("'" + path.string() + "': checksum mismatch (corrupt or truncated file)");
  const std::string hex = to_hex(digest.data(), 32);
  if (expected && *expected != hex)
    throw IoError("'" + path.string() + "': checksum " + hex + " does not match expected " + *expected);

  ByteReader r(bytes.data(), body);
  char magic[8];
  r.get_bytes(magic, 8);
  if (std::memcmp(magic, "GSLIMCK1", 8) != 0) throw IoError("'" + path.string() + "' is not a checkpoint");
  if (r.get<std::uint32_t>() != 1) throw IoError("unsupported checkpoint version");
  Checkpoint ck;
  const auto nt = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < nt; ++i) {
    auto k = r.get_string();
    auto v = r.get_string();
    ck.texts.emplace_back(std::move(k), std::move(v));
  }
  const auto np = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < np; ++i) {
    auto name = r.get_string();
    const auto role = r.get<std::uint8_t>();
    if (role > static_cast<std::uint8_t>(ParamRole::kRunningVar)) throw IoError("bad tensor role");
    const auto layer = r.get<std::int32_t>();
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw IoError("bad tensor rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>();
    const std::size_t n = shape_numel(shape);
    if (n > r.remaining() / sizeof(float)) throw IoError("truncated tensor '" + name + "'");
    Tensor<float> t(shape);
    r.get_bytes(t.data(), n * sizeof(float));
    ck.tensors.add(std::move(name), static_cast<ParamRole>(role), layer, std::move(t));
  }
  if (r.remaining() != 0) throw IoError("trailing bytes in checkpoint");
  return ck;
}

}  // namespace gslim
