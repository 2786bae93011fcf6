// Copyright 2026 The gslim Authors.
// SPDX-License-Identifier: Apache-2.0

// Deployable student bundle: a directory with
//   arch.txt       architecture text
//   weights.bin    tensors in census order, each an encoding byte then either a
//                  packed blob or raw f32 data (names and shapes come from the census)
//   manifest.json  quantization settings and SHA-256 of the files

#pragma once

#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "gslim/arch.hpp"
#include "gslim/bytes.hpp"
#include "gslim/checkpoint.hpp"
#include "gslim/error.hpp"
#include "gslim/params.hpp"
#include "gslim/quantization.hpp"

namespace gslim {

struct Bundle {
  ArchSpec spec;
  ParamSet<float> params;
  bool quantized = false;
  QuantConfig qcfg;
  std::vector<std::pair<std::string, std::string>> meta;
};

inline constexpr const char* kBundleFormat = "gslim-bundle-2";

/// Writes the bundle and returns the total size in bytes of its files.
inline std::uintmax_t export_bundle(const std::filesystem::path& dir, const Bundle& b) {
  std::filesystem::create_directories(dir);
  ByteWriter w;
  w.put_bytes("GSLIMWB2", 8);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(b.params.size()));
  const auto census = param_census(b.spec);
  if (census.size() != b.params.size()) throw ConfigError("bundle: parameters do not match the architecture");
  for (std::size_t k = 0; k < census.size(); ++k) {
    const auto& p = b.params[k];
    if (p.name != census[k].name || p.value.shape() != census[k].shape)
      throw ConfigError("bundle: parameter '" + p.name + "' does not match the architecture");
    const bool pack = b.quantized && p.role == ParamRole::kKernel;
    w.put<std::uint8_t>(pack ? 1 : 0);
    if (pack) {
      const auto blob = pack_weights(p.value, b.qcfg).serialize();
      w.put_bytes(blob.data(), blob.size());
    } else {
      w.put_bytes(p.value.data(), p.value.size() * sizeof(float));
    }
  }
  const auto weights = w.take();
  const std::string arch = b.spec.to_text();
  write_file_bytes(dir / "weights.bin", weights);
  write_file_text(dir / "arch.txt", arch);

  nlohmann::ordered_json m;
  m["format"] = kBundleFormat;
  m["name"] = b.spec.name;
  m["quantized"] = b.quantized;
  m["quant"] = {{"m", b.qcfg.m}, {"n", b.qcfg.n}, {"p", b.qcfg.p}, {"rounding", rounding_name(b.qcfg.rounding)}};
  m["arch_sha256"] = sha256_hex(arch);
  m["weights_sha256"] = sha256_hex(weights.data(), weights.size());
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
  for (const auto& [k, v] : b.meta) meta[k] = v;
  m["meta"] = meta;
  write_file_text(dir / "manifest.json", m.dump());
  return std::filesystem::file_size(dir / "weights.bin") + std::filesystem::file_size(dir / "arch.txt") +
         std::filesystem::file_size(dir / "manifest.json");
}

inline std::uintmax_t bundle_bytes(const std::filesystem::path& dir) {
  std::uintmax_t n = 0;
  for (const char* f : {"weights.bin", "arch.txt", "manifest.json"}) n += std::filesystem::file_size(dir / f);
  return n;
}

inline Bundle import_bundle(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("bundle '" + dir.string() + "' not found");
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(read_file_text(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bundle manifest: " + std::string(e.what()));
  }
  if (m.value("format", "") != kBundleFormat) throw IoError("bundle: unsupported format");
  const std::string arch = read_file_text(dir / "arch.txt");
  const auto weights = read_file_bytes(dir / "weights.bin");
  if (sha256_hex(arch) != m.value("arch_sha256", "")) throw IoError("bundle: arch.txt checksum mismatch");
  if (sha256_hex(weights.data(), weights.size()) != m.value("weights_sha256", ""))
    throw IoError("bundle: weights.bin checksum mismatch");

  Bundle b;
  b.spec = ArchSpec::from_text(arch);
  b.quantized = m.at("quantized").get<bool>();
  const auto& q = m.at("quant");
  b.qcfg.m = q.at("m").get<int>();
  b.qcfg.n = q.at("n").get<int>();
  b.qcfg.p = q.at("p").get<double>();
  if (auto it = m.find("meta"); it != m.end())
    for (auto e = it->begin(); e != it->end(); ++e) b.meta.emplace_back(e.key(), e.value().get<std::string>());

  ByteReader r(weights.data(), weights.size());
  char magic[8];
  r.get_bytes(magic, 8);
  if (std::memcmp(magic, "GSLIMWB2", 8) != 0) throw IoError("bundle: bad weights header");
  const auto count = r.get<std::uint32_t>();
  const auto census = param_census(b.spec);
  if (count != census.size()) throw IoError("bundle: tensor count does not match the architecture");
  for (const auto& info : census) {
    const auto enc = r.get<std::uint8_t>();
    Tensor<float> t;
    if (enc == 1) {
      t = unpack_weights<float>(QuantizedBlob::deserialize(r));
    } else if (enc == 0) {
      if (shape_numel(info.shape) > r.remaining() / sizeof(float)) throw IoError("bundle: truncated tensor");
      t = Tensor<float>(info.shape);
      r.get_bytes(t.data(), t.size() * sizeof(float));
    } else {
      throw IoError("bundle: unknown tensor encoding");
    }
    if (t.shape() != info.shape) throw IoError("bundle: tensor '" + info.name + "' has the wrong shape");
    b.params.add(info.name, info.role, info.layer, std::move(t));
  }
  if (r.remaining() != 0) throw IoError("bundle: trailing bytes in weights.bin");
  return b;
}

}  // namespace gslim
