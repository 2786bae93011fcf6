// Copyright 2026 The gslim Authors.
// SPDX-License-Identifier: Apache-2.0

// Uniform fake quantizers for activations and kernel weights, their
// straight-through backward rules, and n-bit packing of quantized kernels.
//
// Activations: q_a(a) = round(clamp(a, 0, p) / s_a) * s_a with s_a = p / 2^m.
// Weights:     q_w(w) = round(w / s_w) * s_w with s_w = max|w| / 2^(n-1),
//              one scale per kernel tensor.
// Rounding is half away from zero, so q_w(-w) == -q_w(w).

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gslim/bytes.hpp"
#include "gslim/error.hpp"
#include "gslim/params.hpp"
#include "gslim/tensor.hpp"

namespace gslim {

enum class RoundingMode { kHalfAwayFromZero };

inline const char* rounding_name(RoundingMode) { return "half_away_from_zero"; }

struct QuantConfig {
  int m = 8;        // activation bits
  int n = 8;        // weight bits
  double p = 4.0;   // activation clamp
  RoundingMode rounding = RoundingMode::kHalfAwayFromZero;

  void validate() const {
    if (m < 1 || m > 30) throw ConfigError("quant.m must be in [1, 30]");
    if (n < 1 || n > 30) throw ConfigError("quant.n must be in [1, 30]");
    if (!(p > 0) || !std::isfinite(p)) throw ConfigError("quant.p must be a positive real");
  }

  template <class T>
  T activation_step() const {
    return static_cast<T>(p) / static_cast<T>(std::ldexp(1.0, m));
  }

  bool operator==(const QuantConfig&) const = default;
};

namespace detail {
template <class T>
inline T round_half_away(T x) {
  return std::round(x);
}
}  // namespace detail

template <class T>
inline T quantize_activation_scalar(T a, T p, T step) {
  const T c = std::min(std::max(T(0), a), p);
  return detail::round_half_away(c / step) * step;
}

template <class T>
std::vector<T> quantize_activation(std::span<const T> a, const QuantConfig& cfg) {
  cfg.validate();
  require_finite(a, "quantize_activation");
  const T p = static_cast<T>(cfg.p);
  const T step = cfg.activation_step<T>();
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = quantize_activation_scalar(a[i], p, step);
  return out;
}

template <class T>
Tensor<T> quantize_activation(const Tensor<T>& a, const QuantConfig& cfg) {
  return Tensor<T>(a.shape(), quantize_activation(a.span(), cfg));
}

/// Per-tensor weight scale; zero for an all-zero tensor.
template <class T>
T weight_scale(std::span<const T> w, int n) {
  return max_abs(w) / static_cast<T>(std::ldexp(1.0, n - 1));
}

template <class T>
std::vector<T> quantize_weight(std::span<const T> w, const QuantConfig& cfg) {
  cfg.validate();
  require_finite(w, "quantize_weight");
  std::vector<T> out(w.begin(), w.end());
  const T s = weight_scale(w, cfg.n);
  for (auto& x : out) {
    if (s != T(0)) x = detail::round_half_away(x / s) * s;
    if (x == T(0)) x = T(0);  // no -0, so packed codes restore the same bits
  }
  return out;
}

template <class T>
Tensor<T> quantize_weight(const Tensor<T>& w, const QuantConfig& cfg) {
  return Tensor<T>(w.shape(), quantize_weight(w.span(), cfg));
}

/// d q_a / d a under the straight-through estimator: 1 on [0, p], else 0.
template <class T>
std::vector<T> ste_activation_grad(std::span<const T> a, const QuantConfig& cfg) {
  const T p = static_cast<T>(cfg.p);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = (a[i] >= T(0) && a[i] <= p) ? T(1) : T(0);
  return out;
}

/// d q_w / d w under the straight-through estimator: identity.
template <class T>
std::vector<T> ste_weight_grad(std::span<const T> w) {
  return std::vector<T>(w.size(), T(1));
}

/// Replaces every kernel by its quantized value. Gammas, biases and
/// normalization buffers are left at full precision.
template <class T>
ParamSet<T> finalize_weights(ParamSet<T> params, const QuantConfig& cfg) {
  for (auto& p : params)
    if (p.role == ParamRole::kKernel)
      p.value = quantize_weight(p.value, cfg);
  return params;
}

// ---------------------------------------------------------------------------
// Packed storage.
//
// Layout (little-endian):
//   u64 count | u8 n | f32 s_w | u8 code_bits | i32 code_base |
//   u64 rank | u64 dims[rank] | payload
// Codes k = round(w / s_w) are stored as (k - code_base) in code_bits bits,
// MSB-first within each byte. code_bits is n unless a tensor uses both
// extreme codes -2^(n-1) and +2^(n-1), which needs n + 1 bits.
// ---------------------------------------------------------------------------

struct QuantizedBlob {
  std::uint64_t count = 0;
  std::uint8_t n = 8;
  float scale = 0.0f;
  std::uint8_t code_bits = 8;
  std::int32_t code_base = 0;
  Shape shape;
  std::vector<std::uint8_t> payload;

  static constexpr std::size_t kFixedHeaderBytes = 8 + 1 + 4 + 1 + 4 + 8;

  std::size_t header_bytes() const { return kFixedHeaderBytes + 8 * shape.size(); }
  std::size_t byte_length() const { return header_bytes() + payload.size(); }

  std::vector<std::uint8_t> serialize() const {
    ByteWriter w;
    w.put<std::uint64_t>(count);
    w.put<std::uint8_t>(n);
    w.put<float>(scale);
    w.put<std::uint8_t>(code_bits);
    w.put<std::int32_t>(code_base);
    w.put<std::uint64_t>(shape.size());
    for (auto d : shape) w.put<std::uint64_t>(d);
    w.put_bytes(payload.data(), payload.size());
    return w.take();
  }

  static QuantizedBlob deserialize(ByteReader& r) {
    QuantizedBlob b;
    b.count = r.get<std::uint64_t>();
    b.n = r.get<std::uint8_t>();
    b.scale = r.get<float>();
    b.code_bits = r.get<std::uint8_t>();
    b.code_base = r.get<std::int32_t>();
    const auto rank = r.get<std::uint64_t>();
    if (rank > 8) throw IoError("quantized blob: implausible rank");
    for (std::uint64_t i = 0; i < rank; ++i) b.shape.push_back(r.get<std::uint64_t>());
    if (shape_numel(b.shape) != b.count) throw IoError("quantized blob: shape/count mismatch");
    if (b.code_bits == 0 || b.code_bits > 31) throw IoError("quantized blob: bad code width");
    b.payload.resize((b.count * b.code_bits + 7) / 8);
    r.get_bytes(b.payload.data(), b.payload.size());
    return b;
  }

  bool operator==(const QuantizedBlob&) const = default;
};

inline std::size_t packed_payload_bytes(std::size_t count, int bits) {
  return (count * static_cast<std::size_t>(bits) + 7) / 8;
}

/// Packs a tensor that already lies on its q_w grid. Throws on any element
/// that does not reconstruct exactly from the f32 scale.
template <class T>
QuantizedBlob pack_weights(const Tensor<T>& w, const QuantConfig& cfg) {
  cfg.validate();
  require_finite(w.span(), "pack_weights");
  QuantizedBlob b;
  b.count = w.size();
  b.n = static_cast<std::uint8_t>(cfg.n);
  b.shape = w.shape();
  const T s = weight_scale(w.span(), cfg.n);
  b.scale = static_cast<float>(s);
  if (static_cast<T>(b.scale) != s)
    throw ConfigError("pack_weights: scale is not representable as f32");

  std::vector<std::int64_t> codes(w.size(), 0);
  std::int64_t lo = 0, hi = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (s != T(0)) codes[i] = static_cast<std::int64_t>(detail::round_half_away(w[i] / s));
    const T back = static_cast<T>(static_cast<T>(codes[i]) * s);
    if (back != w[i])
      throw ConfigError("pack_weights: element " + std::to_string(i) + " is off the q_w grid");
    if (i == 0 || codes[i] < lo) lo = codes[i];
    if (i == 0 || codes[i] > hi) hi = codes[i];
  }
  const std::int64_t span = hi - lo;
  int bits = cfg.n;
  if (span >= (std::int64_t{1} << bits)) bits = cfg.n + 1;
  b.code_bits = static_cast<std::uint8_t>(bits);
  b.code_base = static_cast<std::int32_t>(lo);

  b.payload.assign(packed_payload_bytes(w.size(), bits), 0);
  std::size_t bitpos = 0;
  for (auto c : codes) {
    const auto u = static_cast<std::uint64_t>(c - lo);
    for (int k = bits - 1; k >= 0; --k, ++bitpos)
      if ((u >> k) & 1u) b.payload[bitpos / 8] |= static_cast<std::uint8_t>(0x80u >> (bitpos % 8));
  }
  return b;
}

/// Inverse of pack_weights. Reproduces q_w(W) bit-exactly.
template <class T>
Tensor<T> unpack_weights(const QuantizedBlob& b) {
  if (b.payload.size() != packed_payload_bytes(b.count, b.code_bits))
    throw IoError("quantized blob: payload length mismatch");
  Tensor<T> out(b.shape);
  const T s = static_cast<T>(b.scale);
  std::size_t bitpos = 0;
  for (std::size_t i = 0; i < b.count; ++i) {
    std::uint64_t u = 0;
    for (int k = 0; k < b.code_bits; ++k, ++bitpos)
      u = (u << 1) | ((b.payload[bitpos / 8] >> (7 - bitpos % 8)) & 1u);
    const auto code = static_cast<std::int64_t>(u) + b.code_base;
    out[i] = static_cast<T>(static_cast<T>(code) * s);
  }
  return out;
}

}  // namespace gslim
