// Copyright 2026 The gslim Authors.
// SPDX-License-Identifier: Apache-2.0

// L1 channel sparsity on normalization scales: the soft-threshold proximal
// operator, channel masks and extraction of the pruned dense network.

#pragma once

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "gslim/arch.hpp"
#include "gslim/error.hpp"
#include "gslim/params.hpp"
#include "gslim/tensor.hpp"

namespace gslim {

template <class T>
T soft_threshold_scalar(T x, T lambda) {
  const T m = std::abs(x) - lambda;
  if (!(m > T(0))) return T(0);
  return x > T(0) ? m : -m;
}

template <class T>
std::vector<T> soft_threshold(std::span<const T> x, double lambda) {
  if (!(lambda >= 0.0)) throw ConfigError("soft_threshold: lambda must be >= 0");
  std::vector<T> out(x.size());
  const T l = static_cast<T>(lambda);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = soft_threshold_scalar(x[i], l);
  return out;
}

/// soft_threshold(gamma - eta * g, rho * eta).
template <class T>
std::vector<T> prox_step(std::span<const T> gamma, std::span<const T> g, double eta, double rho) {
  if (gamma.size() != g.size())
    throw ConfigError("prox_step: gamma has " + std::to_string(gamma.size()) + " entries, gradient has " +
                      std::to_string(g.size()));
  if (!(eta >= 0.0) || !(rho >= 0.0)) throw ConfigError("prox_step: eta and rho must be >= 0");
  std::vector<T> z(gamma.size());
  const T e = static_cast<T>(eta);
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = gamma[i] - e * g[i];
  return soft_threshold<T>(z, rho * eta);
}

/// In-place variant used by the training loop.
template <class T>
void prox_step_inplace(Tensor<T>& gamma, const Tensor<T>& g, double eta, double rho) {
  auto r = prox_step<T>(gamma.span(), g.span(), eta, rho);
  gamma.vec() = std::move(r);
}

template <class T>
double l1_norm(std::span<const T> gamma) {
  double s = 0;
  for (T v : gamma) s += std::abs(static_cast<double>(v));
  return s;
}

/// Sum of |gamma| over every prunable norm layer.
template <class T>
double l1_norm(const ArchSpec& spec, const ParamSet<T>& params) {
  double s = 0;
  for (const auto& p : params)
    if (p.role == ParamRole::kGamma && spec.layers.at(p.layer).prunable) s += l1_norm<T>(p.value.span());
  return s;
}

/// Fraction of prunable gamma entries that are exactly zero.
template <class T>
double gamma_zero_fraction(const ArchSpec& spec, const ParamSet<T>& params) {
  std::size_t zeros = 0, total = 0;
  for (const auto& p : params)
    if (p.role == ParamRole::kGamma && spec.layers.at(p.layer).prunable) {
      for (T v : p.value.span()) zeros += v == T(0);
      total += p.value.size();
    }
  return total ? static_cast<double>(zeros) / static_cast<double>(total) : 0.0;
}

struct ChannelMask {
  int layer = -1;
  std::vector<bool> keep;
  double threshold = 0.0;

  std::size_t kept() const {
    std::size_t n = 0;
    for (bool b : keep) n += b;
    return n;
  }
  std::vector<int> kept_indices() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < keep.size(); ++i)
      if (keep[i]) out.push_back(static_cast<int>(i));
    return out;
  }
  bool operator==(const ChannelMask&) const = default;
};

/// Keyed by norm layer index.
using MaskSet = std::map<int, ChannelMask>;

/// Keeps channel i iff |gamma_i| > eps. A layer that would lose every channel
/// keeps its largest-|gamma| channel (lowest index on ties) when
/// `keep_one_fallback` is set and is an error otherwise.
template <class T>
ChannelMask channel_mask(std::span<const T> gamma, double eps = 0.0, bool keep_one_fallback = true,
                         int layer = -1) {
  if (!(eps >= 0.0)) throw ConfigError("channel_mask: eps must be >= 0");
  ChannelMask m;
  m.layer = layer;
  m.threshold = eps;
  m.keep.resize(gamma.size());
  for (std::size_t i = 0; i < gamma.size(); ++i) m.keep[i] = std::abs(static_cast<double>(gamma[i])) > eps;
  if (m.kept() == 0 && !gamma.empty()) {
    if (!keep_one_fallback)
      throw ConfigError("channel_mask: every channel of layer " + std::to_string(layer) + " is pruned");
    std::size_t best = 0;
    for (std::size_t i = 1; i < gamma.size(); ++i)
      if (std::abs(gamma[i]) > std::abs(gamma[best])) best = i;
    m.keep[best] = true;
  }
  return m;
}

template <class T>
MaskSet derive_masks(const ArchSpec& spec, const ParamSet<T>& params, double eps = 0.0,
                     bool keep_one_fallback = true) {
  MaskSet out;
  for (int li : prunable_layers(spec)) {
    const auto& g = params.get(param_name(li, "gamma")).value;
    out.emplace(li, channel_mask<T>(g.span(), eps, keep_one_fallback, li));
  }
  return out;
}

inline MaskSet all_true_masks(const ArchSpec& spec) {
  MaskSet out;
  for (int li : prunable_layers(spec)) {
    ChannelMask m;
    m.layer = li;
    m.keep.assign(static_cast<std::size_t>(spec.layers[li].out), true);
    out.emplace(li, std::move(m));
  }
  return out;
}

/// Zeroes gamma entries of masked-out channels (the "masked full network").
template <class T>
void apply_masks(const ArchSpec& spec, ParamSet<T>& params, const MaskSet& masks) {
  for (const auto& [li, m] : masks) {
    if (li < 0 || li >= static_cast<int>(spec.layers.size()) || spec.layers[li].kind != LayerKind::kNorm ||
        !spec.layers[li].prunable)
      throw ConfigError("mask refers to layer " + std::to_string(li) + ", which is not a prunable norm");
    auto& g = params.get(param_name(li, "gamma")).value;
    if (m.keep.size() != g.size())
      throw ConfigError("mask for layer " + std::to_string(li) + " has " + std::to_string(m.keep.size()) +
                        " entries, layer has " + std::to_string(g.size()) + " channels");
    for (std::size_t c = 0; c < g.size(); ++c)
      if (!m.keep[c]) g[c] = T(0);
  }
}

namespace detail {

inline std::vector<int> iota_vec(int n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) v[i] = i;
  return v;
}

template <class T>
Tensor<T> slice_rows(const Tensor<T>& t, const std::vector<int>& rows, std::size_t row_len) {
  Shape s = t.shape();
  s[0] = rows.size();
  Tensor<T> out(s);
  for (std::size_t r = 0; r < rows.size(); ++r)
    std::copy_n(t.data() + std::size_t(rows[r]) * row_len, row_len, out.data() + r * row_len);
  return out;
}

// Kernel [A, B, k, k] -> [|ra|, |rb|, k, k].
template <class T>
Tensor<T> slice_kernel(const Tensor<T>& w, const std::vector<int>& ra, const std::vector<int>& rb) {
  const std::size_t B = w.dim(1), kk = w.dim(2) * w.dim(3);
  Tensor<T> out({ra.size(), rb.size(), w.dim(2), w.dim(3)});
  for (std::size_t a = 0; a < ra.size(); ++a)
    for (std::size_t b = 0; b < rb.size(); ++b)
      std::copy_n(w.data() + (std::size_t(ra[a]) * B + rb[b]) * kk, kk, out.data() + (a * rb.size() + b) * kk);
  return out;
}

}  // namespace detail

/// Physically removes masked channels. Each conv/deconv/linear loses the
/// output channels masked by the norm that directly follows it and the input
/// channels removed upstream. Layer indices (and parameter names) are kept.
template <class T>
std::pair<ArchSpec, ParamSet<T>> extract_subnetwork(const ArchSpec& spec, const ParamSet<T>& params,
                                                    const MaskSet& masks) {
  spec.validate();
  for (const auto& [li, m] : masks) {
    if (li < 0 || li >= static_cast<int>(spec.layers.size()) || spec.layers[li].kind != LayerKind::kNorm ||
        !spec.layers[li].prunable)
      throw ConfigError("mask refers to layer " + std::to_string(li) + ", which is not a prunable norm");
    if (m.keep.size() != static_cast<std::size_t>(spec.layers[li].out))
      throw ConfigError("mask for layer " + std::to_string(li) + " has the wrong length");
    if (m.kept() == 0) throw ConfigError("mask for layer " + std::to_string(li) + " removes every channel");
  }
  auto kept_after = [&](std::size_t i, int width) {
    if (i + 1 < spec.layers.size()) {
      auto it = masks.find(static_cast<int>(i + 1));
      if (it != masks.end()) return it->second.kept_indices();
    }
    return detail::iota_vec(width);
  };

  ArchSpec out = spec;
  ParamSet<T> op;
  std::vector<int> cur = detail::iota_vec(spec.input_shape.c);
  std::vector<std::vector<int>> res_stack;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& d = spec.layers[i];
    auto& nd = out.layers[i];
    auto take = [&](const char* what) -> const Tensor<T>& { return params.get(param_name(i, what)).value; };
    switch (d.kind) {
      case LayerKind::kConv: {
        auto o = kept_after(i, d.out);
        op.add(param_name(i, "weight"), ParamRole::kKernel, int(i), detail::slice_kernel(take("weight"), o, cur));
        if (d.bias) op.add(param_name(i, "bias"), ParamRole::kBias, int(i), detail::slice_rows(take("bias"), o, 1));
        nd.in = int(cur.size());
        nd.out = int(o.size());
        cur = std::move(o);
        break;
      }
      case LayerKind::kDeconv: {
        auto o = kept_after(i, d.out);
        op.add(param_name(i, "weight"), ParamRole::kKernel, int(i), detail::slice_kernel(take("weight"), cur, o));
        if (d.bias) op.add(param_name(i, "bias"), ParamRole::kBias, int(i), detail::slice_rows(take("bias"), o, 1));
        nd.in = int(cur.size());
        nd.out = int(o.size());
        cur = std::move(o);
        break;
      }
      case LayerKind::kLinear: {
        auto o = kept_after(i, d.out);
        const std::size_t hw = std::size_t(d.out_h) * d.out_w;
        std::vector<int> rows;
        for (int c : o)
          for (std::size_t k = 0; k < hw; ++k) rows.push_back(static_cast<int>(c * hw + k));
        const auto& W = take("weight");
        Tensor<T> w({rows.size(), cur.size()});
        for (std::size_t r = 0; r < rows.size(); ++r)
          for (std::size_t k = 0; k < cur.size(); ++k)
            w[r * cur.size() + k] = W[std::size_t(rows[r]) * W.dim(1) + cur[k]];
        op.add(param_name(i, "weight"), ParamRole::kKernel, int(i), std::move(w));
        if (d.bias) op.add(param_name(i, "bias"), ParamRole::kBias, int(i), detail::slice_rows(take("bias"), rows, 1));
        nd.in = int(cur.size());
        nd.out = int(o.size());
        cur = std::move(o);
        break;
      }
      case LayerKind::kNorm: {
        for (const char* what : {"gamma", "beta", "running_mean", "running_var"}) {
          auto idx = params.find(param_name(i, what));
          if (!idx) continue;
          const auto& p = params[*idx];
          op.add(p.name, p.role, int(i), detail::slice_rows(p.value, cur, 1));
        }
        nd.in = nd.out = int(cur.size());
        break;
      }
      case LayerKind::kResBegin:
        res_stack.push_back(cur);
        break;
      case LayerKind::kResEnd:
        if (res_stack.back() != cur)
          throw ConfigError("layer " + std::to_string(i) +
                            " (res_end): channel masks differ across the residual connection");
        res_stack.pop_back();
        break;
      case LayerKind::kAct:
        break;
    }
  }
  if (cur.size() != static_cast<std::size_t>(spec.output_shape().c))
    throw ConfigError("extraction changed the output channel count");
  out.validate();
  return {std::move(out), std::move(op)};
}

inline std::string masks_to_json(const MaskSet& masks) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [li, m] : masks) j["L" + std::to_string(li)] = m.kept_indices();
  return j.dump(2);
}

inline MaskSet masks_from_json(const ArchSpec& spec, const std::string& text) {
  MaskSet out;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("mask file: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("mask file: expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    if (key.size() < 2 || key[0] != 'L') throw ConfigError("mask file: bad key '" + key + "'");
    const int li = std::stoi(key.substr(1));
    if (li < 0 || li >= static_cast<int>(spec.layers.size()) || !spec.layers[li].prunable)
      throw ConfigError("mask file: layer " + key + " is not a prunable norm");
    ChannelMask m;
    m.layer = li;
    m.keep.assign(static_cast<std::size_t>(spec.layers[li].out), false);
    for (int c : it.value().get<std::vector<int>>()) {
      if (c < 0 || c >= spec.layers[li].out) throw ConfigError("mask file: channel out of range in " + key);
      m.keep[c] = true;
    }
    out.emplace(li, std::move(m));
  }
  return out;
}

}  // namespace gslim
