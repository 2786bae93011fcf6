// Copyright 2026 The gslim Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>

#include "gslim/arch.hpp"
#include "gslim/checkpoint.hpp"
#include "gslim/error.hpp"
#include "gslim/network.hpp"
#include "gslim/params.hpp"

namespace gslim {

// ---------------------------------------------------------------------------
// Builtin architectures
// ---------------------------------------------------------------------------

/// Encoder / residual trunk / decoder image translator. The norm feeding the
/// trunk and the closing norm of every residual block are not prunable, so
/// skip additions keep their width.
inline ArchSpec resnet_generator(std::string name, int ngf, int blocks, int size, int edge_kernel,
                                 int channels = 3) {
  ArchSpec s;
  s.name = std::move(name);
  s.input = InputKind::kImage;
  s.input_shape = {channels, size, size};
  auto& L = s.layers;
  const int ep = edge_kernel / 2;
  auto stage = [&](LayerDesc conv, bool prunable) {
    const int c = conv.out;
    L.push_back(conv);
    L.push_back(LayerDesc::norm_layer(c, prunable));
    L.push_back(LayerDesc::activation(ActKind::kRelu, true));
  };
  stage(LayerDesc::conv(channels, ngf, edge_kernel, 1, ep), true);
  stage(LayerDesc::conv(ngf, 2 * ngf, 3, 2, 1), true);
  stage(LayerDesc::conv(2 * ngf, 4 * ngf, 3, 2, 1), false);
  for (int b = 0; b < blocks; ++b) {
    L.push_back(LayerDesc::res_begin());
    stage(LayerDesc::conv(4 * ngf, 4 * ngf, 3, 1, 1), true);
    L.push_back(LayerDesc::conv(4 * ngf, 4 * ngf, 3, 1, 1));
    L.push_back(LayerDesc::norm_layer(4 * ngf, false));
    L.push_back(LayerDesc::res_end());
  }
  stage(LayerDesc::deconv(4 * ngf, 2 * ngf, 3, 2, 1, 1), true);
  stage(LayerDesc::deconv(2 * ngf, ngf, 3, 2, 1, 1), true);
  L.push_back(LayerDesc::conv(ngf, channels, edge_kernel, 1, ep));
  L.push_back(LayerDesc::activation(ActKind::kTanh));
  s.validate();
  return s;
}

/// Noise-to-image generator: linear projection to a 4x4 map, then three
/// stride-2 transposed convolutions.
inline ArchSpec noise_generator(std::string name, int zdim, int ngf, int channels = 3) {
  ArchSpec s;
  s.name = std::move(name);
  s.input = InputKind::kNoise;
  s.input_shape = {zdim, 1, 1};
  auto& L = s.layers;
  L.push_back(LayerDesc::linear(zdim, 4 * ngf, 4, 4));
  L.push_back(LayerDesc::norm_layer(4 * ngf, true));
  L.push_back(LayerDesc::activation(ActKind::kRelu, true));
  L.push_back(LayerDesc::deconv(4 * ngf, 2 * ngf, 4, 2, 1, 0));
  L.push_back(LayerDesc::norm_layer(2 * ngf, true));
  L.push_back(LayerDesc::activation(ActKind::kRelu, true));
  L.push_back(LayerDesc::deconv(2 * ngf, ngf, 4, 2, 1, 0));
  L.push_back(LayerDesc::norm_layer(ngf, true));
  L.push_back(LayerDesc::activation(ActKind::kRelu, true));
  L.push_back(LayerDesc::deconv(ngf, channels, 4, 2, 1, 0));
  L.push_back(LayerDesc::activation(ActKind::kTanh));
  s.validate();
  return s;
}

/// Small PatchGAN-style discriminator producing a probability map.
inline ArchSpec patch_discriminator(std::string name, int ndf, int size, int channels = 3) {
  ArchSpec s;
  s.name = std::move(name);
  s.input_shape = {channels, size, size};
  auto& L = s.layers;
  L.push_back(LayerDesc::conv(channels, ndf, 4, 2, 1));
  L.push_back(LayerDesc::activation(ActKind::kLeakyRelu));
  L.push_back(LayerDesc::conv(ndf, 2 * ndf, 4, 2, 1));
  L.push_back(LayerDesc::activation(ActKind::kLeakyRelu));
  L.push_back(LayerDesc::conv(2 * ndf, 1, 3, 1, 1));
  L.push_back(LayerDesc::activation(ActKind::kSigmoid));
  s.validate();
  return s;
}

/// Frozen 4-conv embedding used for perceptual distances and proxy FID.
inline ArchSpec feature_extractor_spec(int size = 32, int channels = 3) {
  ArchSpec s;
  s.name = "desk_extractor32";
  s.input_shape = {channels, size, size};
  auto& L = s.layers;
  L.push_back(LayerDesc::conv(channels, 8, 3, 1, 1));
  L.push_back(LayerDesc::activation(ActKind::kRelu));
  L.push_back(LayerDesc::conv(8, 16, 3, 2, 1));
  L.push_back(LayerDesc::activation(ActKind::kRelu));
  L.push_back(LayerDesc::conv(16, 16, 3, 1, 1));
  L.push_back(LayerDesc::activation(ActKind::kRelu));
  L.push_back(LayerDesc::conv(16, 32, 3, 2, 1));
  L.push_back(LayerDesc::activation(ActKind::kRelu));
  s.validate();
  return s;
}

inline const std::map<std::string, ArchSpec>& builtin_specs() {
  static const std::map<std::string, ArchSpec> catalog = [] {
    std::map<std::string, ArchSpec> m;
    auto put = [&](ArchSpec s) { m.emplace(s.name, std::move(s)); };
    // Accounting calibration only: 9-block translator at 256x256.
    put(resnet_generator("cyclegan_resnet9_256", 64, 9, 256, 7));
    put(resnet_generator("desk_resnet3_32", 8, 3, 32, 3));
    put(resnet_generator("desk_resnet3_32_half", 4, 3, 32, 3));
    put(noise_generator("desk_noise_32", 32, 8));
    put(noise_generator("desk_noise_32_half", 32, 4));
    put(patch_discriminator("desk_patch_d32", 16, 32));
    put(feature_extractor_spec());
    return m;
  }();
  return catalog;
}

inline const ArchSpec& builtin_spec(const std::string& name) {
  const auto& c = builtin_specs();
  auto it = c.find(name);
  if (it == c.end()) throw ConfigError("unknown builtin architecture '" + name + "'");
  return it->second;
}

/// Student with every channel count scaled by `fraction` (at least 1).
inline ArchSpec scale_channels(const ArchSpec& spec, double fraction, std::string name) {
  ArchSpec s = spec;
  s.name = std::move(name);
  auto scale = [&](int c) { return std::max(1, static_cast<int>(std::lround(c * fraction))); };
  const std::size_t last_weighted = [&] {
    std::size_t k = 0;
    for (std::size_t i = 0; i < s.layers.size(); ++i)
      if (s.layers[i].kind == LayerKind::kConv || s.layers[i].kind == LayerKind::kDeconv ||
          s.layers[i].kind == LayerKind::kLinear)
        k = i;
    return k;
  }();
  bool first = true;
  for (std::size_t i = 0; i < s.layers.size(); ++i) {
    auto& d = s.layers[i];
    switch (d.kind) {
      case LayerKind::kConv:
      case LayerKind::kDeconv:
        if (!first) d.in = scale(d.in);
        if (i != last_weighted) d.out = scale(d.out);
        first = false;
        break;
      case LayerKind::kLinear:
        if (i != last_weighted) d.out = scale(d.out);
        first = false;
        break;
      case LayerKind::kNorm:
        d.in = d.out = scale(d.out);
        break;
      default:
        break;
    }
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

struct InitOptions {
  double kernel_std = 0.02;  // normal(0, std) for every kernel
  bool he = false;           // use sqrt(2 / fan_in) instead of kernel_std
  double gamma_lo = 0.5;
  double gamma_hi = 1.0;
};

/// Deterministic in (spec, seed).
template <class T>
ParamSet<T> init_params(const ArchSpec& spec, std::uint64_t seed, const InitOptions& opt = {}) {
  std::mt19937_64 rng(seed);
  ParamSet<T> ps;
  for (const auto& info : param_census(spec)) {
    Tensor<T> t(info.shape);
    switch (info.role) {
      case ParamRole::kKernel: {
        double std = opt.kernel_std;
        if (opt.he) {
          const auto& d = spec.layers[info.layer];
          double fan_in = d.kind == LayerKind::kLinear ? d.in
                          : d.kind == LayerKind::kDeconv
                              ? double(d.in) * d.kernel * d.kernel / (d.stride * d.stride)
                              : double(d.in) * d.kernel * d.kernel;
          std = std::sqrt(2.0 / fan_in);
        }
        fill_normal(t, rng, 0.0, std);
        break;
      }
      case ParamRole::kGamma:
        fill_uniform(t, rng, opt.gamma_lo, opt.gamma_hi);
        break;
      case ParamRole::kRunningVar:
        t.fill(T(1));
        break;
      default:
        break;
    }
    ps.add(info.name, info.role, info.layer, std::move(t));
  }
  return ps;
}

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

/// Network whose output is an image in [-1, 1].
template <class T>
Network<T> build_generator(const ArchSpec& spec) {
  spec.validate();
  if (spec.layers.empty() || spec.layers.back().kind != LayerKind::kAct ||
      spec.layers.back().act != ActKind::kTanh)
    throw ConfigError("generator '" + spec.name + "' must end with a tanh activation");
  return Network<T>(spec);
}

/// Network whose output is a probability map in (0, 1).
template <class T>
Network<T> build_discriminator(const ArchSpec& spec) {
  spec.validate();
  if (spec.input != InputKind::kImage) throw ConfigError("discriminator must take images");
  if (spec.layers.empty() || spec.layers.back().kind != LayerKind::kAct ||
      spec.layers.back().act != ActKind::kSigmoid)
    throw ConfigError("discriminator '" + spec.name + "' must end with a sigmoid activation");
  for (const auto& d : spec.layers)
    if (d.kind == LayerKind::kNorm && d.prunable)
      throw ConfigError("discriminator layers are never pruned");
  return Network<T>(spec);
}

/// G_q(x; q_w(W), gamma) when enabled, the plain full-precision forward otherwise.
template <class T>
Tensor<T> forward_quantized(const Network<T>& g, const ParamSet<T>& params, const Tensor<T>& x,
                            const QuantConfig& cfg, bool enabled, Trace<T>* trace = nullptr) {
  ForwardOptions o;
  o.quant = enabled ? QuantMode::kFake : QuantMode::kOff;
  o.qcfg = cfg;
  return g.forward(params, x, o, trace);
}

// ---------------------------------------------------------------------------
// Teacher checkpoints
// ---------------------------------------------------------------------------

struct TeacherBundle {
  ArchSpec spec;
  ParamSet<float> params;
  std::optional<std::pair<ArchSpec, ParamSet<float>>> discriminator;
  std::vector<std::pair<std::string, std::string>> meta;
  std::string checksum;
};

inline std::string save_teacher(const std::filesystem::path& path, const TeacherBundle& t) {
  Checkpoint ck;
  ck.put_network("G", t.spec, t.params);
  if (t.discriminator) ck.put_network("D", t.discriminator->first, t.discriminator->second);
  for (const auto& [k, v] : t.meta) ck.set_text("meta." + k, v);
  return save_checkpoint(path, ck);
}

inline TeacherBundle load_teacher(const std::filesystem::path& path,
                                  const std::optional<std::string>& expected_checksum = std::nullopt) {
  if (!std::filesystem::exists(path)) throw IoError("teacher checkpoint '" + path.string() + "' not found");
  Checkpoint ck = load_checkpoint(path, expected_checksum);
  TeacherBundle t;
  auto [spec, params] = ck.get_network<float>("G");
  t.spec = std::move(spec);
  t.params = std::move(params);
  if (ck.has_network("D")) t.discriminator = ck.get_network<float>("D");
  for (const auto& [k, v] : ck.texts)
    if (k.rfind("meta.", 0) == 0) t.meta.emplace_back(k.substr(5), v);
  t.checksum = ck.checksum();
  build_generator<float>(t.spec).check_params(t.params);
  return t;
}

}  // namespace gslim
