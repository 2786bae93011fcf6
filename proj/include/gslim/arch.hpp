// Copyright 2026 The gslim Authors.
// SPDX-License-Identifier: Apache-2.0

// Declarative layer-by-layer network description. An ArchSpec is enough to
// build a network, count its FLOPs and size, and extract pruned subnetworks.

#pragma once

#include <cstddef>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gslim/error.hpp"
#include "gslim/params.hpp"
#include "gslim/tensor.hpp"

namespace gslim {

enum class LayerKind { kConv, kDeconv, kLinear, kNorm, kAct, kResBegin, kResEnd };
enum class NormKind { kInstance, kBatch };
enum class ActKind { kRelu, kLeakyRelu, kTanh, kSigmoid };
enum class InputKind { kImage, kNoise };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kDeconv: return "deconv";
    case LayerKind::kLinear: return "linear";
    case LayerKind::kNorm: return "norm";
    case LayerKind::kAct: return "act";
    case LayerKind::kResBegin: return "res_begin";
    case LayerKind::kResEnd: return "res_end";
  }
  return "?";
}
inline const char* to_string(NormKind k) { return k == NormKind::kInstance ? "instance" : "batch"; }
inline const char* to_string(ActKind k) {
  switch (k) {
    case ActKind::kRelu: return "relu";
    case ActKind::kLeakyRelu: return "lrelu";
    case ActKind::kTanh: return "tanh";
    case ActKind::kSigmoid: return "sigmoid";
  }
  return "?";
}

struct LayerDesc {
  LayerKind kind = LayerKind::kConv;
  // conv / deconv / linear
  int in = 0;
  int out = 0;
  int kernel = 1;
  int stride = 1;
  int pad = 0;
  int out_pad = 0;  // deconv only
  bool bias = true;
  int out_h = 1;    // linear: output reshaped to out x out_h x out_w
  int out_w = 1;
  // norm
  NormKind norm = NormKind::kInstance;
  bool prunable = false;
  // act
  ActKind act = ActKind::kRelu;
  bool quant = false;  // q_a applied to this activation's output

  bool operator==(const LayerDesc&) const = default;

  static LayerDesc conv(int in, int out, int k, int s, int p, bool bias = true) {
    LayerDesc d;
    d.kind = LayerKind::kConv;
    d.in = in, d.out = out, d.kernel = k, d.stride = s, d.pad = p, d.bias = bias;
    return d;
  }
  static LayerDesc deconv(int in, int out, int k, int s, int p, int op, bool bias = true) {
    LayerDesc d = conv(in, out, k, s, p, bias);
    d.kind = LayerKind::kDeconv;
    d.out_pad = op;
    return d;
  }
  static LayerDesc linear(int in, int out, int oh, int ow, bool bias = true) {
    LayerDesc d;
    d.kind = LayerKind::kLinear;
    d.in = in, d.out = out, d.out_h = oh, d.out_w = ow, d.bias = bias;
    return d;
  }
  static LayerDesc norm_layer(int channels, bool prunable, NormKind k = NormKind::kInstance) {
    LayerDesc d;
    d.kind = LayerKind::kNorm;
    d.in = d.out = channels;
    d.prunable = prunable;
    d.norm = k;
    return d;
  }
  static LayerDesc activation(ActKind a, bool quant = false) {
    LayerDesc d;
    d.kind = LayerKind::kAct;
    d.act = a;
    d.quant = quant;
    return d;
  }
  static LayerDesc res_begin() {
    LayerDesc d;
    d.kind = LayerKind::kResBegin;
    return d;
  }
  static LayerDesc res_end() {
    LayerDesc d;
    d.kind = LayerKind::kResEnd;
    return d;
  }
};

/// Activation geometry (channels, height, width) of one sample.
struct FeatureShape {
  int c = 0, h = 0, w = 0;
  std::size_t numel() const { return static_cast<std::size_t>(c) * h * w; }
  bool operator==(const FeatureShape&) const = default;
};

struct ArchSpec {
  static constexpr int kFormatVersion = 1;

  std::string name;
  InputKind input = InputKind::kImage;
  FeatureShape input_shape;  // noise input: {dim, 1, 1}
  std::vector<LayerDesc> layers;

  bool operator==(const ArchSpec&) const = default;

  /// Per-layer output geometry; throws ConfigError naming the offending layer.
  std::vector<FeatureShape> infer_shapes(FeatureShape in) const;
  std::vector<FeatureShape> infer_shapes() const { return infer_shapes(input_shape); }
  FeatureShape output_shape() const {
    auto s = infer_shapes();
    return s.empty() ? input_shape : s.back();
  }
  void validate() const { (void)infer_shapes(); }

  std::string to_text() const;
  static ArchSpec from_text(std::string_view text);
};

inline std::string layer_error(std::size_t i, const LayerDesc& d, const std::string& msg) {
  return "layer " + std::to_string(i) + " (" + to_string(d.kind) + "): " + msg;
}

inline std::vector<FeatureShape> ArchSpec::infer_shapes(FeatureShape s) const {
  if (s.c <= 0 || s.h <= 0 || s.w <= 0) throw ConfigError("arch '" + name + "': bad input shape");
  std::vector<FeatureShape> out;
  std::vector<FeatureShape> stack;
  out.reserve(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& d = layers[i];
    auto fail = [&](const std::string& m) { throw ConfigError(layer_error(i, d, m)); };
    switch (d.kind) {
      case LayerKind::kConv:
      case LayerKind::kDeconv: {
        if (d.in != s.c)
          fail("expects " + std::to_string(d.in) + " input channels, got " + std::to_string(s.c));
        if (d.out <= 0 || d.kernel <= 0 || d.stride <= 0 || d.pad < 0 || d.out_pad < 0)
          fail("non-positive geometry");
        if (d.kind == LayerKind::kConv) {
          const int h = (s.h + 2 * d.pad - d.kernel) / d.stride + 1;
          const int w = (s.w + 2 * d.pad - d.kernel) / d.stride + 1;
          if (s.h + 2 * d.pad < d.kernel || s.w + 2 * d.pad < d.kernel || h <= 0 || w <= 0)
            fail("kernel larger than padded input");
          s = {d.out, h, w};
        } else {
          if (d.out_pad >= d.stride) fail("output padding must be smaller than stride");
          const int h = (s.h - 1) * d.stride - 2 * d.pad + d.kernel + d.out_pad;
          const int w = (s.w - 1) * d.stride - 2 * d.pad + d.kernel + d.out_pad;
          if (h <= 0 || w <= 0) fail("empty output");
          s = {d.out, h, w};
        }
        break;
      }
      case LayerKind::kLinear:
        if (static_cast<std::size_t>(d.in) != s.numel())
          fail("expects " + std::to_string(d.in) + " input features, got " +
               std::to_string(s.numel()));
        if (d.out <= 0 || d.out_h <= 0 || d.out_w <= 0) fail("non-positive output geometry");
        s = {d.out, d.out_h, d.out_w};
        break;
      case LayerKind::kNorm: {
        if (d.out != s.c)
          fail("normalizes " + std::to_string(d.out) + " channels, got " + std::to_string(s.c));
        if (d.prunable) {
          if (i == 0) fail("prunable norm must follow a conv, deconv or linear layer");
          auto prev = layers[i - 1].kind;
          if (prev != LayerKind::kConv && prev != LayerKind::kDeconv && prev != LayerKind::kLinear)
            fail("prunable norm must follow a conv, deconv or linear layer");
          if (i + 1 < layers.size() && layers[i + 1].kind == LayerKind::kAct &&
              layers[i + 1].act == ActKind::kSigmoid)
            fail("prunable norm cannot feed a sigmoid (sigmoid(0) != 0)");
        }
        break;
      }
      case LayerKind::kAct:
        break;
      case LayerKind::kResBegin:
        stack.push_back(s);
        break;
      case LayerKind::kResEnd:
        if (stack.empty()) fail("res_end without res_begin");
        if (!(stack.back() == s)) fail("residual branch changes the activation shape");
        stack.pop_back();
        break;
    }
    out.push_back(s);
  }
  if (!stack.empty()) throw ConfigError("arch '" + name + "': unterminated residual block");
  return out;
}

// ---------------------------------------------------------------------------
// Text serialization
// ---------------------------------------------------------------------------

inline std::string ArchSpec::to_text() const {
  std::ostringstream os;
  os << "gslim-arch " << kFormatVersion << "\n";
  os << "name " << name << "\n";
  if (input == InputKind::kImage)
    os << "input image " << input_shape.c << ' ' << input_shape.h << ' ' << input_shape.w << "\n";
  else
    os << "input noise " << input_shape.c << "\n";
  for (const auto& d : layers) {
    switch (d.kind) {
      case LayerKind::kConv:
      case LayerKind::kDeconv:
        os << to_string(d.kind) << " in=" << d.in << " out=" << d.out << " k=" << d.kernel
           << " s=" << d.stride << " p=" << d.pad;
        if (d.kind == LayerKind::kDeconv) os << " op=" << d.out_pad;
        os << " bias=" << int(d.bias) << "\n";
        break;
      case LayerKind::kLinear:
        os << "linear in=" << d.in << " out=" << d.out << " h=" << d.out_h << " w=" << d.out_w
           << " bias=" << int(d.bias) << "\n";
        break;
      case LayerKind::kNorm:
        os << "norm kind=" << to_string(d.norm) << " c=" << d.out << " prunable=" << int(d.prunable)
           << "\n";
        break;
      case LayerKind::kAct:
        os << "act fn=" << to_string(d.act) << " quant=" << int(d.quant) << "\n";
        break;
      case LayerKind::kResBegin:
        os << "res_begin\n";
        break;
      case LayerKind::kResEnd:
        os << "res_end\n";
        break;
    }
  }
  os << "end\n";
  return os.str();
}

namespace detail {

inline std::map<std::string, std::string> parse_kv(std::istringstream& is, std::size_t lineno) {
  std::map<std::string, std::string> kv;
  std::string tok;
  while (is >> tok) {
    auto eq = tok.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("arch text line " + std::to_string(lineno) + ": expected key=value, got '" +
                        tok + "'");
    kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return kv;
}

inline int take_int(std::map<std::string, std::string>& kv, const std::string& key,
                    std::size_t lineno) {
  auto it = kv.find(key);
  if (it == kv.end())
    throw ConfigError("arch text line " + std::to_string(lineno) + ": missing '" + key + "'");
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(it->second, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != it->second.size())
    throw ConfigError("arch text line " + std::to_string(lineno) + ": bad integer for '" + key +
                      "'");
  kv.erase(it);
  return v;
}

inline std::string take_str(std::map<std::string, std::string>& kv, const std::string& key,
                            std::size_t lineno) {
  auto it = kv.find(key);
  if (it == kv.end())
    throw ConfigError("arch text line " + std::to_string(lineno) + ": missing '" + key + "'");
  auto v = it->second;
  kv.erase(it);
  return v;
}

}  // namespace detail

inline ArchSpec ArchSpec::from_text(std::string_view text) {
  ArchSpec spec;
  std::istringstream all{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  bool header = false, ended = false, have_input = false;
  while (std::getline(all, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (ended) throw ConfigError("arch text: content after 'end'");
    std::istringstream is(line);
    std::string head;
    is >> head;
    auto err = [&](const std::string& m) {
      throw ConfigError("arch text line " + std::to_string(lineno) + ": " + m);
    };
    if (!header) {
      int version = 0;
      if (head != "gslim-arch" || !(is >> version)) err("missing 'gslim-arch' header");
      if (version != kFormatVersion) err("unsupported format version " + std::to_string(version));
      header = true;
      continue;
    }
    if (head == "name") {
      is >> spec.name;
    } else if (head == "input") {
      std::string kind;
      is >> kind;
      if (kind == "image") {
        spec.input = InputKind::kImage;
        if (!(is >> spec.input_shape.c >> spec.input_shape.h >> spec.input_shape.w))
          err("bad image input");
      } else if (kind == "noise") {
        spec.input = InputKind::kNoise;
        if (!(is >> spec.input_shape.c)) err("bad noise input");
        spec.input_shape.h = spec.input_shape.w = 1;
      } else {
        err("unknown input kind '" + kind + "'");
      }
      have_input = true;
    } else if (head == "conv" || head == "deconv") {
      auto kv = detail::parse_kv(is, lineno);
      LayerDesc d;
      d.kind = head == "conv" ? LayerKind::kConv : LayerKind::kDeconv;
      d.in = detail::take_int(kv, "in", lineno);
      d.out = detail::take_int(kv, "out", lineno);
      d.kernel = detail::take_int(kv, "k", lineno);
      d.stride = detail::take_int(kv, "s", lineno);
      d.pad = detail::take_int(kv, "p", lineno);
      if (d.kind == LayerKind::kDeconv) d.out_pad = detail::take_int(kv, "op", lineno);
      d.bias = detail::take_int(kv, "bias", lineno) != 0;
      if (!kv.empty()) err("unknown key '" + kv.begin()->first + "'");
      spec.layers.push_back(d);
    } else if (head == "linear") {
      auto kv = detail::parse_kv(is, lineno);
      LayerDesc d;
      d.kind = LayerKind::kLinear;
      d.in = detail::take_int(kv, "in", lineno);
      d.out = detail::take_int(kv, "out", lineno);
      d.out_h = detail::take_int(kv, "h", lineno);
      d.out_w = detail::take_int(kv, "w", lineno);
      d.bias = detail::take_int(kv, "bias", lineno) != 0;
      if (!kv.empty()) err("unknown key '" + kv.begin()->first + "'");
      spec.layers.push_back(d);
    } else if (head == "norm") {
      auto kv = detail::parse_kv(is, lineno);
      LayerDesc d;
      d.kind = LayerKind::kNorm;
      auto kind = detail::take_str(kv, "kind", lineno);
      if (kind == "instance") d.norm = NormKind::kInstance;
      else if (kind == "batch") d.norm = NormKind::kBatch;
      else err("unknown norm kind '" + kind + "'");
      d.in = d.out = detail::take_int(kv, "c", lineno);
      d.prunable = detail::take_int(kv, "prunable", lineno) != 0;
      if (!kv.empty()) err("unknown key '" + kv.begin()->first + "'");
      spec.layers.push_back(d);
    } else if (head == "act") {
      auto kv = detail::parse_kv(is, lineno);
      LayerDesc d;
      d.kind = LayerKind::kAct;
      auto fn = detail::take_str(kv, "fn", lineno);
      if (fn == "relu") d.act = ActKind::kRelu;
      else if (fn == "lrelu") d.act = ActKind::kLeakyRelu;
      else if (fn == "tanh") d.act = ActKind::kTanh;
      else if (fn == "sigmoid") d.act = ActKind::kSigmoid;
      else err("unknown activation '" + fn + "'");
      d.quant = detail::take_int(kv, "quant", lineno) != 0;
      if (!kv.empty()) err("unknown key '" + kv.begin()->first + "'");
      spec.layers.push_back(d);
    } else if (head == "res_begin") {
      spec.layers.push_back(LayerDesc::res_begin());
    } else if (head == "res_end") {
      spec.layers.push_back(LayerDesc::res_end());
    } else if (head == "end") {
      ended = true;
    } else {
      err("unknown directive '" + head + "'");
    }
  }
  if (!header) throw ConfigError("arch text: empty");
  if (!have_input) throw ConfigError("arch text: missing input line");
  if (!ended) throw ConfigError("arch text: missing 'end'");
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------
// Parameter census
// ---------------------------------------------------------------------------

struct ParamInfo {
  std::string name;
  ParamRole role;
  int layer;
  Shape shape;
};

inline std::string param_name(std::size_t layer, std::string_view what) {
  return "L" + std::to_string(layer) + "." + std::string(what);
}

/// Every parameter tensor the architecture owns, in build order.
inline std::vector<ParamInfo> param_census(const ArchSpec& spec) {
  spec.validate();
  std::vector<ParamInfo> out;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& d = spec.layers[i];
    const int li = static_cast<int>(i);
    const auto k = static_cast<std::size_t>(d.kernel);
    switch (d.kind) {
      case LayerKind::kConv:
        out.push_back({param_name(i, "weight"), ParamRole::kKernel, li,
                       {std::size_t(d.out), std::size_t(d.in), k, k}});
        if (d.bias) out.push_back({param_name(i, "bias"), ParamRole::kBias, li, {std::size_t(d.out)}});
        break;
      case LayerKind::kDeconv:
        out.push_back({param_name(i, "weight"), ParamRole::kKernel, li,
                       {std::size_t(d.in), std::size_t(d.out), k, k}});
        if (d.bias) out.push_back({param_name(i, "bias"), ParamRole::kBias, li, {std::size_t(d.out)}});
        break;
      case LayerKind::kLinear: {
        const std::size_t of = std::size_t(d.out) * d.out_h * d.out_w;
        out.push_back({param_name(i, "weight"), ParamRole::kKernel, li, {of, std::size_t(d.in)}});
        if (d.bias) out.push_back({param_name(i, "bias"), ParamRole::kBias, li, {of}});
        break;
      }
      case LayerKind::kNorm:
        out.push_back({param_name(i, "gamma"), ParamRole::kGamma, li, {std::size_t(d.out)}});
        out.push_back({param_name(i, "beta"), ParamRole::kBeta, li, {std::size_t(d.out)}});
        if (d.norm == NormKind::kBatch) {
          out.push_back({param_name(i, "running_mean"), ParamRole::kRunningMean, li, {std::size_t(d.out)}});
          out.push_back({param_name(i, "running_var"), ParamRole::kRunningVar, li, {std::size_t(d.out)}});
        }
        break;
      default:
        break;
    }
  }
  return out;
}

inline std::size_t param_count(const ArchSpec& spec) {
  std::size_t n = 0;
  for (const auto& p : param_census(spec)) n += shape_numel(p.shape);
  return n;
}

/// Indices of prunable norm layers, in order.
inline std::vector<int> prunable_layers(const ArchSpec& spec) {
  std::vector<int> out;
  for (std::size_t i = 0; i < spec.layers.size(); ++i)
    if (spec.layers[i].kind == LayerKind::kNorm && spec.layers[i].prunable)
      out.push_back(static_cast<int>(i));
  return out;
}

}  // namespace gslim
