// Copyright 2026 The gslim Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gslim/arch.hpp"
#include "gslim/checkpoint.hpp"
#include "gslim/error.hpp"
#include "gslim/network.hpp"
#include "gslim/params.hpp"
#include "gslim/tensor.hpp"

namespace gslim {

/// Frozen convolutional embedding. `taps` are layer indices whose outputs
/// feed the perceptual distance, equally weighted; the last tap also serves
/// as the proxy-FID embedding after global average pooling.
template <class T>
class FeatureExtractor {
 public:
  FeatureExtractor() = default;
  FeatureExtractor(ArchSpec spec, ParamSet<T> params, std::vector<int> taps, std::string checksum = {})
      : net_(std::move(spec)), params_(std::move(params)), taps_(std::move(taps)), checksum_(std::move(checksum)) {
    net_.check_params(params_);
    if (taps_.empty()) throw ConfigError("feature extractor needs at least one tap layer");
    for (int t : taps_)
      if (t < 0 || t >= static_cast<int>(net_.num_layers()))
        throw ConfigError("feature extractor tap " + std::to_string(t) + " is out of range");
  }

  const ArchSpec& spec() const { return net_.spec(); }
  const ParamSet<T>& params() const { return params_; }
  const std::vector<int>& taps() const { return taps_; }
  const std::string& checksum() const { return checksum_; }
  const Network<T>& network() const { return net_; }

  /// Tap activations of x; fills `trace` when a backward pass will follow.
  std::vector<Tensor<T>> features(const Tensor<T>& x, Trace<T>* trace = nullptr) const {
    Trace<T> local;
    Trace<T>& tr = trace ? *trace : local;
    ForwardOptions o;
    o.training = false;
    // Intermediates must survive for the taps, so always record.
    net_.forward(params_, x, o, &tr);
    std::vector<Tensor<T>> out;
    for (int t : taps_) out.push_back(tr.outputs[t]);
    return out;
  }

  /// [N, C] global-average-pooled activations of the last tap.
  Tensor<T> embed(const Tensor<T>& x) const {
    ForwardOptions o;
    o.training = false;
    Trace<T> tr;
    net_.forward(params_, x, o, &tr);
    const auto& f = tr.outputs[taps_.back()];
    const std::size_t N = f.dim(0), C = f.dim(1), HW = f.dim(2) * f.dim(3);
    Tensor<T> e({N, C});
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) {
        double s = 0;
        for (std::size_t k = 0; k < HW; ++k) s += f[(n * C + c) * HW + k];
        e[n * C + c] = static_cast<T>(s / double(HW));
      }
    return e;
  }

  /// Gradient w.r.t. the input given gradients w.r.t. each tap.
  Tensor<T> backward(const Trace<T>& tr, std::vector<Tensor<T>> tap_grads) const {
    std::vector<std::pair<int, Tensor<T>>> inj;
    for (std::size_t k = 0; k < taps_.size(); ++k) inj.emplace_back(taps_[k], std::move(tap_grads[k]));
    return net_.backward(params_, tr, inj, nullptr, true);
  }

  template <class U>
  FeatureExtractor<U> cast() const {
    return FeatureExtractor<U>(net_.spec(), params_.template cast<U>(), taps_, checksum_);
  }

 private:
  Network<T> net_;
  ParamSet<T> params_;
  std::vector<int> taps_;
  std::string checksum_;
};

inline std::string taps_to_text(const std::vector<int>& taps) {
  std::string s;
  for (std::size_t i = 0; i < taps.size(); ++i) s += (i ? "," : "") + std::to_string(taps[i]);
  return s;
}

inline std::vector<int> taps_from_text(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw IoError("bad tap list '" + s + "'");
    }
  }
  return out;
}

inline std::string save_extractor(const std::filesystem::path& path, const ArchSpec& spec,
                                  const ParamSet<float>& params, const std::vector<int>& taps,
                                  const std::vector<std::pair<std::string, std::string>>& meta = {}) {
  Checkpoint ck;
  ck.put_network("E", spec, params);
  ck.set_text("E.taps", taps_to_text(taps));
  for (const auto& [k, v] : meta) ck.set_text("meta." + k, v);
  return save_checkpoint(path, ck);
}

/// Loads an extractor checkpoint. A mismatch against `expected_checksum`
/// (when given) is an error: distances are only comparable under one embedding.
inline FeatureExtractor<float> load_extractor(const std::filesystem::path& path,
                                              const std::optional<std::string>& expected_checksum) {
  if (!std::filesystem::exists(path)) throw IoError("extractor checkpoint '" + path.string() + "' not found");
  Checkpoint ck = load_checkpoint(path, expected_checksum);
  auto [spec, params] = ck.get_network<float>("E");
  auto taps = ck.text("E.taps");
  if (!taps) throw IoError("extractor checkpoint has no tap list");
  return FeatureExtractor<float>(std::move(spec), std::move(params), taps_from_text(*taps), ck.checksum());
}

// ---------------------------------------------------------------------------
// Distances
// ---------------------------------------------------------------------------

enum class DistillMetric { kPerceptual, kMse };

inline DistillMetric parse_distill_metric(const std::string& tag) {
  if (tag == "perceptual") return DistillMetric::kPerceptual;
  if (tag == "mse") return DistillMetric::kMse;
  throw ConfigError("unknown distillation metric '" + tag + "' (expected perceptual or mse)");
}

inline const char* to_string(DistillMetric m) { return m == DistillMetric::kMse ? "mse" : "perceptual"; }

namespace detail {

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) throw ConfigError(std::string(what) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace detail

/// Mean squared difference; optional gradient w.r.t. x.
template <class T>
double mse_distance(const Tensor<T>& x, const Tensor<T>& y, Tensor<T>* grad_x = nullptr) {
  detail::require_same_shape(x.shape(), y.shape(), "mse_distance");
  if (x.size() == 0) return 0.0;
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = double(x[i]) - double(y[i]);
    s += d * d;
  }
  const double inv = 1.0 / double(x.size());
  if (grad_x) {
    *grad_x = Tensor<T>(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) (*grad_x)[i] = static_cast<T>(2.0 * inv * (double(x[i]) - double(y[i])));
  }
  return s * inv;
}

/// Perceptual distance against precomputed features of the reference batch.
template <class T>
double perceptual_distance_to(const Tensor<T>& x, const std::vector<Tensor<T>>& fy, const FeatureExtractor<T>& f,
                              Tensor<T>* grad_x = nullptr) {
  Trace<T> tr;
  auto fx = f.features(x, &tr);
  if (fx.size() != fy.size()) throw ConfigError("perceptual_distance: tap count mismatch");
  const double w = 1.0 / double(fx.size());
  double d = 0;
  std::vector<Tensor<T>> g(fx.size());
  for (std::size_t k = 0; k < fx.size(); ++k) {
    d += w * mse_distance(fx[k], fy[k], grad_x ? &g[k] : nullptr);
    if (grad_x)
      for (auto& v : g[k].vec()) v = static_cast<T>(v * w);
  }
  if (grad_x) *grad_x = f.backward(tr, std::move(g));
  return d;
}

/// Mean over tap layers of the mean squared feature difference.
template <class T>
double perceptual_distance(const Tensor<T>& x, const Tensor<T>& y, const FeatureExtractor<T>& f,
                           Tensor<T>* grad_x = nullptr) {
  detail::require_same_shape(x.shape(), y.shape(), "perceptual_distance");
  return perceptual_distance_to(x, f.features(y), f, grad_x);
}

/// Batch estimate of E_x[d(G(x), G0(x))]. The extractor is required for the
/// perceptual metric only. `teacher_features` may carry cached features of
/// g0_out to skip recomputing them.
template <class T>
double distill_loss(const Tensor<T>& g_out, const Tensor<T>& g0_out, DistillMetric metric,
                    const FeatureExtractor<T>* f, Tensor<T>* grad = nullptr,
                    const std::vector<Tensor<T>>* teacher_features = nullptr) {
  detail::require_same_shape(g_out.shape(), g0_out.shape(), "distill_loss");
  switch (metric) {
    case DistillMetric::kMse:
      return mse_distance(g_out, g0_out, grad);
    case DistillMetric::kPerceptual:
      if (!f) throw ConfigError("perceptual distillation needs a feature extractor");
      if (teacher_features) return perceptual_distance_to(g_out, *teacher_features, *f, grad);
      return perceptual_distance(g_out, g0_out, *f, grad);
  }
  throw ConfigError("unknown distillation metric");
}

inline double distill_loss_tagged(const Tensor<float>& g_out, const Tensor<float>& g0_out, const std::string& tag,
                                  const FeatureExtractor<float>* f) {
  return distill_loss(g_out, g0_out, parse_distill_metric(tag), f);
}

}  // namespace gslim
