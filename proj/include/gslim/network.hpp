// Copyright 2026 The gslim Authors.
// SPDX-License-Identifier: Apache-2.0

// Executes an ArchSpec over a ParamSet. A Network is immutable once built;
// all per-call state lives in a Trace owned by the caller, so inference on
// frozen parameters can run concurrently.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gslim/arch.hpp"
#include "gslim/error.hpp"
#include "gslim/params.hpp"
#include "gslim/quantization.hpp"
#include "gslim/tensor.hpp"

namespace gslim {

/// How quantizers behave in a forward pass.
///  kOff       full precision (GS-32 and every non-generator network)
///  kFake      q_w on kernels, q_a on flagged activations (GS-8)
///  kSurrogate kernels untouched, flagged activations clamped to [0, p];
///             the function whose true gradient the STE backward computes
enum class QuantMode { kOff, kFake, kSurrogate };

struct ForwardOptions {
  QuantMode quant = QuantMode::kOff;
  QuantConfig qcfg{};
  bool training = true;  // batch norm uses batch statistics when true
};

inline constexpr double kNormEps = 1e-5;
inline constexpr double kLeakySlope = 0.2;

template <class T>
struct Trace {
  Tensor<T> input;
  std::vector<Tensor<T>> outputs;            // one per layer
  std::vector<std::vector<T>> cols;          // conv: im2col of the input
  std::vector<Tensor<T>> weff;               // quantized kernel when it differs from the stored one
  std::vector<std::vector<T>> norm_xhat;     // normalized input
  std::vector<std::vector<T>> norm_invstd;   // per (n, c) or per c
  std::vector<std::vector<T>> norm_mean;     // batch norm only: batch statistics
  std::vector<std::vector<T>> norm_var;
  std::vector<std::vector<T>> act_pre;       // activation output before q_a
  ForwardOptions opts;
};

namespace detail {

template <class T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapRM = Eigen::Map<MatRM<T>>;
template <class T>
using CMapRM = Eigen::Map<const MatRM<T>>;

/// col[(c, ky, kx), (n, oy, ox)] = img[n, c, oy*s - p + ky, ox*s - p + kx] (zero outside).
template <class T>
void im2col(const T* img, int N, int C, int H, int W, int k, int s, int p, int Ho, int Wo, T* col) {
  const std::size_t cols = static_cast<std::size_t>(N) * Ho * Wo;
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * cols;
        for (int n = 0; n < N; ++n) {
          const T* src = img + (static_cast<std::size_t>(n) * C + c) * H * W;
          T* dst = row + static_cast<std::size_t>(n) * Ho * Wo;
          for (int oy = 0; oy < Ho; ++oy) {
            const int iy = oy * s - p + ky;
            T* d = dst + oy * Wo;
            if (iy < 0 || iy >= H) {
              std::fill(d, d + Wo, T(0));
              continue;
            }
            const T* srow = src + iy * W;
            if (s == 1) {
              for (int ox = 0; ox < Wo; ++ox) {
                const int ix = ox - p + kx;
                d[ox] = (ix >= 0 && ix < W) ? srow[ix] : T(0);
              }
            } else {
              for (int ox = 0; ox < Wo; ++ox) {
                const int ix = ox * s - p + kx;
                d[ox] = (ix >= 0 && ix < W) ? srow[ix] : T(0);
              }
            }
          }
        }
      }
}

/// Adjoint of im2col: accumulates col back into img (img must be pre-zeroed).
template <class T>
void col2im(const T* col, int N, int C, int H, int W, int k, int s, int p, int Ho, int Wo, T* img) {
  const std::size_t cols = static_cast<std::size_t>(N) * Ho * Wo;
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * cols;
        for (int n = 0; n < N; ++n) {
          T* dst = img + (static_cast<std::size_t>(n) * C + c) * H * W;
          const T* src = row + static_cast<std::size_t>(n) * Ho * Wo;
          for (int oy = 0; oy < Ho; ++oy) {
            const int iy = oy * s - p + ky;
            if (iy < 0 || iy >= H) continue;
            T* drow = dst + iy * W;
            const T* srow = src + oy * Wo;
            for (int ox = 0; ox < Wo; ++ox) {
              const int ix = ox * s - p + kx;
              if (ix >= 0 && ix < W) drow[ix] += srow[ox];
            }
          }
        }
      }
}

/// [C, N*HW] channel-major matrix from an NCHW tensor.
template <class T>
std::vector<T> nchw_to_cm(const T* x, int N, int C, int HW) {
  std::vector<T> out(static_cast<std::size_t>(N) * C * HW);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      std::copy_n(x + (static_cast<std::size_t>(n) * C + c) * HW, HW,
                  out.data() + static_cast<std::size_t>(c) * N * HW + static_cast<std::size_t>(n) * HW);
  return out;
}

template <class T>
void cm_to_nchw(const T* m, int N, int C, int HW, T* x) {
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      std::copy_n(m + static_cast<std::size_t>(c) * N * HW + static_cast<std::size_t>(n) * HW, HW,
                  x + (static_cast<std::size_t>(n) * C + c) * HW);
}

template <class T>
T act_fn(ActKind a, T x) {
  switch (a) {
    case ActKind::kRelu: return x > T(0) ? x : T(0);
    case ActKind::kLeakyRelu: return x > T(0) ? x : static_cast<T>(kLeakySlope) * x;
    case ActKind::kTanh: return std::tanh(x);
    case ActKind::kSigmoid: return T(1) / (T(1) + std::exp(-x));
  }
  return x;
}

/// Derivative expressed through input x and output y.
template <class T>
T act_grad(ActKind a, T x, T y) {
  switch (a) {
    case ActKind::kRelu: return x > T(0) ? T(1) : T(0);
    case ActKind::kLeakyRelu: return x > T(0) ? T(1) : static_cast<T>(kLeakySlope);
    case ActKind::kTanh: return T(1) - y * y;
    case ActKind::kSigmoid: return y * (T(1) - y);
  }
  return T(1);
}

}  // namespace detail

template <class T>
class Network {
 public:
  Network() = default;
  explicit Network(ArchSpec spec) : spec_(std::move(spec)) {
    shapes_ = spec_.infer_shapes();
    census_ = param_census(spec_);
    slots_.assign(spec_.layers.size(), Slots{});
    for (std::size_t i = 0; i < census_.size(); ++i) {
      auto& s = slots_[census_[i].layer];
      switch (census_[i].role) {
        case ParamRole::kKernel: s.weight = static_cast<int>(i); break;
        case ParamRole::kBias: s.bias = static_cast<int>(i); break;
        case ParamRole::kGamma: s.gamma = static_cast<int>(i); break;
        case ParamRole::kBeta: s.beta = static_cast<int>(i); break;
        case ParamRole::kRunningMean: s.rmean = static_cast<int>(i); break;
        case ParamRole::kRunningVar: s.rvar = static_cast<int>(i); break;
      }
    }
    std::vector<int> stack;
    res_begin_of_.assign(spec_.layers.size(), -1);
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
      if (spec_.layers[i].kind == LayerKind::kResBegin) stack.push_back(static_cast<int>(i));
      if (spec_.layers[i].kind == LayerKind::kResEnd) {
        res_begin_of_[i] = stack.back();
        stack.pop_back();
      }
    }
  }

  const ArchSpec& spec() const noexcept { return spec_; }
  const std::vector<FeatureShape>& layer_shapes() const noexcept { return shapes_; }
  std::size_t num_layers() const noexcept { return spec_.layers.size(); }

  /// Throws unless params matches this network's census by name, role and shape.
  void check_params(const ParamSet<T>& params) const {
    if (params.size() != census_.size())
      throw ConfigError("arch '" + spec_.name + "' expects " + std::to_string(census_.size()) +
                        " parameter tensors, got " + std::to_string(params.size()));
    for (std::size_t i = 0; i < census_.size(); ++i) {
      const auto& c = census_[i];
      const auto& p = params[i];
      if (p.name != c.name || p.role != c.role || p.value.shape() != c.shape)
        throw ConfigError("parameter " + std::to_string(i) + " ('" + p.name + "' " +
                          shape_str(p.value.shape()) + ") does not match arch '" + spec_.name +
                          "' ('" + c.name + "' " + shape_str(c.shape) + ")");
    }
  }

  Tensor<T> forward(const ParamSet<T>& params, const Tensor<T>& x, const ForwardOptions& opts,
                    Trace<T>* trace = nullptr) const {
    check_input(x);
    Trace<T> local;
    Trace<T>& tr = trace ? *trace : local;
    const std::size_t L = spec_.layers.size();
    tr = Trace<T>{};
    tr.opts = opts;
    tr.input = x;
    tr.outputs.resize(L);
    tr.cols.resize(L);
    tr.weff.resize(L);
    tr.norm_xhat.resize(L);
    tr.norm_invstd.resize(L);
    tr.norm_mean.resize(L);
    tr.norm_var.resize(L);
    tr.act_pre.resize(L);
    const bool keep = trace != nullptr;
    for (std::size_t i = 0; i < L; ++i) {
      const Tensor<T>& in = i == 0 ? tr.input : tr.outputs[i - 1];
      tr.outputs[i] = forward_layer(i, params, in, tr, keep);
      if (!keep && i > 0 && !needed_later(i - 1)) tr.outputs[i - 1] = Tensor<T>();
    }
    return L == 0 ? x : tr.outputs.back();
  }

  /// Backpropagates output gradients. `injections` maps a layer index to the
  /// gradient of the loss w.r.t. that layer's output; several layers may be
  /// tapped. Parameter gradients are accumulated into `grads` when non-null.
  /// Returns the gradient w.r.t. the network input (empty if not requested).
  Tensor<T> backward(const ParamSet<T>& params, const Trace<T>& tr,
                     const std::vector<std::pair<int, Tensor<T>>>& injections, ParamSet<T>* grads,
                     bool need_input_grad = true) const {
    const int L = static_cast<int>(spec_.layers.size());
    if (static_cast<int>(tr.outputs.size()) != L) throw ConfigError("backward: trace does not match network");
    std::vector<Tensor<T>> pending(L);
    for (const auto& [li, g] : injections) {
      if (li < 0 || li >= L) throw ConfigError("backward: injection layer out of range");
      if (g.shape() != tr.outputs[li].shape()) throw ConfigError("backward: injection shape mismatch");
      accumulate(pending[li], g);
    }
    Tensor<T> g;
    for (int i = L - 1; i >= 0; --i) {
      if (!pending[i].empty()) {
        accumulate(g, pending[i]);
        pending[i] = Tensor<T>();
      }
      if (g.empty()) continue;
      const auto& d = spec_.layers[i];
      if (d.kind == LayerKind::kResEnd) {
        accumulate(pending[res_begin_of_[i]], g);
        continue;  // identity into the branch
      }
      const bool want_dx = i > 0 || need_input_grad;
      g = backward_layer(i, params, tr, g, grads, want_dx);
    }
    return need_input_grad ? g : Tensor<T>();
  }

  Tensor<T> backward(const ParamSet<T>& params, const Trace<T>& tr, const Tensor<T>& grad_out,
                     ParamSet<T>* grads, bool need_input_grad = true) const {
    return backward(params, tr, {{static_cast<int>(spec_.layers.size()) - 1, grad_out}}, grads,
                    need_input_grad);
  }

  /// Folds batch statistics recorded in a training-mode trace into the
  /// running-statistics buffers (momentum 0.1, unbiased variance).
  void commit_batch_stats(ParamSet<T>& params, const Trace<T>& tr, double momentum = 0.1) const {
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
      const auto& d = spec_.layers[i];
      if (d.kind != LayerKind::kNorm || d.norm != NormKind::kBatch || tr.norm_mean[i].empty()) continue;
      auto& rm = params[slots_[i].rmean].value;
      auto& rv = params[slots_[i].rvar].value;
      const auto& in = i == 0 ? tr.input : tr.outputs[i - 1];
      const double M = static_cast<double>(in.dim(0) * in.dim(2) * in.dim(3));
      const double unbias = M > 1 ? M / (M - 1) : 1.0;
      for (int c = 0; c < d.out; ++c) {
        rm[c] = static_cast<T>((1 - momentum) * rm[c] + momentum * tr.norm_mean[i][c]);
        rv[c] = static_cast<T>((1 - momentum) * rv[c] + momentum * tr.norm_var[i][c] * unbias);
      }
    }
  }

 private:
  struct Slots {
    int weight = -1, bias = -1, gamma = -1, beta = -1, rmean = -1, rvar = -1;
  };

  void check_input(const Tensor<T>& x) const {
    const auto& s = spec_.input_shape;
    if (x.rank() != 4 || x.dim(1) != std::size_t(s.c) || x.dim(2) != std::size_t(s.h) ||
        x.dim(3) != std::size_t(s.w) || x.dim(0) == 0)
      throw ConfigError("arch '" + spec_.name + "' expects input [N," + std::to_string(s.c) + "," +
                        std::to_string(s.h) + "," + std::to_string(s.w) + "], got " +
                        shape_str(x.shape()));
  }

  bool needed_later(std::size_t i) const {
    return spec_.layers[i].kind == LayerKind::kResBegin;
  }

  static void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
    if (dst.empty()) {
      dst = src;
      return;
    }
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  }

  const Tensor<T>& kernel_for(std::size_t i, const ParamSet<T>& params, const Trace<T>& tr) const {
    return tr.weff[i].empty() ? params[slots_[i].weight].value : tr.weff[i];
  }

  Tensor<T> forward_layer(std::size_t i, const ParamSet<T>& params, const Tensor<T>& in,
                          Trace<T>& tr, bool keep) const {
    const auto& d = spec_.layers[i];
    const int N = static_cast<int>(in.dim(0));
    const FeatureShape os = shapes_[i];
    switch (d.kind) {
      case LayerKind::kConv:
      case LayerKind::kDeconv:
      case LayerKind::kLinear: {
        if (tr.opts.quant == QuantMode::kFake)
          tr.weff[i] = quantize_weight(params[slots_[i].weight].value, tr.opts.qcfg);
        const Tensor<T>& W = kernel_for(i, params, tr);
        Tensor<T> out({std::size_t(N), std::size_t(os.c), std::size_t(os.h), std::size_t(os.w)});
        if (d.kind == LayerKind::kConv) conv_forward(d, in, W, out, keep ? &tr.cols[i] : nullptr);
        else if (d.kind == LayerKind::kDeconv) deconv_forward(d, in, W, out);
        else linear_forward(d, in, W, out);
        if (d.bias) {
          const auto& b = params[slots_[i].bias].value;
          if (d.kind == LayerKind::kLinear) {
            for (std::size_t k = 0; k < out.size(); ++k) out[k] += b[k % b.size()];
          } else {
            add_bias(out, b);
          }
        }
        if (!keep) tr.weff[i] = Tensor<T>();
        return out;
      }
      case LayerKind::kNorm:
        return norm_forward(i, params, in, tr, keep);
      case LayerKind::kAct: {
        Tensor<T> out(in.shape());
        for (std::size_t k = 0; k < in.size(); ++k) out[k] = detail::act_fn(d.act, in[k]);
        if (d.quant && tr.opts.quant != QuantMode::kOff) {
          if (keep) tr.act_pre[i] = out.vec();
          const T p = static_cast<T>(tr.opts.qcfg.p);
          if (tr.opts.quant == QuantMode::kFake) {
            tr.opts.qcfg.validate();
            const T step = tr.opts.qcfg.template activation_step<T>();
            for (auto& v : out.vec()) v = quantize_activation_scalar(v, p, step);
          } else {
            for (auto& v : out.vec()) v = std::min(std::max(T(0), v), p);
          }
        }
        return out;
      }
      case LayerKind::kResBegin:
        return in;
      case LayerKind::kResEnd: {
        const auto b = static_cast<std::size_t>(res_begin_of_[i]);
        Tensor<T> out = in;
        const auto& skip = tr.outputs[b];
        for (std::size_t k = 0; k < out.size(); ++k) out[k] += skip[k];
        return out;
      }
    }
    return in;
  }

  Tensor<T> backward_layer(int i, const ParamSet<T>& params, const Trace<T>& tr, const Tensor<T>& g,
                           ParamSet<T>* grads, bool want_dx) const {
    const auto& d = spec_.layers[i];
    const Tensor<T>& in = i == 0 ? tr.input : tr.outputs[i - 1];
    switch (d.kind) {
      case LayerKind::kConv:
      case LayerKind::kDeconv:
      case LayerKind::kLinear: {
        const Tensor<T>& W = kernel_for(i, params, tr);
        Tensor<T>* gW = grads ? &(*grads)[slots_[i].weight].value : nullptr;
        if (grads && d.bias) {
          auto& gb = (*grads)[slots_[i].bias].value;
          // Linear biases are per feature (C*H*W), so HW collapses to 1.
          const std::size_t C = gb.size(), N = g.dim(0), HW = g.size() / (N * C);
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c) {
              const T* src = g.data() + (n * C + c) * HW;
              T acc = 0;
              for (std::size_t k = 0; k < HW; ++k) acc += src[k];
              gb[c] += acc;
            }
        }
        if (d.kind == LayerKind::kConv) return conv_backward(d, in, W, tr.cols[i], g, gW, want_dx);
        if (d.kind == LayerKind::kDeconv) return deconv_backward(d, in, W, g, gW, want_dx);
        return linear_backward(d, in, W, g, gW, want_dx);
      }
      case LayerKind::kNorm:
        return norm_backward(i, params, tr, in, g, grads);
      case LayerKind::kAct: {
        const auto& out = tr.outputs[i];
        Tensor<T> dx(in.shape());
        const bool q = d.quant && tr.opts.quant != QuantMode::kOff;
        const T p = static_cast<T>(tr.opts.qcfg.p);
        for (std::size_t k = 0; k < in.size(); ++k) {
          const T y = q ? tr.act_pre[i][k] : out[k];
          T gk = g[k] * detail::act_grad(d.act, in[k], y);
          if (q && !(y >= T(0) && y <= p)) gk = T(0);  // STE mask of q_a
          dx[k] = gk;
        }
        return dx;
      }
      case LayerKind::kResBegin:
      case LayerKind::kResEnd:
        return g;
    }
    return g;
  }

  static void add_bias(Tensor<T>& out, const Tensor<T>& b) {
    const std::size_t N = out.dim(0), C = out.dim(1), HW = out.dim(2) * out.dim(3);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) {
        T* p = out.data() + (n * C + c) * HW;
        const T v = b[c];
        for (std::size_t k = 0; k < HW; ++k) p[k] += v;
      }
  }

  static void conv_forward(const LayerDesc& d, const Tensor<T>& in, const Tensor<T>& W, Tensor<T>& out,
                           std::vector<T>* keep_col) {
    const int N = int(in.dim(0)), C = int(in.dim(1)), H = int(in.dim(2)), Wd = int(in.dim(3));
    const int Ho = int(out.dim(2)), Wo = int(out.dim(3));
    const int K = C * d.kernel * d.kernel;
    const std::size_t cols = std::size_t(N) * Ho * Wo;
    std::vector<T> col(std::size_t(K) * cols);
    detail::im2col(in.data(), N, C, H, Wd, d.kernel, d.stride, d.pad, Ho, Wo, col.data());
    detail::CMapRM<T> Wm(W.data(), d.out, K);
    detail::CMapRM<T> Cm(col.data(), K, cols);
    detail::MatRM<T> Y = Wm * Cm;
    detail::cm_to_nchw(Y.data(), N, d.out, Ho * Wo, out.data());
    if (keep_col) *keep_col = std::move(col);
  }

  static Tensor<T> conv_backward(const LayerDesc& d, const Tensor<T>& in, const Tensor<T>& W,
                                 const std::vector<T>& col, const Tensor<T>& g, Tensor<T>* gW,
                                 bool want_dx) {
    const int N = int(in.dim(0)), C = int(in.dim(1)), H = int(in.dim(2)), Wd = int(in.dim(3));
    const int Ho = int(g.dim(2)), Wo = int(g.dim(3));
    const int K = C * d.kernel * d.kernel;
    const std::size_t cols = std::size_t(N) * Ho * Wo;
    auto gm = detail::nchw_to_cm(g.data(), N, d.out, Ho * Wo);
    detail::CMapRM<T> G(gm.data(), d.out, cols);
    if (gW) {
      if (col.empty()) throw ConfigError("conv backward needs a trace recorded with caching");
      detail::CMapRM<T> Cm(col.data(), K, cols);
      detail::MapRM<T> GW(gW->data(), d.out, K);
      GW.noalias() += G * Cm.transpose();
    }
    if (!want_dx) return Tensor<T>();
    detail::CMapRM<T> Wm(W.data(), d.out, K);
    detail::MatRM<T> dcol = Wm.transpose() * G;
    Tensor<T> dx(in.shape());
    detail::col2im(dcol.data(), N, C, H, Wd, d.kernel, d.stride, d.pad, Ho, Wo, dx.data());
    return dx;
  }

  // Transposed convolution is the adjoint of a convolution whose input is
  // this layer's output. Kernel layout [in, out, k, k].
  static void deconv_forward(const LayerDesc& d, const Tensor<T>& in, const Tensor<T>& W, Tensor<T>& out) {
    const int N = int(in.dim(0)), Ci = int(in.dim(1)), Hi = int(in.dim(2)), Wi = int(in.dim(3));
    const int Ho = int(out.dim(2)), Wo = int(out.dim(3));
    const int K = d.out * d.kernel * d.kernel;
    auto xm = detail::nchw_to_cm(in.data(), N, Ci, Hi * Wi);
    detail::CMapRM<T> X(xm.data(), Ci, std::size_t(N) * Hi * Wi);
    detail::CMapRM<T> Wm(W.data(), Ci, K);
    detail::MatRM<T> col = Wm.transpose() * X;
    out.fill(T(0));
    detail::col2im(col.data(), N, d.out, Ho, Wo, d.kernel, d.stride, d.pad, Hi, Wi, out.data());
  }

  static Tensor<T> deconv_backward(const LayerDesc& d, const Tensor<T>& in, const Tensor<T>& W,
                                   const Tensor<T>& g, Tensor<T>* gW, bool want_dx) {
    const int N = int(in.dim(0)), Ci = int(in.dim(1)), Hi = int(in.dim(2)), Wi = int(in.dim(3));
    const int Ho = int(g.dim(2)), Wo = int(g.dim(3));
    const int K = d.out * d.kernel * d.kernel;
    const std::size_t cols = std::size_t(N) * Hi * Wi;
    std::vector<T> gcol(std::size_t(K) * cols);
    detail::im2col(g.data(), N, d.out, Ho, Wo, d.kernel, d.stride, d.pad, Hi, Wi, gcol.data());
    detail::CMapRM<T> G(gcol.data(), K, cols);
    if (gW) {
      auto xm = detail::nchw_to_cm(in.data(), N, Ci, Hi * Wi);
      detail::CMapRM<T> X(xm.data(), Ci, cols);
      detail::MapRM<T> GW(gW->data(), Ci, K);
      GW.noalias() += X * G.transpose();
    }
    if (!want_dx) return Tensor<T>();
    detail::CMapRM<T> Wm(W.data(), Ci, K);
    detail::MatRM<T> dxm = Wm * G;
    Tensor<T> dx(in.shape());
    detail::cm_to_nchw(dxm.data(), N, Ci, Hi * Wi, dx.data());
    return dx;
  }

  static void linear_forward(const LayerDesc& d, const Tensor<T>& in, const Tensor<T>& W, Tensor<T>& out) {
    const std::size_t N = in.dim(0);
    const std::size_t F = std::size_t(d.out) * d.out_h * d.out_w;
    detail::CMapRM<T> X(in.data(), N, d.in);
    detail::CMapRM<T> Wm(W.data(), F, d.in);
    detail::MapRM<T> Y(out.data(), N, F);
    Y.noalias() = X * Wm.transpose();
  }

  static Tensor<T> linear_backward(const LayerDesc& d, const Tensor<T>& in, const Tensor<T>& W,
                                   const Tensor<T>& g, Tensor<T>* gW, bool want_dx) {
    const std::size_t N = in.dim(0);
    const std::size_t F = std::size_t(d.out) * d.out_h * d.out_w;
    detail::CMapRM<T> G(g.data(), N, F);
    if (gW) {
      detail::CMapRM<T> X(in.data(), N, d.in);
      detail::MapRM<T> GW(gW->data(), F, d.in);
      GW.noalias() += G.transpose() * X;
    }
    if (!want_dx) return Tensor<T>();
    detail::CMapRM<T> Wm(W.data(), F, d.in);
    Tensor<T> dx(in.shape());
    detail::MapRM<T> DX(dx.data(), N, d.in);
    DX.noalias() = G * Wm;
    return dx;
  }

  // y = gamma * (xhat + beta): a zero gamma silences the channel exactly.
  Tensor<T> norm_forward(std::size_t i, const ParamSet<T>& params, const Tensor<T>& in, Trace<T>& tr,
                         bool keep) const {
    const auto& d = spec_.layers[i];
    const auto& gamma = params[slots_[i].gamma].value;
    const auto& beta = params[slots_[i].beta].value;
    const std::size_t N = in.dim(0), C = in.dim(1), HW = in.dim(2) * in.dim(3);
    Tensor<T> out(in.shape());
    std::vector<T> xhat(in.size());
    const bool batch = d.norm == NormKind::kBatch;
    std::vector<T> invstd(batch ? C : N * C);
    auto normalize = [&](std::size_t n, std::size_t c, T mean, T is) {
      const std::size_t off = (n * C + c) * HW;
      for (std::size_t k = 0; k < HW; ++k) {
        const T xh = (in[off + k] - mean) * is;
        xhat[off + k] = xh;
        out[off + k] = gamma[c] * (xh + beta[c]);
      }
    };
    if (!batch) {
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
          const T* x = in.data() + (n * C + c) * HW;
          T mean = 0;
          for (std::size_t k = 0; k < HW; ++k) mean += x[k];
          mean /= static_cast<T>(HW);
          T var = 0;
          for (std::size_t k = 0; k < HW; ++k) var += (x[k] - mean) * (x[k] - mean);
          var /= static_cast<T>(HW);
          const T is = T(1) / std::sqrt(var + static_cast<T>(kNormEps));
          invstd[n * C + c] = is;
          normalize(n, c, mean, is);
        }
    } else {
      std::vector<T> means(C), vars(C);
      const bool use_batch = tr.opts.training;
      for (std::size_t c = 0; c < C; ++c) {
        T mean, var;
        if (use_batch) {
          mean = 0;
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t k = 0; k < HW; ++k) mean += in[(n * C + c) * HW + k];
          mean /= static_cast<T>(N * HW);
          var = 0;
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t k = 0; k < HW; ++k) {
              const T v = in[(n * C + c) * HW + k] - mean;
              var += v * v;
            }
          var /= static_cast<T>(N * HW);
        } else {
          mean = params[slots_[i].rmean].value[c];
          var = params[slots_[i].rvar].value[c];
        }
        means[c] = mean;
        vars[c] = var;
        invstd[c] = T(1) / std::sqrt(var + static_cast<T>(kNormEps));
        for (std::size_t n = 0; n < N; ++n) normalize(n, c, mean, invstd[c]);
      }
      if (keep && use_batch) {
        tr.norm_mean[i] = std::move(means);
        tr.norm_var[i] = std::move(vars);
      }
    }
    if (keep) {
      tr.norm_xhat[i] = std::move(xhat);
      tr.norm_invstd[i] = std::move(invstd);
    }
    return out;
  }

  Tensor<T> norm_backward(int i, const ParamSet<T>& params, const Trace<T>& tr, const Tensor<T>& in,
                          const Tensor<T>& g, ParamSet<T>* grads) const {
    const auto& d = spec_.layers[i];
    const auto& gamma = params[slots_[i].gamma].value;
    const auto& beta = params[slots_[i].beta].value;
    const auto& xhat = tr.norm_xhat[i];
    const auto& invstd = tr.norm_invstd[i];
    const std::size_t N = in.dim(0), C = in.dim(1), HW = in.dim(2) * in.dim(3);
    Tensor<T> dx(in.shape());
    if (grads) {
      auto& gg = (*grads)[slots_[i].gamma].value;
      auto& gb = (*grads)[slots_[i].beta].value;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t off = (n * C + c) * HW;
          T sg = 0, sgx = 0;
          for (std::size_t k = 0; k < HW; ++k) {
            sg += g[off + k];
            sgx += g[off + k] * xhat[off + k];
          }
          gg[c] += sgx + beta[c] * sg;
          gb[c] += gamma[c] * sg;
        }
    }
    const bool batch = d.norm == NormKind::kBatch;
    if (!batch) {
      const T M = static_cast<T>(HW);
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t off = (n * C + c) * HW;
          T s1 = 0, s2 = 0;
          for (std::size_t k = 0; k < HW; ++k) {
            const T dxh = g[off + k] * gamma[c];
            s1 += dxh;
            s2 += dxh * xhat[off + k];
          }
          const T is = invstd[n * C + c];
          for (std::size_t k = 0; k < HW; ++k) {
            const T dxh = g[off + k] * gamma[c];
            dx[off + k] = is * (dxh - s1 / M - xhat[off + k] * s2 / M);
          }
        }
    } else if (tr.opts.training) {
      const T M = static_cast<T>(N * HW);
      for (std::size_t c = 0; c < C; ++c) {
        T s1 = 0, s2 = 0;
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t k = 0; k < HW; ++k) {
            const std::size_t o = (n * C + c) * HW + k;
            const T dxh = g[o] * gamma[c];
            s1 += dxh;
            s2 += dxh * xhat[o];
          }
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t k = 0; k < HW; ++k) {
            const std::size_t o = (n * C + c) * HW + k;
            dx[o] = invstd[c] * (g[o] * gamma[c] - s1 / M - xhat[o] * s2 / M);
          }
      }
    } else {
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t k = 0; k < HW; ++k) {
            const std::size_t o = (n * C + c) * HW + k;
            dx[o] = g[o] * gamma[c] * invstd[c];
          }
    }
    return dx;
  }

  ArchSpec spec_;
  std::vector<FeatureShape> shapes_;
  std::vector<ParamInfo> census_;
  std::vector<Slots> slots_;
  std::vector<int> res_begin_of_;
};

}  // namespace gslim
