// Copyright 2026 The gslim Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <type_traits>
#include <vector>

#include "gslim/distill.hpp"
#include "gslim/error.hpp"
#include "gslim/network.hpp"
#include "gslim/params.hpp"
#include "gslim/sparsity.hpp"

namespace gslim {

struct LossBreakdown {
  double gan = 0;
  double distill = 0;
  double l1 = 0;
  double total = 0;
  double beta = 0;
  double rho = 0;
};

/// total = gan + beta * distill + rho * l1.
inline LossBreakdown total_loss_report(double gan, double distill, double l1, double beta, double rho) {
  return {gan, distill, l1, gan + beta * distill + rho * l1, beta, rho};
}

struct GanLossOptions {
  // Generator term: log(1 - D(G(x))) as written, or -log D(G(x)) when set.
  bool nonsaturating = false;
  double prob_floor = 1e-7;
};

/// Counts discriminator outputs that had to be clamped into
/// [floor, 1 - floor] before taking a log.
struct ProbFloorCounter {
  std::uint64_t hits = 0;
};

/// Mean of log(d) (or log(1 - d) when `complement`) with d clamped to
/// [floor, 1 - floor]. `grad` receives d(mean)/d(d_k), zero where clamped.
template <class T>
double mean_log_prob(const Tensor<T>& d, bool complement, double floor, ProbFloorCounter* counter,
                     Tensor<T>* grad = nullptr) {
  if (d.size() == 0) throw ConfigError("mean_log_prob: empty discriminator output");
  const double inv = 1.0 / double(d.size());
  if (grad) *grad = Tensor<T>(d.shape());
  double s = 0;
  for (std::size_t k = 0; k < d.size(); ++k) {
    double p = d[k];
    if (!std::isfinite(p)) throw NumericError("discriminator produced a non-finite output");
    bool clamped = false;
    if (p < floor) p = floor, clamped = true;
    if (p > 1.0 - floor) p = 1.0 - floor, clamped = true;
    if (clamped && counter) ++counter->hits;
    const double q = complement ? 1.0 - p : p;
    s += std::log(q);
    if (grad) (*grad)[k] = clamped ? T(0) : static_cast<T>((complement ? -inv : inv) / q);
  }
  return s * inv;
}

/// mean log D(x) (or mean log(1 - D(x)) when `complement`), with D's
/// probabilities clamped to [floor, 1 - floor] as in mean_log_prob. When D
/// ends in a sigmoid the log-probabilities and their gradients are taken
/// from the logits: clamped entries then pass the unclamped log-sigmoid
/// derivative, so a saturated discriminator still receives a gradient.
/// `sign` scales the accumulated gradients into `grad_theta` / `grad_x`.
template <class T>
double discriminator_log_term(const Network<T>& D, const ParamSet<T>& theta, const Tensor<T>& x, bool complement,
                              const GanLossOptions& opt, ProbFloorCounter* counter,
                              std::type_identity_t<ParamSet<T>>* grad_theta,
                              std::type_identity_t<Tensor<T>>* grad_x, double sign = 1.0) {
  const bool need = grad_theta || grad_x;
  const auto& layers = D.spec().layers;
  const bool sigmoid_head = layers.size() >= 2 && layers.back().kind == LayerKind::kAct &&
                            layers.back().act == ActKind::kSigmoid;
  ForwardOptions fo;
  Trace<T> tr;
  Tensor<T> out = D.forward(theta, x, fo, &tr);
  if (!sigmoid_head) {
    Tensor<T> g;
    const double v = mean_log_prob(out, complement, opt.prob_floor, counter, need ? &g : nullptr);
    if (need) {
      for (auto& e : g.vec()) e = static_cast<T>(sign * e);
      Tensor<T> gx = D.backward(theta, tr, g, grad_theta, grad_x != nullptr);
      if (grad_x) *grad_x = std::move(gx);
    }
    return v;
  }
  const int L = static_cast<int>(layers.size());
  const Tensor<T>& z = tr.outputs[L - 2];
  const double inv = 1.0 / double(z.size());
  const double lo = std::log(opt.prob_floor), hi = std::log1p(-opt.prob_floor);
  Tensor<T> g(z.shape());
  double s = 0;
  for (std::size_t k = 0; k < z.size(); ++k) {
    const double zk = z[k];
    if (!std::isfinite(zk)) throw NumericError("discriminator produced a non-finite output");
    // log sigma(z) = -softplus(-z), log(1 - sigma(z)) = -softplus(z).
    const double u = complement ? zk : -zk;
    double lp = -(std::max(u, 0.0) + std::log1p(std::exp(-std::abs(u))));
    if (lp < lo || lp > hi) {
      lp = std::clamp(lp, lo, hi);
      if (counter) ++counter->hits;
    }
    s += lp;
    const double sig_u = u >= 0 ? 1.0 / (1.0 + std::exp(-u)) : std::exp(u) / (1.0 + std::exp(u));
    g[k] = static_cast<T>(sign * inv * (complement ? -sig_u : sig_u));
  }
  if (need) {
    Tensor<T> gx = D.backward(theta, tr, {{L - 2, std::move(g)}}, grad_theta, grad_x != nullptr);
    if (grad_x) *grad_x = std::move(gx);
  }
  return s * inv;
}

/// L_theta = mean log D(y) + mean log(1 - D(fake)). The fake batch is a
/// constant here. `grad_theta` accumulates dL_theta/dtheta (ascent direction).
template <class T>
double gan_loss_discriminator(const Network<T>& D, const ParamSet<T>& theta, const Tensor<T>& real,
                              const Tensor<T>& fake, const GanLossOptions& opt = {},
                              ProbFloorCounter* counter = nullptr,
                              std::type_identity_t<ParamSet<T>>* grad_theta = nullptr) {
  return discriminator_log_term(D, theta, real, false, opt, counter, grad_theta, nullptr) +
         discriminator_log_term(D, theta, fake, true, opt, counter, grad_theta, nullptr);
}

/// Generator side of the adversarial loss on a fake batch: mean log(1 - D)
/// (or -mean log D when non-saturating). `grad_fake` receives its gradient
/// w.r.t. the fake images; theta is a constant.
template <class T>
double generator_gan_term(const Network<T>& D, const ParamSet<T>& theta, const Tensor<T>& fake,
                          const GanLossOptions& opt, ProbFloorCounter* counter, Tensor<T>* grad_fake) {
  if (opt.nonsaturating) return -discriminator_log_term(D, theta, fake, false, opt, counter, nullptr, grad_fake, -1.0);
  return discriminator_log_term(D, theta, fake, true, opt, counter, nullptr, grad_fake);
}

/// Inputs shared by L_W and L_gamma: both are the same functional,
/// differentiated w.r.t. different parameter groups.
template <class T>
struct GeneratorObjective {
  const Network<T>* G = nullptr;
  const Network<T>* D = nullptr;
  const ParamSet<T>* theta = nullptr;
  const FeatureExtractor<T>* extractor = nullptr;  // perceptual metric only
  double beta = 0;
  DistillMetric metric = DistillMetric::kPerceptual;
  ForwardOptions gen_opts;  // quantization mode of G_q
  GanLossOptions gan;
};

struct GeneratorLoss {
  double gan = 0;
  double distill = 0;
  double value(double beta) const { return gan + beta * distill; }
};

/// Evaluates mean[log(1 - D(G_q(x)))] + beta * d(G_q(x), G0(x)) and, when
/// `grads` is non-null, accumulates its gradient w.r.t. every generator
/// parameter through one backward pass (STE through the quantizers). D and
/// the teacher outputs are constants. `g0_out` may be empty, which drops the
/// distillation term. `fake_out` receives G_q(x).
template <class T>
GeneratorLoss generator_objective(const GeneratorObjective<T>& obj, const ParamSet<T>& params, const Tensor<T>& x,
                                  const Tensor<T>& g0_out, const std::vector<Tensor<T>>* g0_features,
                                  ParamSet<T>* grads, ProbFloorCounter* counter = nullptr,
                                  Tensor<T>* fake_out = nullptr, Trace<T>* gen_trace = nullptr) {
  if (!obj.G || !obj.D || !obj.theta) throw ConfigError("generator objective is incomplete");
  Trace<T> local;
  Trace<T>& tr = gen_trace ? *gen_trace : local;
  const bool need_grad = grads != nullptr;
  auto fake = obj.G->forward(params, x, obj.gen_opts, need_grad || gen_trace ? &tr : nullptr);
  GeneratorLoss out;

  Tensor<T> gfake;
  out.gan = generator_gan_term(*obj.D, *obj.theta, fake, obj.gan, counter, need_grad ? &gfake : nullptr);

  if (!g0_out.empty()) {
    Tensor<T> gdist;
    out.distill = distill_loss(fake, g0_out, obj.metric, obj.extractor,
                               need_grad && obj.beta != 0 ? &gdist : nullptr, g0_features);
    if (need_grad && obj.beta != 0)
      for (std::size_t k = 0; k < gfake.size(); ++k) gfake[k] += static_cast<T>(obj.beta) * gdist[k];
  }
  if (need_grad) obj.G->backward(params, tr, gfake, grads, false);
  if (fake_out) *fake_out = std::move(fake);
  return out;
}

/// True for the parameters updated by the proximal gamma step.
inline bool is_gamma_group(ParamRole r) { return r == ParamRole::kGamma; }

/// True for W: every trainable generator tensor except the norm scales.
inline bool is_w_group(ParamRole r) { return is_trainable(r) && r != ParamRole::kGamma; }

/// L_W value and its gradient restricted to W (gamma entries of `grad_w` stay zero).
template <class T>
double loss_W(const GeneratorObjective<T>& obj, const ParamSet<T>& params, const Tensor<T>& x,
              const Tensor<T>& g0_out, ParamSet<T>* grad_w = nullptr) {
  ParamSet<T> g = params.zeros_like();
  auto l = generator_objective<T>(obj, params, x, g0_out, nullptr, grad_w ? &g : nullptr);
  if (grad_w) {
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!is_w_group(g[i].role)) g[i].value.fill(T(0));
    *grad_w = std::move(g);
  }
  return l.value(obj.beta);
}

/// L_gamma (the rho * ||gamma||_1 part excluded) and its gradient restricted to gamma.
template <class T>
double loss_gamma_fidelity(const GeneratorObjective<T>& obj, const ParamSet<T>& params, const Tensor<T>& x,
                           const Tensor<T>& g0_out, ParamSet<T>* grad_gamma = nullptr) {
  ParamSet<T> g = params.zeros_like();
  auto l = generator_objective<T>(obj, params, x, g0_out, nullptr, grad_gamma ? &g : nullptr);
  if (grad_gamma) {
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!is_gamma_group(g[i].role)) g[i].value.fill(T(0));
    *grad_gamma = std::move(g);
  }
  return l.value(obj.beta);
}

}  // namespace gslim
