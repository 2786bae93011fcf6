// Copyright 2026 The gslim Authors.
// SPDX-License-Identifier: Apache-2.0

// Alternating minimax training of (W, gamma, theta): Adam on W, proximal
// SGD on gamma, Adam ascent on theta, one of each per iteration in that
// order.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"

#include "gslim/network.hpp"
#include "gslim/objective.hpp"
#include "gslim/params.hpp"
#include "gslim/quantization.hpp"
#include "gslim/sparsity.hpp"

namespace gslim {

// ---------------------------------------------------------------------------
// Schedules
// ---------------------------------------------------------------------------

struct Schedule {
  double alpha0 = 2e-4;
  double eta0 = 0.01;
  long T = 2000;
};

/// alpha0 up to T/2, then linear to zero at T.
inline double lr_alpha(double t, const Schedule& s) {
  const double T = static_cast<double>(s.T);
  if (s.T <= 0 || t <= T / 2) return s.alpha0;
  if (t >= T) return 0.0;
  return s.alpha0 * (2.0 * (T - t) / T);
}

/// eta0 * (1 + cos(pi t / T)) / 2.
inline double lr_eta(double t, const Schedule& s) {
  if (s.T <= 0) return s.eta0;
  return s.eta0 * (1.0 + std::cos(std::numbers::pi * t / static_cast<double>(s.T))) / 2.0;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <class T>
struct Adam {
  double beta1 = 0.9;
  double beta2 = 0.5;
  double eps = 1e-8;
  long steps = 0;
  ParamSet<T> m, v;

  void init(const ParamSet<T>& like) {
    m = like.zeros_like();
    v = like.zeros_like();
    steps = 0;
  }

  /// One step on every parameter selected by `use`. sign = +1 descends,
  /// -1 ascends. A zero rate leaves parameters and moments untouched, and
  /// so does an exactly zero gradient entry (a silenced channel): with
  /// beta2 < beta1^2 the corrected ratio m / sqrt(v) grows by beta1 /
  /// sqrt(beta2) per step once the gradient vanishes.
  template <class Pred>
  void step(ParamSet<T>& p, const ParamSet<T>& g, double lr, double sign, Pred use) {
    if (lr == 0.0) return;
    if (m.size() != p.size()) init(p);
    ++steps;
    const double c1 = 1.0 - std::pow(beta1, double(steps));
    const double c2 = 1.0 - std::pow(beta2, double(steps));
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (!use(p[i].role)) continue;
      auto& w = p[i].value;
      const auto& gi = g[i].value;
      auto& mi = m[i].value;
      auto& vi = v[i].value;
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double gk = gi[k];
        if (gk == 0.0) continue;
        const double mk = beta1 * mi[k] + (1 - beta1) * gk;
        const double vk = beta2 * vi[k] + (1 - beta2) * gk * gk;
        mi[k] = static_cast<T>(mk);
        vi[k] = static_cast<T>(vk);
        const double upd = (mk / c1) / (std::sqrt(vk / c2) + eps);
        w[k] = static_cast<T>(double(w[k]) - sign * lr * upd);
      }
    }
  }
};

// ---------------------------------------------------------------------------
// One iteration
// ---------------------------------------------------------------------------

template <class T>
struct SlimState {
  Network<T> G;
  ParamSet<T> W;  // every generator tensor, gamma included
  Network<T> D;
  ParamSet<T> theta;
  Adam<T> adam_w;
  Adam<T> adam_theta;
  long t = 1;
  long horizon = 0;  // T of the current phase
  ProbFloorCounter floor_hits;
  std::vector<std::string> last_order;  // update order of the latest step

  SlimState() = default;
  SlimState(const ArchSpec& g, ParamSet<T> w, const ArchSpec& d, ParamSet<T> th)
      : G(g), W(std::move(w)), D(d), theta(std::move(th)) {
    G.check_params(W);
    D.check_params(theta);
    adam_w.init(W);
    adam_theta.init(theta);
  }
};

struct StepConfig {
  double beta = 0;
  double rho = 0;
  DistillMetric metric = DistillMetric::kPerceptual;
  bool quant = false;
  QuantConfig qcfg;
  Schedule schedule;
  bool freeze_theta = false;
  bool gamma_adam = false;  // plain dense training: gamma joins W in Adam
  GanLossOptions gan;
};

struct StepRecord {
  long t = 0;
  double alpha = 0;
  double eta = 0;
  LossBreakdown loss;
  double l_theta = 0;
  double gamma_zero_fraction = 0;
  std::string order;
};

inline std::string step_record_json(const StepRecord& r, const std::string& phase) {
  nlohmann::ordered_json j;
  j["phase"] = phase;
  j["t"] = r.t;
  j["alpha"] = r.alpha;
  j["eta"] = r.eta;
  j["gan"] = r.loss.gan;
  j["distill"] = r.loss.distill;
  j["l1"] = r.loss.l1;
  j["total"] = r.loss.total;
  j["beta"] = r.loss.beta;
  j["rho"] = r.loss.rho;
  j["l_theta"] = r.l_theta;
  j["gamma_zero_fraction"] = r.gamma_zero_fraction;
  return j.dump();
}

/// Raised on a non-finite loss; carries the state at the failing step.
template <class T>
struct NumericFailure : NumericError {
  NumericFailure(const std::string& what, ParamSet<T> w, ParamSet<T> th)
      : NumericError(what), W(std::move(w)), theta(std::move(th)) {}
  ParamSet<T> W, theta;
};

/// One slimming iteration on a minibatch. `g0_out` (teacher outputs for
/// x) may be empty when beta = 0. Gradients for W and gamma come from one
/// backward pass at (W^t, gamma^t); the discriminator ascends on the same
/// fake batch, detached.
template <class T>
StepRecord train_step(SlimState<T>& s, const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& g0_out,
                      const std::type_identity_t<std::vector<Tensor<T>>>* g0_features,
                      const std::type_identity_t<FeatureExtractor<T>>* extractor, const StepConfig& cfg) {
  if (s.horizon > 0 && s.t > s.horizon) throw ConfigError("train_step: t exceeds the horizon T");
  StepRecord rec;
  rec.t = s.t;
  Schedule sched = cfg.schedule;
  sched.T = s.horizon;
  rec.alpha = lr_alpha(double(s.t), sched);
  rec.eta = lr_eta(double(s.t), sched);
  s.last_order.clear();

  GeneratorObjective<T> obj;
  obj.G = &s.G;
  obj.D = &s.D;
  obj.theta = &s.theta;
  obj.extractor = extractor;
  obj.beta = cfg.beta;
  obj.metric = cfg.metric;
  obj.gen_opts.quant = cfg.quant ? QuantMode::kFake : QuantMode::kOff;
  obj.gen_opts.qcfg = cfg.qcfg;
  obj.gan = cfg.gan;

  const double l1 = l1_norm(s.G.spec(), s.W);
  ParamSet<T> grads = s.W.zeros_like();
  Tensor<T> fake;
  Trace<T> gtr;
  const Tensor<T> no_teacher;
  const auto gl = generator_objective(obj, s.W, x, cfg.beta != 0 ? g0_out : no_teacher, g0_features, &grads,
                                      &s.floor_hits, &fake, &gtr);
  rec.loss = total_loss_report(gl.gan, gl.distill, l1, cfg.beta, cfg.rho);
  if (!std::isfinite(rec.loss.total) || !all_finite<T>(fake.span()))
    throw NumericFailure<T>("non-finite generator loss at t=" + std::to_string(s.t) + " (gan=" +
                                std::to_string(gl.gan) + ", distill=" + std::to_string(gl.distill) + ")",
                            s.W, s.theta);
  for (const auto& gp : grads)
    if (!all_finite<T>(gp.value.span()))
      throw NumericFailure<T>("non-finite gradient for '" + gp.name + "' at t=" + std::to_string(s.t), s.W, s.theta);

  // (1) W
  if (cfg.gamma_adam) {
    s.adam_w.step(s.W, grads, rec.alpha, +1.0, [](ParamRole r) { return is_trainable(r); });
  } else {
    s.adam_w.step(s.W, grads, rec.alpha, +1.0, [](ParamRole r) { return is_w_group(r); });
  }
  s.last_order.push_back("W");

  // (2) gamma: proximal step on prunable scales, plain SGD on the rest.
  if (!cfg.gamma_adam) {
    for (std::size_t i = 0; i < s.W.size(); ++i) {
      if (!is_gamma_group(s.W[i].role)) continue;
      const bool prunable = s.G.spec().layers[s.W[i].layer].prunable;
      prox_step_inplace(s.W[i].value, grads[i].value, rec.eta, prunable ? cfg.rho : 0.0);
    }
  }
  s.last_order.push_back("gamma");

  // (3) theta ascends L_theta.
  if (!cfg.freeze_theta) {
    ParamSet<T> gth = s.theta.zeros_like();
    rec.l_theta = gan_loss_discriminator(s.D, s.theta, y, fake, cfg.gan, &s.floor_hits, &gth);
    if (!std::isfinite(rec.l_theta))
      throw NumericFailure<T>("non-finite discriminator loss at t=" + std::to_string(s.t), s.W, s.theta);
    s.adam_theta.step(s.theta, gth, rec.alpha, -1.0, [](ParamRole r) { return is_trainable(r); });
  } else {
    rec.l_theta = gan_loss_discriminator(s.D, s.theta, y, fake, cfg.gan, &s.floor_hits, static_cast<ParamSet<T>*>(nullptr));
  }
  s.last_order.push_back("theta");
  // Batch-norm generators fold this batch's statistics into their buffers.
  s.G.commit_batch_stats(s.W, gtr);

  rec.gamma_zero_fraction = gamma_zero_fraction(s.G.spec(), s.W);
  rec.order = "W,gamma,theta";
  ++s.t;
  return rec;
}

/// Bisection on log(rho) for a monotonically non-increasing `flops_of(rho)`,
/// stopping once the value is within `tol` (relative) of `target`.
struct RhoSweepResult {
  double rho = 0;
  double value = 0;
  int evaluations = 0;
  bool converged = false;
};

inline RhoSweepResult sweep_rho(const std::function<double(double)>& value_of, double target, double tol,
                                double lo, double hi, int max_evals = 8) {
  if (!(lo > 0 && hi > lo)) throw ConfigError("sweep_rho: need 0 < lo < hi");
  RhoSweepResult best;
  double best_err = INFINITY;
  double a = std::log(lo), b = std::log(hi);
  for (int k = 0; k < max_evals; ++k) {
    const double rho = std::exp(0.5 * (a + b));
    const double v = value_of(rho);
    ++best.evaluations;
    const double err = std::abs(v - target) / target;
    if (err < best_err) {
      best_err = err;
      best.rho = rho;
      best.value = v;
    }
    if (err <= tol) {
      best.converged = true;
      break;
    }
    if (v > target) a = std::log(rho);  // not pruned enough: larger rho
    else b = std::log(rho);
  }
  return best;
}

}  // namespace gslim
