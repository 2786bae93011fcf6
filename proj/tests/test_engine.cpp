// Copyright 2026 The gslim Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gslim/engine.hpp"
#include "toys.hpp"

using namespace gslim;
using namespace gslim::testing;

namespace {

struct Rig {
  SlimState<double> s;
  Tensor<double> x, y, g0;
  StepConfig cfg;

  explicit Rig(std::uint64_t seed, double rho = 0.05) {
    InitOptions io;
    io.kernel_std = 0.5;
    s = SlimState<double>(toy_generator(), init_params<double>(toy_generator(), seed, io), toy_discriminator(),
                          init_params<double>(toy_discriminator(), seed + 1, io));
    s.horizon = 50;
    std::mt19937_64 rng(seed);
    x = Tensor<double>({3, 3, 4, 4});
    y = Tensor<double>({3, 3, 4, 4});
    g0 = Tensor<double>({3, 3, 4, 4});
    fill_uniform(x, rng, -1, 1);
    fill_uniform(y, rng, -1, 1);
    fill_uniform(g0, rng, -0.8, 0.8);
    cfg.beta = 2.0;
    cfg.rho = rho;
    cfg.metric = DistillMetric::kMse;
    cfg.schedule = {1e-2, 0.05, 50};
    cfg.gan.prob_floor = 1e-12;
  }

  StepRecord step() { return train_step<double>(s, x, y, g0, nullptr, nullptr, cfg); }
};

// Independent bias-corrected Adam on one scalar stream.
struct ScalarAdam {
  double b1, b2, eps, m = 0, v = 0;
  long t = 0;
  double update(double g, double lr) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
    return lr * mh / (std::sqrt(vh) + eps);
  }
};

}  // namespace

TEST(Schedules, AlphaIdentities) {
  const Schedule s{2e-4, 0.1, 1000};
  EXPECT_EQ(lr_alpha(0, s), 2e-4);
  EXPECT_EQ(lr_alpha(1, s), 2e-4);
  EXPECT_EQ(lr_alpha(500, s), 2e-4);
  EXPECT_DOUBLE_EQ(lr_alpha(750, s), 1e-4);
  EXPECT_EQ(lr_alpha(1000, s), 0.0);
  for (int t = 501; t < 1000; ++t) EXPECT_DOUBLE_EQ(lr_alpha(t, s), 2e-4 * 2.0 * (1000 - t) / 1000.0);
}

TEST(Schedules, EtaIdentities) {
  const Schedule s{2e-4, 0.1, 1000};
  EXPECT_EQ(lr_eta(0, s), 0.1);
  EXPECT_DOUBLE_EQ(lr_eta(500, s), 0.05);
  EXPECT_EQ(lr_eta(1000, s), 0.0);
  for (int t = 0; t <= 1000; t += 50) EXPECT_DOUBLE_EQ(lr_eta(t, s) + lr_eta(1000 - t, s), 0.1) << t;
  for (int t = 1; t <= 1000; ++t) EXPECT_LE(lr_eta(t, s), lr_eta(t - 1, s));
}

TEST(Adam, MatchesIndependentOracle) {
  ParamSet<double> p, g;
  p.add("a", ParamRole::kKernel, 0, Tensor<double>({3}, {0.5, -1.0, 2.0}));
  g.add("a", ParamRole::kKernel, 0, Tensor<double>({3}));
  Adam<double> adam;
  adam.init(p);
  std::vector<ScalarAdam> ref(3, ScalarAdam{0.9, 0.5, 1e-8});
  std::vector<double> w = {0.5, -1.0, 2.0};
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd(0, 1);
  for (int step = 0; step < 20; ++step) {
    for (std::size_t i = 0; i < 3; ++i) g[0].value[i] = nd(rng);
    const double sign = step % 3 == 0 ? -1.0 : 1.0;
    adam.step(p, g, 1e-2, sign, [](ParamRole) { return true; });
    for (std::size_t i = 0; i < 3; ++i) w[i] -= sign * ref[i].update(g[0].value[i], 1e-2);
    for (std::size_t i = 0; i < 3; ++i) ASSERT_NEAR(p[0].value[i], w[i], 1e-14) << step;
  }
}

TEST(Adam, ZeroRateIsANoOp) {
  ParamSet<double> p, g;
  p.add("a", ParamRole::kKernel, 0, Tensor<double>({2}, {1.0, 2.0}));
  g.add("a", ParamRole::kKernel, 0, Tensor<double>({2}, {3.0, -1.0}));
  Adam<double> adam;
  adam.init(p);
  adam.step(p, g, 0.0, 1.0, [](ParamRole) { return true; });
  EXPECT_EQ(adam.steps, 0);
  EXPECT_EQ(p[0].value.vec(), (std::vector<double>{1.0, 2.0}));
  EXPECT_EQ(adam.m[0].value.vec(), (std::vector<double>{0.0, 0.0}));
}

TEST(Adam, ZeroGradientEntryIsLeftAlone) {
  // The unguarded update would grow by beta1 / sqrt(beta2) per step here.
  ScalarAdam ref{0.9, 0.5, 1e-8};
  ref.update(1.0, 1.0);
  double last = 0, u = 0;
  for (int k = 0; k < 30; ++k) {
    last = u;
    u = std::abs(ref.update(0.0, 1.0));
  }
  EXPECT_NEAR(u / last, 0.9 / std::sqrt(0.5), 1e-2);

  ParamSet<double> p, g;
  p.add("a", ParamRole::kKernel, 0, Tensor<double>({2}, {1.0, 2.0}));
  g.add("a", ParamRole::kKernel, 0, Tensor<double>({2}, {0.5, 0.5}));
  Adam<double> adam;
  adam.init(p);
  adam.step(p, g, 1e-2, 1.0, [](ParamRole) { return true; });
  const double second = p[0].value[1];
  const double m0 = adam.m[0].value[0], v0 = adam.v[0].value[0];
  g[0].value[0] = 0.0;
  for (int k = 0; k < 20; ++k) adam.step(p, g, 1e-2, 1.0, [](ParamRole) { return true; });
  EXPECT_NEAR(p[0].value[0], 1.0 - 1e-2, 1e-9);
  EXPECT_EQ(adam.m[0].value[0], m0);
  EXPECT_EQ(adam.v[0].value[0], v0);
  EXPECT_LT(p[0].value[1], second);
}

TEST(Engine, UpdateOrderAndSharedGradientPoint) {
  Rig r(3);
  const auto W0 = r.s.W;
  const auto theta0 = r.s.theta;

  // Gradients at (W^t, gamma^t), computed independently of the step.
  GeneratorObjective<double> obj;
  obj.G = &r.s.G;
  obj.D = &r.s.D;
  obj.theta = &theta0;
  obj.beta = r.cfg.beta;
  obj.metric = r.cfg.metric;
  obj.gan = r.cfg.gan;
  ParamSet<double> grads = W0.zeros_like();
  Tensor<double> fake;
  generator_objective<double>(obj, W0, r.x, r.g0, nullptr, &grads, nullptr, &fake);

  Schedule sched = r.cfg.schedule;
  const double alpha = lr_alpha(1, sched), eta = lr_eta(1, sched);
  const auto rec = r.step();
  EXPECT_EQ(r.s.last_order, (std::vector<std::string>{"W", "gamma", "theta"}));
  EXPECT_EQ(rec.alpha, alpha);
  EXPECT_EQ(rec.eta, eta);

  for (std::size_t k = 0; k < W0.size(); ++k) {
    const auto& p = W0[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      double expect = p.value[i];
      if (p.role == ParamRole::kGamma) {
        const double rho = r.s.G.spec().layers[p.layer].prunable ? r.cfg.rho : 0.0;
        expect = soft_threshold_scalar(p.value[i] - eta * grads[k].value[i], rho * eta);
      } else if (is_trainable(p.role)) {
        ScalarAdam a{0.9, 0.5, 1e-8};
        expect -= a.update(grads[k].value[i], alpha);
      }
      EXPECT_NEAR(r.s.W[k].value[i], expect, 1e-13) << p.name << "[" << i << "]";
    }
  }

  // theta ascends L_theta on the fake batch from W^t.
  ParamSet<double> gth = theta0.zeros_like();
  gan_loss_discriminator(r.s.D, theta0, r.y, fake, r.cfg.gan, nullptr, &gth);
  for (std::size_t k = 0; k < theta0.size(); ++k)
    for (std::size_t i = 0; i < theta0[k].value.size(); ++i) {
      ScalarAdam a{0.9, 0.5, 1e-8};
      EXPECT_NEAR(r.s.theta[k].value[i], theta0[k].value[i] + a.update(gth[k].value[i], alpha), 1e-13);
    }
}

TEST(Engine, FrozenDiscriminatorIsBitIdentical) {
  Rig r(4);
  r.cfg.freeze_theta = true;
  const auto theta0 = r.s.theta;
  for (int k = 0; k < 10; ++k) r.step();
  EXPECT_TRUE(r.s.theta == theta0);
  EXPECT_FALSE(r.s.W == Rig(4).s.W);
}

TEST(Engine, ThetaAscendsItsObjective) {
  // After one ascent step on a batch, L_theta on that batch should go up.
  int up = 0;
  const int trials = 40;
  for (int k = 0; k < trials; ++k) {
    Rig r(100 + k);
    r.cfg.schedule.alpha0 = 1e-3;
    const auto theta0 = r.s.theta;
    Tensor<double> fake;
    GeneratorObjective<double> obj;
    obj.G = &r.s.G;
    obj.D = &r.s.D;
    obj.theta = &theta0;
    obj.gan = r.cfg.gan;
    generator_objective<double>(obj, r.s.W, r.x, Tensor<double>(), nullptr, nullptr, nullptr, &fake);
    const double before = gan_loss_discriminator(r.s.D, theta0, r.y, fake, r.cfg.gan);
    r.step();
    const double after = gan_loss_discriminator(r.s.D, r.s.theta, r.y, fake, r.cfg.gan);
    up += after > before;
  }
  // Binomial(40, 1/2) exceeds 34 with probability below 1e-6.
  EXPECT_GE(up, 35);
}

TEST(Engine, DeterministicAcrossRuns) {
  Rig a(9), b(9);
  for (int k = 0; k < 8; ++k) {
    const auto ra = a.step(), rb = b.step();
    EXPECT_EQ(step_record_json(ra, "p"), step_record_json(rb, "p"));
  }
  EXPECT_TRUE(a.s.W == b.s.W);
  EXPECT_TRUE(a.s.theta == b.s.theta);
}

TEST(Engine, ProximalStepProducesExactZeros) {
  Rig r(5, 50.0);
  r.step();
  EXPECT_GT(gamma_zero_fraction(r.s.G.spec(), r.s.W), 0.99);
  Rig z(5, 0.0);
  z.step();
  EXPECT_EQ(gamma_zero_fraction(z.s.G.spec(), z.s.W), 0.0);
}

TEST(Engine, GuardsHorizonAndNonFiniteLosses) {
  Rig r(6);
  r.s.horizon = 1;
  r.step();
  EXPECT_THROW(r.step(), ConfigError);
  Rig n(7);
  n.x[0] = NAN;
  EXPECT_THROW(n.step(), NumericError);
}

TEST(Engine, SweepRhoFindsTarget) {
  // flops(rho) = 100 / (1 + rho), decreasing.
  const auto res = sweep_rho([](double rho) { return 100.0 / (1.0 + rho); }, 40.0, 0.01, 1e-3, 1e3, 30);
  EXPECT_TRUE(res.converged);
  EXPECT_NEAR(res.value, 40.0, 0.4);
  EXPECT_NEAR(res.rho, 1.5, 0.1);
  EXPECT_THROW(sweep_rho([](double) { return 1.0; }, 1.0, 0.1, 0.0, 1.0), ConfigError);
}
