// Copyright 2026 The gslim Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gslim/models.hpp"
#include "gslim/objective.hpp"
#include "grad_check.hpp"
#include "toys.hpp"

using namespace gslim;
using namespace gslim::testing;

namespace {

struct Toys {
  Network<double> G{toy_generator()};
  Network<double> D{toy_discriminator()};
  ParamSet<double> W, theta;
  Tensor<double> x, y, g0;
  FeatureExtractor<double> E = toy_extractor(99);

  explicit Toys(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    InitOptions io;
    io.kernel_std = 0.5;
    W = init_params<double>(G.spec(), seed, io);
    theta = init_params<double>(D.spec(), seed + 1, io);
    for (auto* ps : {&W, &theta})
      for (auto& p : *ps)
        if (p.role == ParamRole::kBias || p.role == ParamRole::kBeta) fill_uniform(p.value, rng, -0.3, 0.3);
    x = Tensor<double>({3, 3, 4, 4});
    y = Tensor<double>({3, 3, 4, 4});
    g0 = Tensor<double>({3, 3, 4, 4});
    fill_uniform(x, rng, -1, 1);
    fill_uniform(y, rng, -1, 1);
    fill_uniform(g0, rng, -0.8, 0.8);
  }

  GeneratorObjective<double> objective(double beta, DistillMetric metric, bool nonsat) const {
    GeneratorObjective<double> o;
    o.G = &G;
    o.D = &D;
    o.theta = &theta;
    o.extractor = &E;
    o.beta = beta;
    o.metric = metric;
    o.gan.nonsaturating = nonsat;
    o.gan.prob_floor = 1e-12;
    return o;
  }
};

}  // namespace

TEST(Objective, ThetaGradientMatchesFiniteDifferences) {
  Toys t(3);
  ASSERT_LE(t.theta.numel(), 100u);
  const Tensor<double> fake = t.G.forward(t.W, t.x, {});
  GanLossOptions opt;
  opt.prob_floor = 1e-12;
  ParamSet<double> g = t.theta.zeros_like();
  gan_loss_discriminator(t.D, t.theta, t.y, fake, opt, nullptr, &g);
  auto f = [&] { return gan_loss_discriminator(t.D, t.theta, t.y, fake, opt); };
  for (std::size_t k = 0; k < t.theta.size(); ++k)
    for (std::size_t i = 0; i < t.theta[k].value.size(); ++i) {
      const double fd = central_diff(f, t.theta[k].value[i], 1e-5);
      EXPECT_LT(rel_err(g[k].value[i], fd, 1e-6), 1e-4) << t.theta[k].name << "[" << i << "]";
    }
}

TEST(Objective, GammaAndWGradientsMatchFiniteDifferences) {
  for (auto metric : {DistillMetric::kMse, DistillMetric::kPerceptual})
    for (bool nonsat : {false, true}) {
      Toys t(11);
      ASSERT_LE(t.W.numel(), 100u);
      const auto obj = t.objective(2.5, metric, nonsat);
      ParamSet<double> gg, gw;
      loss_gamma_fidelity(obj, t.W, t.x, t.g0, &gg);
      loss_W(obj, t.W, t.x, t.g0, &gw);
      auto f = [&] { return loss_gamma_fidelity(obj, t.W, t.x, t.g0); };
      for (std::size_t k = 0; k < t.W.size(); ++k) {
        const bool gamma = t.W[k].role == ParamRole::kGamma;
        for (std::size_t i = 0; i < t.W[k].value.size(); ++i) {
          const double fd = central_diff(f, t.W[k].value[i], 1e-5);
          const double an = gamma ? gg[k].value[i] : gw[k].value[i];
          EXPECT_LT(rel_err(an, fd, 1e-6), 1e-4)
              << to_string(metric) << " nonsat=" << nonsat << " " << t.W[k].name << "[" << i << "]";
          // Each restricted gradient is zero outside its group.
          EXPECT_EQ(gamma ? gw[k].value[i] : gg[k].value[i], 0.0);
        }
      }
    }
}

TEST(Objective, LogitPathMatchesProbabilityFormWhenUnclamped) {
  Toys t(5);
  GanLossOptions opt;
  opt.prob_floor = 1e-12;
  for (bool complement : {false, true}) {
    ProbFloorCounter c;
    const double v = discriminator_log_term<double>(t.D, t.theta, t.y, complement, opt, &c, nullptr, nullptr);
    const auto d = t.D.forward(t.theta, t.y, {});
    const double ref = mean_log_prob(d, complement, opt.prob_floor, nullptr);
    EXPECT_NEAR(v, ref, 1e-12);
    EXPECT_EQ(c.hits, 0u);
  }
}

TEST(Objective, SaturatedDiscriminatorStillGetsGradient) {
  Toys t(6);
  // Push every logit far positive.
  auto& bias = t.theta.get(param_name(2, "bias")).value;
  bias[0] = 40.0;
  GanLossOptions opt;
  ProbFloorCounter c;
  ParamSet<double> g = t.theta.zeros_like();
  const double v = discriminator_log_term<double>(t.D, t.theta, t.y, true, opt, &c, &g, nullptr);
  EXPECT_NEAR(v, std::log(opt.prob_floor), 1e-9);
  EXPECT_EQ(c.hits, t.D.forward(t.theta, t.y, {}).size());
  // d/dz log(1 - sigma(z)) = -sigma(z) ~ -1 on every entry, so the bias gradient is ~ -1.
  EXPECT_NEAR(g.get(param_name(2, "bias")).value[0], -1.0, 1e-9);
}

TEST(Objective, ProbabilityFormClampsAndCounts) {
  Tensor<double> d({4}, {0.0, 0.5, 1.0, 0.25});
  ProbFloorCounter c;
  Tensor<double> g;
  const double v = mean_log_prob(d, false, 1e-3, &c, &g);
  EXPECT_NEAR(v, (std::log(1e-3) + std::log(0.5) + std::log(1 - 1e-3) + std::log(0.25)) / 4, 1e-15);
  EXPECT_EQ(c.hits, 2u);
  EXPECT_EQ(g[0], 0.0);
  EXPECT_EQ(g[2], 0.0);
  EXPECT_DOUBLE_EQ(g[1], 0.25 / 0.5);
}

TEST(Objective, GeneratorTermDirections) {
  Toys t(8);
  const Tensor<double> fake = t.G.forward(t.W, t.x, {});
  GanLossOptions sat, ns;
  sat.prob_floor = ns.prob_floor = 1e-12;
  ns.nonsaturating = true;
  const auto d = t.D.forward(t.theta, fake, {});
  EXPECT_NEAR(generator_gan_term<double>(t.D, t.theta, fake, sat, nullptr, nullptr), mean_log_prob(d, true, 1e-12, nullptr),
              1e-12);
  EXPECT_NEAR(generator_gan_term<double>(t.D, t.theta, fake, ns, nullptr, nullptr), -mean_log_prob(d, false, 1e-12, nullptr),
              1e-12);
  for (const auto& opt : {sat, ns}) {
    Tensor<double> g;
    Tensor<double> f = fake;
    generator_gan_term<double>(t.D, t.theta, f, opt, nullptr, &g);
    auto val = [&] { return generator_gan_term<double>(t.D, t.theta, f, opt, nullptr, nullptr); };
    for (std::size_t i = 0; i < f.size(); i += 7) {
      const double fd = central_diff(val, f[i], 1e-5);
      EXPECT_LT(rel_err(g[i], fd, 1e-6), 1e-4) << i;
    }
  }
}

TEST(Objective, SteBackwardEqualsMasks) {
  // Flagged ReLU followed by q_a: the input gradient is 1 on (0, p], else 0.
  ArchSpec s;
  s.name = "ste";
  s.input_shape = {1, 3, 3};
  s.layers.push_back(LayerDesc::activation(ActKind::kRelu, true));
  Network<double> net(s);
  ParamSet<double> none;
  Tensor<double> x({1, 1, 3, 3}, {-2.0, -0.1, 0.0, 0.3, 1.7, 3.99, 4.0, 4.01, 9.0});
  ForwardOptions o;
  o.quant = QuantMode::kFake;
  Trace<double> tr;
  net.forward(none, x, o, &tr);
  const auto gx = net.backward(none, tr, Tensor<double>(x.shape(), 1.0), nullptr);
  const std::vector<double> expect = {0, 0, 0, 1, 1, 1, 1, 0, 0};
  EXPECT_EQ(gx.vec(), expect);

  // Kernels: the gradient w.r.t. W equals the gradient w.r.t. q_w(W).
  ArchSpec c;
  c.name = "stek";
  c.input_shape = {2, 4, 4};
  c.layers.push_back(LayerDesc::conv(2, 3, 3, 1, 1));
  Network<double> cn(c);
  InitOptions io;
  io.kernel_std = 0.5;
  auto p = init_params<double>(c, 2, io);
  std::mt19937_64 rng(1);
  Tensor<double> xin({2, 2, 4, 4}), up({2, 3, 4, 4});
  fill_uniform(xin, rng, -1, 1);
  fill_uniform(up, rng, -1, 1);
  o.qcfg.n = 3;
  auto g_fake = p.zeros_like();
  Trace<double> t1;
  cn.forward(p, xin, o, &t1);
  const auto dx_fake = cn.backward(p, t1, up, &g_fake);
  auto pq = finalize_weights(p, o.qcfg);
  auto g_ref = p.zeros_like();
  Trace<double> t2;
  cn.forward(pq, xin, {}, &t2);
  const auto dx_ref = cn.backward(pq, t2, up, &g_ref);
  EXPECT_TRUE(g_fake == g_ref);
  EXPECT_EQ(dx_fake.vec(), dx_ref.vec());
}

TEST(Objective, TotalLossReport) {
  const auto r = total_loss_report(-1.5, 0.25, 3.0, 10.0, 0.1);
  EXPECT_DOUBLE_EQ(r.total, -1.5 + 2.5 + 0.3);
  EXPECT_EQ(r.beta, 10.0);
  EXPECT_EQ(r.rho, 0.1);
}
