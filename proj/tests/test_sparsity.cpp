// Copyright 2026 The gslim Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gslim/metrics.hpp"
#include "gslim/models.hpp"
#include "gslim/sparsity.hpp"
#include "oracles.hpp"

using namespace gslim;
using namespace gslim::testing;

TEST(Sparsity, SoftThresholdMatchesGridSearch) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ux(-2.0, 2.0), ul(0.0, 1.5);
  for (int i = 0; i < 60; ++i) {
    const double x = ux(rng), l = ul(rng);
    const double st = soft_threshold_scalar(x, l);
    EXPECT_NEAR(st, grid_prox(x, l), 1e-3) << "x=" << x << " lambda=" << l;
  }
  for (double x : {-0.3, 0.0, 0.3}) EXPECT_NEAR(soft_threshold_scalar(x, 0.3), grid_prox(x, 0.3), 1e-3);
}

TEST(Sparsity, SoftThresholdHandValues) {
  const std::vector<double> x = {-2.0, -0.5, 0.0, 0.5, 0.7, 3.0};
  const auto y = soft_threshold<double>(x, 0.5);
  const std::vector<double> expect = {-1.5, 0.0, 0.0, 0.0, 0.2, 2.5};
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], expect[i], 1e-15);
  EXPECT_THROW(soft_threshold<double>(x, -0.1), ConfigError);
}

TEST(Sparsity, ProxStepIsGradientStepThenShrink) {
  const std::vector<double> g = {0.9, -0.2, 0.1, 0.0}, grad = {1.0, 2.0, -1.0, 0.5};
  const double eta = 0.1, rho = 2.0;
  const auto out = prox_step<double>(g, grad, eta, rho);
  for (std::size_t i = 0; i < g.size(); ++i)
    EXPECT_NEAR(out[i], grid_prox(g[i] - eta * grad[i], rho * eta), 1e-3) << i;
  // rho = 0 reduces to plain gradient descent.
  const auto sgd = prox_step<double>(g, grad, eta, 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_DOUBLE_EQ(sgd[i], g[i] - eta * grad[i]);
  EXPECT_THROW(prox_step<double>(g, std::vector<double>{1.0}, eta, rho), ConfigError);
}

TEST(Sparsity, ChannelMaskThresholdAndFallback) {
  const std::vector<double> g = {0.0, -0.2, 0.05, 0.0};
  auto m = channel_mask<double>(g, 0.0);
  EXPECT_EQ(m.keep, (std::vector<bool>{false, true, true, false}));
  m = channel_mask<double>(g, 0.1);
  EXPECT_EQ(m.keep, (std::vector<bool>{false, true, false, false}));
  const std::vector<double> z = {0.0, 0.0, 0.0};
  EXPECT_EQ(channel_mask<double>(z, 0.0).kept_indices(), (std::vector<int>{0}));
  EXPECT_THROW(channel_mask<double>(z, 0.0, false), ConfigError);
}

TEST(Sparsity, ZeroFractionAndL1CountPrunableOnly) {
  const ArchSpec spec = builtin_spec("desk_resnet3_32");
  auto p = init_params<double>(spec, 1);
  std::size_t total = 0, zeros = 0;
  for (auto& e : p) {
    if (e.role != ParamRole::kGamma) continue;
    if (!spec.layers[e.layer].prunable) {
      e.value.fill(0.0);  // zeros outside the prunable set do not count
      continue;
    }
    e.value[0] = 0.0;
    ++zeros;
    total += e.value.size();
  }
  double l1 = 0;
  for (const auto& e : p)
    if (e.role == ParamRole::kGamma)
      for (double v : e.value.vec()) l1 += std::abs(v);
  EXPECT_DOUBLE_EQ(gamma_zero_fraction(spec, p), double(zeros) / double(total));
  EXPECT_NEAR(l1_norm(spec, p), l1, 1e-12);
}

TEST(Sparsity, ExtractionMatchesMaskedNetwork) {
  const ArchSpec spec = resnet_generator("tiny", 4, 2, 12, 3);
  Network<double> net(spec);
  std::mt19937_64 rng(21);
  InitOptions io;
  io.kernel_std = 0.3;
  for (int trial = 0; trial < 10; ++trial) {
    auto p = init_params<double>(spec, 100 + trial, io);
    for (auto& e : p)
      if (e.role == ParamRole::kBeta || e.role == ParamRole::kBias) fill_uniform(e.value, rng, -0.5, 0.5);
    const MaskSet masks = random_masks(spec, rng, 0.6);
    apply_masks(spec, p, masks);
    const auto [es, ep] = extract_subnetwork(spec, p, masks);
    Network<double> small(es);
    small.check_params(ep);
    Tensor<double> x({3, 3, 12, 12});
    fill_uniform(x, rng, -1, 1);
    const auto a = net.forward(p, x, {});
    const auto b = small.forward(ep, x, {});
    ASSERT_EQ(a.shape(), b.shape());
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a[i], b[i], 1e-12 + 1e-10 * std::abs(a[i])) << trial;
    bool any_false = false;
    for (const auto& [li, m] : masks) any_false |= m.kept() < m.keep.size();
    if (any_false) EXPECT_LT(count_flops(es), count_flops(spec));
    else EXPECT_EQ(count_flops(es), count_flops(spec));
  }
}

TEST(Sparsity, ExtractionOfNoiseGenerator) {
  const ArchSpec spec = noise_generator("tiny_noise", 5, 3);
  Network<double> net(spec);
  std::mt19937_64 rng(2);
  InitOptions io;
  io.kernel_std = 0.3;
  auto p = init_params<double>(spec, 9, io);
  for (auto& e : p)
    if (e.role == ParamRole::kBeta || e.role == ParamRole::kBias) fill_uniform(e.value, rng, -0.5, 0.5);
  const MaskSet masks = random_masks(spec, rng, 0.5);
  apply_masks(spec, p, masks);
  const auto [es, ep] = extract_subnetwork(spec, p, masks);
  Tensor<double> z({4, 5, 1, 1});
  fill_normal(z, rng, 0, 1);
  ForwardOptions eval;
  eval.training = false;
  const auto a = net.forward(p, z, eval);
  const auto b = Network<double>(es).forward(ep, z, eval);
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a[i], b[i], 1e-12);
}

TEST(Sparsity, AllTrueMasksAreIdentity) {
  const ArchSpec spec = builtin_spec("desk_resnet3_32");
  const auto p = init_params<float>(spec, 4);
  const auto [es, ep] = extract_subnetwork(spec, p, all_true_masks(spec));
  EXPECT_EQ(es.to_text(), spec.to_text());
  EXPECT_TRUE(ep == p);
}

TEST(Sparsity, RejectsBadMasks) {
  const ArchSpec spec = builtin_spec("desk_resnet3_32");
  const auto p = init_params<float>(spec, 4);
  MaskSet m = all_true_masks(spec);
  m.begin()->second.keep.pop_back();
  EXPECT_THROW(extract_subnetwork(spec, p, m), ConfigError);
  MaskSet empty = all_true_masks(spec);
  auto& k = empty.begin()->second.keep;
  std::fill(k.begin(), k.end(), false);
  EXPECT_THROW(extract_subnetwork(spec, p, empty), ConfigError);
  MaskSet wrong;
  wrong.emplace(0, ChannelMask{0, {true}, 0.0});
  EXPECT_THROW(extract_subnetwork(spec, p, wrong), ConfigError);
}

TEST(Sparsity, MasksJsonRoundTrip) {
  const ArchSpec spec = builtin_spec("desk_resnet3_32");
  std::mt19937_64 rng(8);
  const MaskSet m = random_masks(spec, rng, 0.5);
  const MaskSet back = masks_from_json(spec, masks_to_json(m));
  ASSERT_EQ(back.size(), m.size());
  for (const auto& [li, mk] : m) EXPECT_EQ(back.at(li).keep, mk.keep) << li;
}
