// Copyright 2026 The gslim Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>

#include "gslim/models.hpp"
#include "gslim/network.hpp"
#include "grad_check.hpp"

using namespace gslim;
using gslim::testing::central_diff;
using gslim::testing::rel_err;

namespace {

ArchSpec tiny_translator(NormKind nk = NormKind::kInstance) {
  ArchSpec s;
  s.name = "tiny";
  s.input_shape = {2, 6, 6};
  auto& L = s.layers;
  L.push_back(LayerDesc::conv(2, 3, 3, 1, 1));
  L.push_back(LayerDesc::norm_layer(3, true, nk));
  L.push_back(LayerDesc::activation(ActKind::kRelu, true));
  L.push_back(LayerDesc::conv(3, 4, 3, 2, 1));
  L.push_back(LayerDesc::norm_layer(4, false, nk));
  L.push_back(LayerDesc::activation(ActKind::kLeakyRelu));
  L.push_back(LayerDesc::res_begin());
  L.push_back(LayerDesc::conv(4, 2, 3, 1, 1));
  L.push_back(LayerDesc::norm_layer(2, true, nk));
  L.push_back(LayerDesc::activation(ActKind::kRelu));
  L.push_back(LayerDesc::conv(2, 4, 1, 1, 0));
  L.push_back(LayerDesc::res_end());
  L.push_back(LayerDesc::deconv(4, 2, 3, 2, 1, 1));
  L.push_back(LayerDesc::activation(ActKind::kTanh));
  return s;
}

ArchSpec tiny_noise() {
  ArchSpec s;
  s.name = "tiny_noise";
  s.input = InputKind::kNoise;
  s.input_shape = {3, 1, 1};
  s.layers.push_back(LayerDesc::linear(3, 2, 2, 2));
  s.layers.push_back(LayerDesc::norm_layer(2, true));
  s.layers.push_back(LayerDesc::activation(ActKind::kRelu));
  s.layers.push_back(LayerDesc::deconv(2, 1, 4, 2, 1, 0));
  s.layers.push_back(LayerDesc::activation(ActKind::kSigmoid));
  return s;
}

// Loss = sum_i c_i * y_i with fixed random c; checks every parameter and the input.
void check_gradients(const ArchSpec& spec, std::size_t batch, std::uint64_t seed,
                     const ForwardOptions& opts, double tol) {
  Network<double> net(spec);
  InitOptions io;
  io.kernel_std = 0.5;
  auto params = init_params<double>(spec, seed, io);
  // Non-trivial betas and biases.
  std::mt19937_64 rng(seed + 1);
  for (auto& p : params)
    if (p.role == ParamRole::kBeta || p.role == ParamRole::kBias) fill_uniform(p.value, rng, -0.5, 0.5);
  const auto& is = spec.input_shape;
  Tensor<double> x({batch, std::size_t(is.c), std::size_t(is.h), std::size_t(is.w)});
  fill_uniform(x, rng, -1, 1);
  Trace<double> tr;
  auto y = net.forward(params, x, opts, &tr);
  Tensor<double> c(y.shape());
  fill_uniform(c, rng, -1, 1);

  auto grads = params.zeros_like();
  auto gx = net.backward(params, tr, c, &grads);

  auto loss = [&]() {
    auto out = net.forward(params, x, opts);
    double s = 0;
    for (std::size_t i = 0; i < out.size(); ++i) s += c[i] * out[i];
    return s;
  };
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!is_trainable(params[k].role)) continue;
    for (std::size_t i = 0; i < params[k].value.size(); ++i) {
      const double fd = central_diff(loss, params[k].value[i], 1e-5);
      EXPECT_LT(rel_err(grads[k].value[i], fd, 1e-4), tol)
          << params[k].name << "[" << i << "] analytic " << grads[k].value[i] << " fd " << fd;
    }
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double fd = central_diff(loss, x[i], 1e-5);
    EXPECT_LT(rel_err(gx[i], fd, 1e-4), tol) << "input[" << i << "]";
  }
}

}  // namespace

TEST(Network, InstanceNormTranslatorGradientsMatchFiniteDifferences) {
  check_gradients(tiny_translator(), 2, 7, ForwardOptions{}, 1e-5);
}

TEST(Network, BatchNormTrainingGradientsMatchFiniteDifferences) {
  check_gradients(tiny_translator(NormKind::kBatch), 3, 11, ForwardOptions{}, 1e-5);
}

TEST(Network, BatchNormEvalGradientsMatchFiniteDifferences) {
  ForwardOptions o;
  o.training = false;
  check_gradients(tiny_translator(NormKind::kBatch), 2, 12, o, 1e-5);
}

TEST(Network, LinearNoiseGeneratorGradientsMatchFiniteDifferences) {
  check_gradients(tiny_noise(), 3, 5, ForwardOptions{}, 1e-5);
}

TEST(Network, SurrogateQuantGradientsMatchFiniteDifferences) {
  // Surrogate mode clamps flagged activations; the analytic backward is the
  // STE rule, which is the true gradient of the surrogate.
  ForwardOptions o;
  o.quant = QuantMode::kSurrogate;
  o.qcfg.p = 0.6;
  check_gradients(tiny_translator(), 2, 9, o, 1e-5);
}

TEST(Network, SingleConvMatchesHandArithmetic) {
  // 1 -> 1 channel, 3x3 all-ones kernel, pad 1, bias 0.5 on a 3x3 ramp.
  ArchSpec s;
  s.name = "one";
  s.input_shape = {1, 3, 3};
  s.layers.push_back(LayerDesc::conv(1, 1, 3, 1, 1));
  Network<double> net(s);
  auto p = init_params<double>(s, 0);
  p[0].value.fill(1.0);
  p[1].value[0] = 0.5;
  Tensor<double> x({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  auto y = net.forward(p, x, {});
  // Neighborhood sums of the ramp plus bias.
  const std::vector<double> expect = {12, 21, 16, 27, 45, 33, 24, 39, 28};
  for (std::size_t i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(y[i], expect[i] + 0.5) << i;
}

TEST(Network, DeconvMatchesScatterDefinition) {
  ArchSpec s;
  s.name = "de";
  s.input_shape = {2, 3, 3};
  s.layers.push_back(LayerDesc::deconv(2, 3, 3, 2, 1, 1, false));
  Network<double> net(s);
  InitOptions io;
  io.kernel_std = 1.0;
  auto p = init_params<double>(s, 4, io);
  std::mt19937_64 rng(3);
  Tensor<double> x({1, 2, 3, 3});
  fill_uniform(x, rng, -1, 1);
  auto y = net.forward(p, x, {});
  ASSERT_EQ(y.shape(), (Shape{1, 3, 6, 6}));
  // out[o, iy*s - p + ky, ix*s - p + kx] += x[i, iy, ix] * W[i, o, ky, kx]
  Tensor<double> ref({1, 3, 6, 6});
  const auto& W = p[0].value;
  for (int i = 0; i < 2; ++i)
    for (int o = 0; o < 3; ++o)
      for (int iy = 0; iy < 3; ++iy)
        for (int ix = 0; ix < 3; ++ix)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int oy = iy * 2 - 1 + ky, ox = ix * 2 - 1 + kx;
              if (oy < 0 || oy >= 6 || ox < 0 || ox >= 6) continue;
              ref.at(0, o, oy, ox) += x.at(0, i, iy, ix) * W[((i * 3 + o) * 3 + ky) * 3 + kx];
            }
  for (std::size_t k = 0; k < y.size(); ++k) EXPECT_NEAR(y[k], ref[k], 1e-12);
}

TEST(Network, ZeroGammaSilencesChannelExactly) {
  auto spec = tiny_translator();
  Network<double> net(spec);
  auto p = init_params<double>(spec, 2);
  std::mt19937_64 rng(1);
  for (auto& q : p)
    if (q.role == ParamRole::kBeta) fill_uniform(q.value, rng, 0.1, 0.5);
  p.get("L1.gamma").value[1] = 0.0;
  Tensor<double> x({2, 2, 6, 6});
  fill_uniform(x, rng, -1, 1);
  Trace<double> tr;
  net.forward(p, x, {}, &tr);
  const auto& a = tr.outputs[2];  // after the activation following L1
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t h = 0; h < 6; ++h)
      for (std::size_t w = 0; w < 6; ++w) EXPECT_EQ(a.at(n, 1, h, w), 0.0);
}

TEST(Network, RejectsMismatchedParamsAndInputs) {
  auto spec = tiny_translator();
  Network<double> net(spec);
  auto p = init_params<double>(spec, 2);
  EXPECT_NO_THROW(net.check_params(p));
  auto other = init_params<double>(tiny_noise(), 2);
  EXPECT_THROW(net.check_params(other), ConfigError);
  EXPECT_THROW(net.forward(p, Tensor<double>({1, 3, 6, 6}), {}), ConfigError);
}
