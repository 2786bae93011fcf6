// Copyright 2026 The gslim Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <random>
#include <set>

#include "gslim/models.hpp"
#include "gslim/quantization.hpp"

using namespace gslim;

namespace {

std::vector<double> random_values(std::size_t n, double lo, double hi, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

QuantConfig qc(int m, int n, double p = 4.0) {
  QuantConfig c;
  c.m = m;
  c.n = n;
  c.p = p;
  return c;
}

}  // namespace

TEST(Quantization, RoundsHalfAwayFromZero) {
  EXPECT_EQ(detail::round_half_away(0.5), 1.0);
  EXPECT_EQ(detail::round_half_away(-0.5), -1.0);
  EXPECT_EQ(detail::round_half_away(2.5), 3.0);
  EXPECT_EQ(detail::round_half_away(-2.5), -3.0);
  EXPECT_EQ(detail::round_half_away(1.49), 1.0);
}

TEST(Quantization, ActivationMatchesHandValues) {
  // m = 2, p = 4: step 1, grid {0, 1, 2, 3, 4}.
  const std::vector<double> a = {-3.0, 0.2, 0.5, 1.5, 2.49, 3.7, 9.0};
  const auto q = quantize_activation<double>(a, qc(2, 8));
  const std::vector<double> expect = {0, 0, 1, 2, 2, 4, 4};
  EXPECT_EQ(q, expect);
}

TEST(Quantization, WeightMatchesHandValues) {
  // n = 2: s = max|w| / 2 = 0.5, codes in {-2..2}.
  const std::vector<double> w = {1.0, -0.25, 0.3, -0.8, 0.74};
  const auto q = quantize_weight<double>(w, qc(8, 2));
  const std::vector<double> expect = {1.0, -0.5, 0.5, -1.0, 0.5};
  EXPECT_EQ(q, expect);
}

TEST(Quantization, LawsHoldForEveryBitWidth) {
  for (int bits : {2, 4, 8}) {
    const auto cfg = qc(bits, bits, 3.0);
    const auto a = random_values(4000, -2.0, 5.0, 17 + bits);
    const auto qa = quantize_activation<double>(a, cfg);
    EXPECT_EQ(quantize_activation<double>(qa, cfg), qa) << "q_a idempotent, m=" << bits;
    EXPECT_LE(std::set<double>(qa.begin(), qa.end()).size(), (std::size_t(1) << bits) + 1) << "m=" << bits;
    for (double v : qa) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 3.0);
    }

    const auto w = random_values(4000, -0.7, 0.7, 91 + bits);
    const auto qw = quantize_weight<double>(w, cfg);
    EXPECT_EQ(quantize_weight<double>(qw, cfg), qw) << "q_w idempotent, n=" << bits;
    EXPECT_LE(std::set<double>(qw.begin(), qw.end()).size(), (std::size_t(1) << bits) + 1) << "n=" << bits;
    std::vector<double> neg(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) neg[i] = -w[i];
    const auto qn = quantize_weight<double>(neg, cfg);
    for (std::size_t i = 0; i < w.size(); ++i) ASSERT_EQ(qn[i], -qw[i]) << "odd symmetry, n=" << bits;
  }
}

TEST(Quantization, WeightOddSymmetryAtExactHalves) {
  // Values exactly halfway between codes are the case where round-half-even breaks symmetry.
  const std::vector<double> w = {1.0, 0.125, 0.375, -0.625, 0.875};
  std::vector<double> neg;
  for (double v : w) neg.push_back(-v);
  const auto cfg = qc(8, 3);
  const auto a = quantize_weight<double>(w, cfg);
  const auto b = quantize_weight<double>(neg, cfg);
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_EQ(b[i], -a[i]);
}

TEST(Quantization, AllZeroWeightsStayZero) {
  const std::vector<double> w(5, 0.0);
  EXPECT_EQ(quantize_weight<double>(w, qc(8, 4)), w);
}

TEST(Quantization, RejectsNonFiniteAndBadConfig) {
  const std::vector<double> w = {0.1, NAN};
  EXPECT_THROW(quantize_weight<double>(w, qc(8, 8)), NumericError);
  EXPECT_THROW(quantize_activation<double>(w, qc(8, 8)), NumericError);
  EXPECT_THROW(qc(0, 8).validate(), ConfigError);
  EXPECT_THROW(qc(8, 31).validate(), ConfigError);
  EXPECT_THROW(qc(8, 8, -1.0).validate(), ConfigError);
}

TEST(Quantization, SteMasksAreExact) {
  const std::vector<double> a = {-1e-9, 0.0, 1.0, 4.0, 4.0000001, 7.0};
  const auto g = ste_activation_grad<double>(a, qc(8, 8));
  const std::vector<double> expect = {0, 1, 1, 1, 0, 0};
  EXPECT_EQ(g, expect);
  const std::vector<double> w = {-3, 0, 2};
  EXPECT_EQ(ste_weight_grad<double>(w), std::vector<double>(3, 1.0));
}

TEST(Quantization, FinalizeTouchesKernelsOnly) {
  const ArchSpec spec = builtin_spec("desk_resnet3_32");
  auto p = init_params<float>(spec, 3);
  std::mt19937_64 rng(4);
  for (auto& e : p)
    if (e.role == ParamRole::kBias || e.role == ParamRole::kBeta) fill_uniform(e.value, rng, -0.3, 0.3);
  const auto f = finalize_weights(p, qc(8, 4));
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i].role == ParamRole::kKernel) {
      EXPECT_EQ(f[i].value.vec(), quantize_weight<float>(p[i].value.span(), qc(8, 4))) << p[i].name;
    } else {
      EXPECT_EQ(f[i].value, p[i].value) << p[i].name;
    }
  }
}

TEST(Quantization, PackRoundTripIsBitExact) {
  for (int n : {2, 3, 4, 8, 12}) {
    const auto cfg = qc(8, n);
    Tensor<float> w({3, 5, 3, 3});
    std::mt19937_64 rng(n);
    fill_normal(w, rng, 0.0, 0.05);
    w = quantize_weight(w, cfg);
    const auto blob = pack_weights(w, cfg);
    const auto bytes = blob.serialize();
    ByteReader r(bytes.data(), bytes.size());
    const auto back = unpack_weights<float>(QuantizedBlob::deserialize(r));
    ASSERT_EQ(back.shape(), w.shape());
    for (std::size_t i = 0; i < w.size(); ++i)
      ASSERT_EQ(std::bit_cast<std::uint32_t>(back[i]), std::bit_cast<std::uint32_t>(w[i])) << "n=" << n << " i=" << i;
    EXPECT_LE(blob.code_bits, n + 1);
    EXPECT_EQ(blob.payload.size(), packed_payload_bytes(w.size(), blob.code_bits));
  }
}

TEST(Quantization, PackUsesExtraBitOnlyForBothExtremes) {
  // Codes -4..4 with n = 3 need a 9-value range.
  Tensor<float> both({2}, {1.0f, -1.0f});
  EXPECT_EQ(pack_weights(both, qc(8, 3)).code_bits, 4);
  Tensor<float> one({2}, {1.0f, -0.5f});
  EXPECT_EQ(pack_weights(one, qc(8, 3)).code_bits, 3);
}

TEST(Quantization, PackRejectsOffGridValues) {
  Tensor<float> w({3}, {1.0f, 0.3f, -0.2f});
  EXPECT_THROW(pack_weights(w, qc(8, 2)), ConfigError);
}

TEST(Quantization, DeserializeRejectsCorruptHeaders) {
  Tensor<float> w({2}, {1.0f, -0.5f});
  auto bytes = pack_weights(w, qc(8, 4)).serialize();
  bytes[0] = 7;  // count no longer matches the shape
  ByteReader r(bytes.data(), bytes.size());
  EXPECT_THROW(QuantizedBlob::deserialize(r), IoError);
}
