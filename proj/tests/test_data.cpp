// Copyright 2026 The gslim Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <map>
#include <set>

#include "gslim/data.hpp"

using namespace gslim;

namespace {

std::vector<float> image(const Tensor<float>& t, std::size_t i) {
  const std::size_t per = t.size() / t.dim(0);
  return {t.data() + i * per, t.data() + (i + 1) * per};
}

}  // namespace

TEST(Data, TasksAreDeterministicAndInRange) {
  for (const auto& tag : task_tags()) {
    TaskSpec s;
    s.tag = tag;
    s.domain_size = 16;
    const auto a = make_task(s), b = make_task(s);
    EXPECT_EQ(a.x, b.x) << tag;
    EXPECT_EQ(a.y, b.y) << tag;
    EXPECT_EQ(a.x.shape(), (Shape{16, 3, 32, 32}));
    for (float v : a.x.vec()) ASSERT_TRUE(v >= -1.0f && v <= 1.0f);
    for (float v : a.y.vec()) ASSERT_TRUE(v >= -1.0f && v <= 1.0f);
  }
}

TEST(Data, DomainsAreDisjoint) {
  for (const auto& tag : task_tags()) {
    TaskSpec s;
    s.tag = tag;
    s.domain_size = 64;
    const auto d = make_task(s);
    std::set<std::vector<float>> xs;
    for (std::size_t i = 0; i < 64; ++i) xs.insert(image(d.x, i));
    EXPECT_EQ(xs.size(), 64u) << tag;
    for (std::size_t i = 0; i < 64; ++i) EXPECT_FALSE(xs.count(image(d.y, i))) << tag << " y[" << i << "]";
  }
}

TEST(Data, EdgeStylizedImagesCarryOutlines) {
  TaskSpec s;
  s.tag = "edge-stylize";
  auto outline_pixels = [&](int domain) {
    const auto img = render_task_image(s, domain, 3);
    const std::size_t P = 32 * 32;
    int n = 0;
    for (std::size_t k = 0; k < P; ++k)
      n += img[k] == -0.9f && img[P + k] == -0.9f && img[2 * P + k] == -0.9f;
    return n;
  };
  EXPECT_GT(outline_pixels(1), 20);
  EXPECT_EQ(outline_pixels(0), 0);
}

TEST(Data, EvalSplitIsDisjointFromTraining) {
  TaskSpec s;
  s.domain_size = 64;
  const auto train = make_task(s);
  const auto eval = make_task(eval_split(s, 64));
  std::set<std::vector<float>> seen;
  for (std::size_t i = 0; i < 64; ++i) seen.insert(image(train.x, i));
  for (std::size_t i = 0; i < 64; ++i) EXPECT_FALSE(seen.count(image(eval.x, i))) << i;
}

TEST(Data, FingerprintTracksContent) {
  TaskSpec s;
  s.domain_size = 8;
  const auto d = make_task(s);
  const auto f = dataset_fingerprint(s, d);
  EXPECT_EQ(f.size(), 64u);
  EXPECT_EQ(f, dataset_fingerprint(s, make_task(s)));
  TaskSpec t = s;
  t.seed = 2;
  EXPECT_NE(f, dataset_fingerprint(t, make_task(t)));
}

TEST(Data, BatchStreamCoversEveryEpoch) {
  Tensor<float> data({10, 1, 1, 1});
  for (std::size_t i = 0; i < 10; ++i) data[i] = float(i);
  auto bs = batch_stream(data, 3, 7);
  // floor(10 / 3) = 3 batches per epoch, 9 distinct samples each.
  for (int epoch = 0; epoch < 5; ++epoch) {
    std::set<std::size_t> seen;
    for (int b = 0; b < 3; ++b) {
      const auto idx = bs.next_indices();
      ASSERT_EQ(idx.size(), 3u);
      for (auto i : idx) EXPECT_TRUE(seen.insert(i).second) << "repeat within epoch " << epoch;
    }
    EXPECT_EQ(seen.size(), 9u);
  }
  // Over many epochs every sample is drawn.
  std::map<std::size_t, int> counts;
  auto bs2 = batch_stream(data, 5, 1);
  for (int k = 0; k < 40; ++k)
    for (auto i : bs2.next_indices()) ++counts[i];
  EXPECT_EQ(counts.size(), 10u);
  for (const auto& [i, c] : counts) EXPECT_EQ(c, 20) << i;  // batch 5 divides 10 exactly
}

TEST(Data, BatchStreamIsSeeded) {
  Tensor<float> data({12, 1, 1, 1});
  auto a = batch_stream(data, 4, 3), b = batch_stream(data, 4, 3), c = batch_stream(data, 4, 4);
  std::vector<std::size_t> sa, sb, sc;
  for (int k = 0; k < 6; ++k) {
    for (auto i : a.next_indices()) sa.push_back(i);
    for (auto i : b.next_indices()) sb.push_back(i);
    for (auto i : c.next_indices()) sc.push_back(i);
  }
  EXPECT_EQ(sa, sb);
  EXPECT_NE(sa, sc);
}

TEST(Data, RejectsBadInput) {
  TaskSpec s;
  s.tag = "nope";
  EXPECT_THROW(make_task(s), ConfigError);
  Tensor<float> data({3, 1, 1, 1});
  EXPECT_THROW(batch_stream(data, 4, 0), ConfigError);
  EXPECT_THROW(batch_stream(data, 0, 0), ConfigError);
}
