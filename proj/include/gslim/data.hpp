// Copyright 2026 The gslim Authors.
// SPDX-License-Identifier: Apache-2.0

// Synthetic unpaired translation tasks. Every image is drawn from its own
// RNG stream keyed by (seed, domain, index), so datasets are bit-exact
// functions of their TaskSpec.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "gslim/checkpoint.hpp"
#include "gslim/error.hpp"
#include "gslim/tensor.hpp"

namespace gslim {

struct TaskSpec {
  std::string tag = "hue-rotate";  // hue-rotate | edge-stylize | texture-swap
  int size = 32;
  int domain_size = 512;
  std::uint64_t seed = 1;

  bool operator==(const TaskSpec&) const = default;
  std::string to_text() const {
    return "task=" + tag + " size=" + std::to_string(size) + " n=" + std::to_string(domain_size) +
           " seed=" + std::to_string(seed);
  }
};

inline const std::vector<std::string>& task_tags() {
  static const std::vector<std::string> tags = {"hue-rotate", "edge-stylize", "texture-swap"};
  return tags;
}

struct TaskData {
  Tensor<float> x;  // [N, 3, S, S] in [-1, 1]
  Tensor<float> y;
};

namespace detail {

inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::array<float, 3> hsv_to_rgb(double h_deg, double s, double v) {
  const double h = std::fmod(std::fmod(h_deg, 360.0) + 360.0, 360.0) / 60.0;
  const int i = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  double r = 0, g = 0, b = 0;
  switch (i) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
  return {float(r), float(g), float(b)};
}

struct Canvas {
  int S;
  std::vector<float> rgb;  // [3, S, S] in [0, 1]
  std::vector<std::uint8_t> id;  // shape id per pixel, 0 = background
  explicit Canvas(int s) : S(s), rgb(std::size_t(3) * s * s, 0.f), id(std::size_t(s) * s, 0) {}
  float& at(int c, int y, int x) { return rgb[(std::size_t(c) * S + y) * S + x]; }
};

enum class Fill { kSolid, kStripes };

// Background gradient plus 2-4 circles / rectangles with hues in [0, 120).
inline Canvas draw_scene(std::mt19937_64& rng, int S, Fill fill) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  Canvas cv(S);
  const auto c0 = hsv_to_rgb(120.0 * U(rng), 0.3 + 0.4 * U(rng), 0.15 + 0.25 * U(rng));
  const auto c1 = hsv_to_rgb(120.0 * U(rng), 0.3 + 0.4 * U(rng), 0.15 + 0.25 * U(rng));
  const bool vertical = U(rng) < 0.5;
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      const double t = double(vertical ? y : x) / double(S - 1);
      for (int c = 0; c < 3; ++c) cv.at(c, y, x) = float((1 - t) * c0[c] + t * c1[c]);
    }
  const int shapes = 2 + static_cast<int>(U(rng) * 3.0);
  for (int k = 0; k < shapes; ++k) {
    const auto col = hsv_to_rgb(120.0 * U(rng), 0.55 + 0.45 * U(rng), 0.6 + 0.4 * U(rng));
    const bool circle = U(rng) < 0.5;
    const double cx = S * (0.15 + 0.7 * U(rng)), cy = S * (0.15 + 0.7 * U(rng));
    const double r = S * (0.12 + 0.18 * U(rng));
    const double hw = S * (0.1 + 0.2 * U(rng)), hh = S * (0.1 + 0.2 * U(rng));
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        const bool inside = circle ? dx * dx + dy * dy <= r * r : std::abs(dx) <= hw && std::abs(dy) <= hh;
        if (!inside) continue;
        float shade = 1.0f;
        if (fill == Fill::kStripes && ((x + y) / 2) % 2 == 1) shade = 0.45f;
        for (int c = 0; c < 3; ++c) cv.at(c, y, x) = col[c] * shade;
        cv.id[std::size_t(y) * S + x] = static_cast<std::uint8_t>(k + 1);
      }
  }
  return cv;
}

// Darkens pixels whose 4-neighbourhood crosses a shape boundary.
inline void draw_outlines(Canvas& cv) {
  const int S = cv.S;
  std::vector<bool> edge(std::size_t(S) * S, false);
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      const auto v = cv.id[std::size_t(y) * S + x];
      const int nb[4][2] = {{0, 1}, {1, 0}, {0, -1}, {-1, 0}};
      for (const auto& d : nb) {
        const int yy = y + d[0], xx = x + d[1];
        if (yy < 0 || yy >= S || xx < 0 || xx >= S) continue;
        if (cv.id[std::size_t(yy) * S + xx] != v) edge[std::size_t(y) * S + x] = true;
      }
    }
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x)
      if (edge[std::size_t(y) * S + x])
        for (int c = 0; c < 3; ++c) cv.at(c, y, x) = 0.05f;
}

}  // namespace detail

/// One image of domain 0 (X) or 1 (Y) of the task.
inline std::vector<float> render_task_image(const TaskSpec& spec, int domain, std::uint64_t index) {
  std::mt19937_64 rng(detail::mix64(spec.seed ^ detail::mix64((std::uint64_t(domain) << 40) ^ index)));
  const int S = spec.size;
  detail::Canvas cv(S);
  if (spec.tag == "hue-rotate") {
    cv = detail::draw_scene(rng, S, detail::Fill::kSolid);
    if (domain == 1) {
      // +120 degrees of hue: (r, g, b) -> (b, r, g).
      const std::size_t P = std::size_t(S) * S;
      std::vector<float> rot(cv.rgb.size());
      std::copy_n(cv.rgb.data() + 2 * P, P, rot.data());
      std::copy_n(cv.rgb.data(), P, rot.data() + P);
      std::copy_n(cv.rgb.data() + P, P, rot.data() + 2 * P);
      cv.rgb = std::move(rot);
    }
  } else if (spec.tag == "edge-stylize") {
    cv = detail::draw_scene(rng, S, detail::Fill::kSolid);
    if (domain == 1) detail::draw_outlines(cv);
  } else if (spec.tag == "texture-swap") {
    cv = detail::draw_scene(rng, S, domain == 1 ? detail::Fill::kStripes : detail::Fill::kSolid);
  } else {
    throw ConfigError("unknown task tag '" + spec.tag + "'");
  }
  for (auto& v : cv.rgb) v = 2.0f * v - 1.0f;
  return cv.rgb;
}

/// Both unpaired domains, pixels in [-1, 1].
inline TaskData make_task(const TaskSpec& spec) {
  if (std::find(task_tags().begin(), task_tags().end(), spec.tag) == task_tags().end())
    throw ConfigError("unknown task tag '" + spec.tag + "'");
  if (spec.size < 4 || spec.domain_size < 1) throw ConfigError("task size and domain size must be positive");
  const std::size_t S = std::size_t(spec.size), N = std::size_t(spec.domain_size), per = 3 * S * S;
  TaskData d{Tensor<float>({N, 3, S, S}), Tensor<float>({N, 3, S, S})};
  for (std::size_t i = 0; i < N; ++i) {
    auto a = render_task_image(spec, 0, i);
    auto b = render_task_image(spec, 1, i);
    std::copy(a.begin(), a.end(), d.x.data() + i * per);
    std::copy(b.begin(), b.end(), d.y.data() + i * per);
  }
  return d;
}

/// A held-out split of the same task (disjoint RNG streams).
inline TaskSpec eval_split(const TaskSpec& spec, int domain_size) {
  TaskSpec e = spec;
  e.seed = detail::mix64(spec.seed ^ 0x6576616c73706c74ULL);
  e.domain_size = domain_size;
  return e;
}

/// SHA-256 over the task description and both domains' raw bytes.
inline std::string dataset_fingerprint(const TaskSpec& spec, const TaskData& d) {
  std::vector<std::uint8_t> buf;
  const auto text = spec.to_text();
  buf.insert(buf.end(), text.begin(), text.end());
  auto add = [&](const Tensor<float>& t) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.data());
    buf.insert(buf.end(), p, p + t.size() * sizeof(float));
  };
  add(d.x);
  add(d.y);
  return sha256_hex(buf.data(), buf.size());
}

/// Standard normal noise batch [n, dim, 1, 1] for noise-input generators.
template <class Rng>
Tensor<float> sample_noise(std::size_t n, std::size_t dim, Rng& rng) {
  Tensor<float> z({n, dim, 1, 1});
  fill_normal(z, rng, 0.0, 1.0);
  return z;
}

/// Reshuffles every epoch and hands out full batches; every sample appears
/// exactly once per epoch of floor(N / batch) batches (the tail rolls over).
class BatchStream {
 public:
  BatchStream(const Tensor<float>& data, std::size_t batch, std::uint64_t seed)
      : data_(&data), batch_(batch), rng_(seed) {
    if (data.rank() != 4 || data.dim(0) == 0) throw ConfigError("batch_stream: empty dataset");
    if (batch == 0 || batch > data.dim(0)) throw ConfigError("batch_stream: batch size out of range");
    order_.resize(data.dim(0));
    reshuffle();
  }

  /// Sample indices of the next batch.
  std::vector<std::size_t> next_indices() {
    if (pos_ + batch_ > order_.size()) reshuffle();
    std::vector<std::size_t> idx(order_.begin() + std::ptrdiff_t(pos_), order_.begin() + std::ptrdiff_t(pos_ + batch_));
    pos_ += batch_;
    return idx;
  }

  Tensor<float> next() {
    const auto idx = next_indices();
    return batch_gather<float>(*data_, idx);
  }

  std::size_t epoch() const { return epoch_; }

 private:
  void reshuffle() {
    std::iota(order_.begin(), order_.end(), std::size_t(0));
    // Fisher-Yates with an explicit draw keeps the sequence independent of
    // the standard library's shuffle implementation.
    for (std::size_t i = order_.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng_() % i);
      std::swap(order_[i - 1], order_[j]);
    }
    pos_ = 0;
    ++epoch_;
  }

  const Tensor<float>* data_;
  std::size_t batch_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  std::size_t epoch_ = 0;
};

inline BatchStream batch_stream(const Tensor<float>& data, std::size_t batch, std::uint64_t seed) {
  return BatchStream(data, batch, seed);
}

}  // namespace gslim
