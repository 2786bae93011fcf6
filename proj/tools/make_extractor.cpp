// Copyright 2026 The gslim Authors.
// SPDX-License-Identifier: Apache-2.0

// Trains the frozen feature extractor shipped in assets/: a small conv
// stack plus a throwaway linear head that classifies scene style (plain,
// hue-rotated, outlined, striped). Only the conv stack is saved.
//
//   gslim_make_extractor [--out PATH] [--epochs N] [--per-class N] [--seed S]

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <vector>

#include "CLI11.hpp"

#include "gslim/config.hpp"
#include "gslim/data.hpp"
#include "gslim/distill.hpp"
#include "gslim/engine.hpp"
#include "gslim/models.hpp"

namespace {

using namespace gslim;

constexpr int kClasses = 4;

struct Labeled {
  Tensor<float> x;
  std::vector<int> label;
};

Labeled make_corpus(int per_class, std::uint64_t seed, int size) {
  // (task, domain) pairs for the four styles.
  const std::pair<const char*, int> styles[kClasses] = {
      {"hue-rotate", 0}, {"hue-rotate", 1}, {"edge-stylize", 1}, {"texture-swap", 1}};
  const std::size_t S = std::size_t(size), per = 3 * S * S;
  Labeled d{Tensor<float>({std::size_t(per_class) * kClasses, 3, S, S}), {}};
  std::size_t n = 0;
  for (int c = 0; c < kClasses; ++c) {
    TaskSpec ts;
    ts.tag = styles[c].first;
    ts.size = size;
    ts.seed = seed + std::uint64_t(c);
    for (int i = 0; i < per_class; ++i, ++n) {
      const auto img = render_task_image(ts, styles[c].second, std::uint64_t(i));
      std::copy(img.begin(), img.end(), d.x.data() + n * per);
      d.label.push_back(c);
    }
  }
  return d;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Train the proxy-FID feature extractor"};
  std::string out = (asset_dir() / "extractor32.gsck").string();
  int epochs = 16, per_class = 512;
  std::uint64_t seed = 77;
  app.add_option("--out", out, "output checkpoint");
  app.add_option("--epochs", epochs);
  app.add_option("--per-class", per_class);
  app.add_option("--seed", seed);
  CLI11_PARSE(app, argc, argv);

  const ArchSpec spec = feature_extractor_spec(32);
  const std::vector<int> taps = {3, 7};
  InitOptions io;
  io.he = true;
  ParamSet<float> params = init_params<float>(spec, seed, io);
  Network<float> net(spec);

  const int C = spec.layers[taps.back() - 1].out;
  std::mt19937_64 rng(seed ^ 0x68656164ULL);
  std::vector<double> head_w(std::size_t(C) * kClasses), head_b(kClasses, 0.0);
  {
    std::normal_distribution<double> nd(0.0, std::sqrt(1.0 / C));
    for (auto& w : head_w) w = nd(rng);
  }

  const Labeled train = make_corpus(per_class, seed, 32);
  const Labeled held = make_corpus(64, seed + 1000, 32);
  const std::size_t N = train.label.size(), B = 16;

  Adam<float> adam;
  adam.beta2 = 0.999;
  adam.init(params);
  std::vector<double> mh(head_w.size() + head_b.size(), 0.0), vh(mh.size(), 0.0);
  long head_steps = 0;
  const double lr = 1e-3;

  auto logits_of = [&](const Tensor<float>& f, std::size_t n, std::size_t HW) {
    std::vector<double> e(C), z(kClasses);
    for (int c = 0; c < C; ++c) {
      double s = 0;
      for (std::size_t k = 0; k < HW; ++k) s += f[(n * C + c) * HW + k];
      e[c] = s / double(HW);
    }
    for (int j = 0; j < kClasses; ++j) {
      z[j] = head_b[j];
      for (int c = 0; c < C; ++c) z[j] += e[c] * head_w[std::size_t(c) * kClasses + j];
    }
    return std::make_pair(e, z);
  };

  std::vector<std::size_t> order(N);
  for (int ep = 0; ep < epochs; ++ep) {
    std::iota(order.begin(), order.end(), std::size_t(0));
    for (std::size_t i = N; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    double loss_sum = 0;
    for (std::size_t s = 0; s + B <= N; s += B) {
      std::vector<std::size_t> idx(order.begin() + std::ptrdiff_t(s), order.begin() + std::ptrdiff_t(s + B));
      const Tensor<float> x = batch_gather<float>(train.x, idx);
      Trace<float> tr;
      net.forward(params, x, ForwardOptions{}, &tr);
      const Tensor<float>& f = tr.outputs[taps.back()];
      const std::size_t HW = f.dim(2) * f.dim(3);
      Tensor<float> gf(f.shape());
      std::vector<double> gh(mh.size(), 0.0);
      for (std::size_t n = 0; n < B; ++n) {
        auto [e, z] = logits_of(f, n, HW);
        const double zmax = *std::max_element(z.begin(), z.end());
        double den = 0;
        for (double v : z) den += std::exp(v - zmax);
        const int y = train.label[idx[n]];
        loss_sum += -(z[y] - zmax - std::log(den));
        std::vector<double> ge(C, 0.0);
        for (int j = 0; j < kClasses; ++j) {
          const double dz = (std::exp(z[j] - zmax) / den - (j == y ? 1.0 : 0.0)) / double(B);
          for (int c = 0; c < C; ++c) {
            gh[std::size_t(c) * kClasses + j] += dz * e[c];
            ge[c] += dz * head_w[std::size_t(c) * kClasses + j];
          }
          gh[head_w.size() + j] += dz;
        }
        for (int c = 0; c < C; ++c)
          for (std::size_t k = 0; k < HW; ++k) gf[(n * C + c) * HW + k] = float(ge[c] / double(HW));
      }
      ParamSet<float> grads = params.zeros_like();
      net.backward(params, tr, {{taps.back(), gf}}, &grads, false);
      adam.step(params, grads, lr, +1.0, [](ParamRole r) { return is_trainable(r); });
      ++head_steps;
      const double c1 = 1 - std::pow(adam.beta1, double(head_steps)), c2 = 1 - std::pow(adam.beta2, double(head_steps));
      for (std::size_t k = 0; k < mh.size(); ++k) {
        mh[k] = adam.beta1 * mh[k] + (1 - adam.beta1) * gh[k];
        vh[k] = adam.beta2 * vh[k] + (1 - adam.beta2) * gh[k] * gh[k];
        double& w = k < head_w.size() ? head_w[k] : head_b[k - head_w.size()];
        w -= lr * (mh[k] / c1) / (std::sqrt(vh[k] / c2) + adam.eps);
      }
    }
    // Held-out accuracy.
    int correct = 0;
    const std::size_t M = held.label.size();
    for (std::size_t s = 0; s < M; s += 64) {
      const std::size_t e = std::min(M, s + 64);
      Trace<float> tr;
      ForwardOptions o;
      o.training = false;
      net.forward(params, batch_slice(held.x, s, e), o, &tr);
      const Tensor<float>& f = tr.outputs[taps.back()];
      for (std::size_t n = 0; n < e - s; ++n) {
        auto z = logits_of(f, n, f.dim(2) * f.dim(3)).second;
        if (std::max_element(z.begin(), z.end()) - z.begin() == held.label[s + n]) ++correct;
      }
    }
    std::printf("epoch %d  loss %.4f  held-out acc %.3f\n", ep + 1, loss_sum / double(N / B * B),
                double(correct) / double(M));
    std::fflush(stdout);
  }

  const auto sum = save_extractor(out, spec, params, taps,
                                  {{"classes", "plain,hue-rotated,outlined,striped"},
                                   {"epochs", std::to_string(epochs)},
                                   {"seed", std::to_string(seed)}});
  std::printf("wrote %s\nchecksum %s\n", out.c_str(), sum.c_str());
  return 0;
}
