// Copyright 2026 The gslim Authors.
// SPDX-License-Identifier: Apache-2.0

// FLOPs and size of a built-in generator, before and after halving every
// channel count.
//
//   count_flops [arch]

#include <iostream>

#include "gslim/metrics.hpp"
#include "gslim/models.hpp"

int main(int argc, char** argv) {
  using namespace gslim;
  const std::string name = argc > 1 ? argv[1] : "cyclegan_resnet9_256";
  try {
    const ArchSpec& g = builtin_spec(name);
    const ArchSpec half = scale_channels(g, 0.5, name + "_half");
    for (const ArchSpec* s : {&g, &half}) {
      std::cout << s->name << ": " << count_flops(*s) / 1e9 << " GFLOPs, " << model_size_mb(*s) << " MB fp32, "
                << model_size_bytes(*s, SizePolicy::quantized(8)) / kBytesPerMB << " MB with 8-bit kernels\n";
    }
    for (const auto& c : FlopConvention::candidates())
      std::cout << "  " << c.name << ": " << count_flops(g, c) / 1e9 << "\n";
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
