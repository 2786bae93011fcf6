// Copyright 2026 The gslim Authors.
// SPDX-License-Identifier: Apache-2.0

// Compress the shipped teacher with the 8-bit joint variant, print the
// report, and write a deployable bundle.
//
//   slim_and_export [steps] [out_dir]

#include <cstdlib>
#include <iostream>

#include "gslim/export.hpp"
#include "gslim/pipeline.hpp"

int main(int argc, char** argv) {
  using namespace gslim;
  RunConfig cfg = smoke_config();
  cfg.schedule.T = argc > 1 ? std::atol(argv[1]) : 200;
  cfg.rho = 0.3;
  cfg.eval_size = 128;
  const std::string out = argc > 2 ? argv[2] : "slim_sample_bundle";

  try {
    Resources r = load_resources(cfg);
    const RunArtifacts a = run_variant(Variant::kGS8, r);
    std::cout << a.report.to_text();
    std::cout << "zero gammas: " << a.gamma_zero_fraction << "\n";

    const auto bytes = export_bundle(out, Bundle{a.student_spec, a.student_params, true, a.qcfg, {{"variant", "GS-8"}}});
    std::cout << "bundle " << out << ": " << bytes << " bytes (fp32 student "
              << model_size_bytes(a.student_spec, SizePolicy::fp32()) << ")\n";

    const Bundle b = import_bundle(out);
    const auto y = generate(Network<float>(b.spec), b.params, batch_slice(r.eval.x, 0, 4), b.quantized, b.qcfg);
    std::cout << "output shape " << y.dim(0) << "x" << y.dim(1) << "x" << y.dim(2) << "x" << y.dim(3) << "\n";
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
