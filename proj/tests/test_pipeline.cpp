// Copyright 2026 The gslim Authors.
// SPDX-License-Identifier: Apache-2.0

// End-to-end runs on the smoke task with short budgets.

#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "gslim/cli.hpp"
#include "gslim/export.hpp"
#include "gslim/pipeline.hpp"

using namespace gslim;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("gslim_test_" + name);
  fs::remove_all(p);
  return p;
}

RunConfig short_config(long T) {
  RunConfig c = smoke_config();
  c.schedule.T = T;
  c.eval_size = 64;
  c.rho = 0.3;
  c.log_every = 5;
  return c;
}

int run_cli(std::vector<std::string> args, std::string* out = nullptr) {
  args.insert(args.begin(), "gslim");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream o, e;
  const int rc = cli_main(int(argv.size()), argv.data(), o, e);
  if (out) *out = o.str() + e.str();
  return rc;
}

}  // namespace

TEST(Pipeline, VariantTagsRoundTrip) {
  for (const auto& [v, name] : variant_names()) EXPECT_EQ(parse_variant(name), v);
  EXPECT_THROW(parse_variant("GS-16"), ConfigError);
  EXPECT_TRUE(variant_quantized(Variant::kGS8));
  EXPECT_FALSE(variant_quantized(Variant::kGS32));
}

TEST(Pipeline, ZeroBudgetRunProducesAValidReport) {
  Resources r = load_resources(short_config(0));
  const auto a = run_variant(Variant::kGS32, r);
  EXPECT_GT(a.report.r_s, 0);
  EXPECT_GT(a.report.r_c, 0);
  EXPECT_GT(a.report.r_f, 0);
  EXPECT_EQ(a.metrics_log, "");
  EXPECT_EQ(a.gamma_zero_fraction, 0.0);
  const auto back = CompressionReport::from_text(a.report.to_text());
  EXPECT_DOUBLE_EQ(back.r_s, a.report.r_s);
}

TEST(Pipeline, FixedDiscriminatorStaysBitIdentical) {
  Resources r = load_resources(short_config(10));
  const auto a = run_variant(Variant::kFixedD, r);
  EXPECT_TRUE(a.theta == a.theta_init);
  EXPECT_TRUE(a.theta == r.teacher->discriminator->second);
  const auto b = run_variant(Variant::kGS8, r);
  EXPECT_FALSE(b.theta == b.theta_init);
}

TEST(Pipeline, RunsAreDeterministic) {
  Resources r1 = load_resources(short_config(15)), r2 = load_resources(short_config(15));
  const auto a = run_variant(Variant::kGS8, r1), b = run_variant(Variant::kGS8, r2);
  EXPECT_FALSE(a.metrics_log.empty());
  EXPECT_EQ(a.metrics_log, b.metrics_log);
  EXPECT_TRUE(a.student_params == b.student_params);
}

TEST(Pipeline, QuantizedStudentLiesOnGridAndExportsFaithfully) {
  RunConfig c = short_config(15);
  Resources r = load_resources(c);
  const auto a = run_variant(Variant::kGS8, r);
  ASSERT_TRUE(a.quantized);
  for (const auto& p : a.student_params)
    if (p.role == ParamRole::kKernel) EXPECT_EQ(quantize_weight(p.value, c.quant), p.value) << p.name;

  const fs::path dir = scratch("bundle");
  Bundle b{a.student_spec, a.student_params, true, a.qcfg, {{"variant", "GS-8"}}};
  const auto bytes = export_bundle(dir, b);
  EXPECT_EQ(bytes, bundle_bytes(dir));
  EXPECT_LT(double(bytes), 0.30 * model_size_bytes(a.student_spec));
  const Bundle back = import_bundle(dir);
  const auto x = batch_slice(r.eval.x, 0, 16);
  const auto y0 = generate(Network<float>(a.student_spec), a.student_params, x, true, a.qcfg);
  const auto y1 = generate(Network<float>(back.spec), back.params, x, back.quantized, back.qcfg);
  for (std::size_t i = 0; i < y0.size(); ++i) ASSERT_NEAR(y0[i], y1[i], 1e-6);

  // Tampering is detected.
  write_file_text(dir / "arch.txt", read_file_text(dir / "arch.txt") + " ");
  EXPECT_THROW(import_bundle(dir), IoError);
}

TEST(Pipeline, TeacherTrainingWithZeroBudgetIsTheInitialization) {
  RunConfig c = short_config(0);
  c.teacher.steps = 0;
  Resources r = load_resources(c, false);
  const TeacherBundle t = train_teacher(r);
  const ArchSpec g = builtin_spec(c.teacher.arch);
  EXPECT_TRUE(t.params == init_params<float>(g, detail::seed_for(c.seed, "teacher/G"), init_options(c)));
  // The shipped teacher beats its own untrained initialization.
  Resources rt = load_resources(c);
  const double trained = teacher_fid(rt);
  double untrained = 0;
  for (const auto& [k, v] : t.meta)
    if (k == "proxy_fid") untrained = std::stod(v);
  EXPECT_LT(trained, untrained);
}

TEST(Pipeline, ShortTeacherRunWritesItsLog) {
  RunConfig c = short_config(0);
  c.teacher.steps = 4;
  c.log_every = 2;
  Resources r = load_resources(c, false);
  std::string log;
  train_teacher(r, &log);
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 2);
  EXPECT_NE(log.find("\"cycle\""), std::string::npos);
}

TEST(Cli, ExitCodes) {
  std::string out;
  EXPECT_EQ(run_cli({"slim", "--variant", "GS-99"}, &out), kExitConfig) << out;
  EXPECT_EQ(run_cli({"slim", "--override", "nope=1"}, &out), kExitConfig) << out;
  EXPECT_EQ(run_cli({"frobnicate"}, &out), kExitConfig) << out;
  EXPECT_EQ(run_cli({"eval", "--student", "/nonexistent/student.gsck"}, &out), kExitIo) << out;
  EXPECT_EQ(run_cli({"export", "--student", "/nonexistent/s.gsck", "--out", "/tmp/x"}, &out), kExitIo) << out;
  const fs::path dir = scratch("numeric");
  EXPECT_EQ(run_cli({"slim", "--variant", "GS-32", "--out", dir.string(), "--override", "schedule.T=3", "--override",
                     "eval_size=16", "--override", "schedule.alpha0=1e30"},
                    &out),
            kExitNumeric)
      << out;
  EXPECT_TRUE(fs::exists(dir / "failure_snapshot.gsck"));
  EXPECT_EQ(run_cli({"--help"}, &out), kExitOk);
}

TEST(Cli, SlimEvalExport) {
  const fs::path dir = scratch("cli");
  std::string out;
  ASSERT_EQ(run_cli({"slim", "--variant", "GS-8", "--out", (dir / "run").string(), "--override", "schedule.T=10",
                     "--override", "eval_size=32"},
                    &out),
            kExitOk)
      << out;
  for (const char* f : {"config.json", "report.txt", "masks.json", "metrics.jsonl", "student.gsck", "fingerprint.txt"})
    EXPECT_TRUE(fs::exists(dir / "run" / f)) << f;
  ASSERT_EQ(run_cli({"eval", "--student", (dir / "run" / "student.gsck").string(), "--out", (dir / "eval").string(),
                     "--override", "eval_size=32"},
                    &out),
            kExitOk)
      << out;
  EXPECT_NE(out.find("GS-8"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "eval" / "report.txt"));
  ASSERT_EQ(run_cli({"export", "--student", (dir / "run" / "student.gsck").string(), "--out", (dir / "bundle").string()},
                    &out),
            kExitOk)
      << out;
  EXPECT_EQ(import_bundle(dir / "bundle").meta.front().second, "GS-8");
}

TEST(Cli, AblateWritesOneRowPerVariant) {
  const fs::path dir = scratch("ablate");
  std::string out;
  ASSERT_EQ(run_cli({"ablate", "--variants", "GS-32,CP", "--out", dir.string(), "--override", "schedule.T=10",
                     "--override", "eval_size=32", "--override", "rho=0.3"},
                    &out),
            kExitOk)
      << out;
  const std::string jl = read_file_text(dir / "ablation.jsonl");
  std::istringstream is(jl);
  std::string line;
  int rows = 0;
  while (std::getline(is, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_GT(j.at("r_s").get<double>(), 0);
    EXPECT_GT(j.at("r_c").get<double>(), 0);
    EXPECT_GT(j.at("r_f").get<double>(), 0);
    ++rows;
  }
  EXPECT_EQ(rows, 2);
  EXPECT_TRUE(fs::exists(dir / "GS-32" / "samples.png"));
  EXPECT_TRUE(fs::exists(dir / "CP" / "report.txt"));
}
