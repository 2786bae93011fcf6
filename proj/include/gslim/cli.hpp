// Copyright 2026 The gslim Authors.
// SPDX-License-Identifier: Apache-2.0

// The `gslim` command line: teach, slim, eval, ablate, export.
//
// Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 I/O.

#pragma once

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gslim/config.hpp"
#include "gslim/export.hpp"
#include "gslim/pipeline.hpp"

namespace gslim {

enum ExitCode { kExitOk = 0, kExitConfig = 2, kExitNumeric = 3, kExitIo = 4 };

inline constexpr const char* kOutRootEnv = "GSLIM_OUT_ROOT";

struct StudentFile {
  ArchSpec spec;
  ParamSet<float> params;
  bool quantized = false;
  QuantConfig qcfg;
  std::string variant;
};

inline StudentFile load_student(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("student checkpoint '" + path.string() + "' not found");
  Checkpoint ck = load_checkpoint(path);
  StudentFile s;
  std::tie(s.spec, s.params) = ck.get_network<float>("S");
  s.quantized = ck.text("quantized").value_or("0") == "1";
  if (auto q = ck.text("quant")) {
    std::istringstream is(*q);
    is >> s.qcfg.m >> s.qcfg.n >> s.qcfg.p;
    if (!is) throw IoError("student checkpoint: malformed quant record");
  }
  s.variant = ck.text("variant").value_or("");
  return s;
}

namespace detail {

inline std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

inline std::string report_table(const std::vector<std::pair<std::string, CompressionReport>>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(10) << "variant" << std::right << std::setw(12) << "GFLOPs" << std::setw(11)
     << "size MB" << std::setw(11) << "proxyFID" << std::setw(9) << "r_s" << std::setw(9) << "r_c" << std::setw(9)
     << "r_f" << "\n";
  if (!rows.empty()) {
    const auto& t = rows.front().second.teacher;
    os << std::left << std::setw(10) << "teacher" << std::right << std::setw(12) << fmt(t.flops / 1e9)
       << std::setw(11) << fmt(t.size_bytes / kBytesPerMB) << std::setw(11) << fmt(t.proxy_fid) << std::setw(9)
       << "1" << std::setw(9) << "1" << std::setw(9) << "1" << "\n";
  }
  for (const auto& [tag, r] : rows)
    os << std::left << std::setw(10) << tag << std::right << std::setw(12) << fmt(r.student.flops / 1e9)
       << std::setw(11) << fmt(r.student.size_bytes / kBytesPerMB) << std::setw(11) << fmt(r.student.proxy_fid)
       << std::setw(9) << fmt(r.r_s, 3) << std::setw(9) << fmt(r.r_c, 3) << std::setw(9) << fmt(r.r_f, 3) << "\n";
  return os.str();
}

inline std::string report_record(const std::string& tag, const CompressionReport& r) {
  nlohmann::ordered_json j;
  j["variant"] = tag;
  j["teacher"] = {{"flops", r.teacher.flops}, {"size_bytes", r.teacher.size_bytes}, {"proxy_fid", r.teacher.proxy_fid}};
  j["student"] = {{"flops", r.student.flops}, {"size_bytes", r.student.size_bytes}, {"proxy_fid", r.student.proxy_fid}};
  j["r_s"] = r.r_s;
  j["r_c"] = r.r_c;
  j["r_f"] = r.r_f;
  j["flop_convention"] = r.flop_convention;
  j["fid_kind"] = r.fid_kind;
  return j.dump();
}

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string variant;
  std::string out;
};

inline void add_common(CLI::App* sub, Common& c, bool with_variant) {
  sub->add_option("--config", c.config, "RunConfig JSON file (default: built-in smoke config)");
  sub->add_option("--seed", c.seed, "random seed");
  if (with_variant) sub->add_option("--variant", c.variant, "GS-32, GS-8, GS-8-MSE, CP, CP+D, D+CP, GD, postQ, fixedD");
  sub->add_option("--out", c.out, "output directory");
  sub->add_option("--override", c.overrides, "key=value (dotted path), repeatable");
}

inline RunConfig resolve_config(const Common& c, const std::string& command) {
  RunConfig cfg = c.config.empty() ? smoke_config() : load_config(c.config);
  cfg = apply_overrides(cfg, c.overrides);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.variant.empty()) {
    parse_variant(c.variant);
    cfg.variant = c.variant;
  }
  if (!c.out.empty()) {
    cfg.out = c.out;
  } else if (cfg.out.empty()) {
    const char* root = std::getenv(kOutRootEnv);
    const std::filesystem::path base = root && *root ? root : "runs";
    std::string leaf = command;
    if (command == "slim") leaf += "-" + cfg.variant;
    cfg.out = (base / (leaf + "-s" + std::to_string(cfg.seed))).string();
  }
  cfg.validate();
  return cfg;
}

inline Tensor<float> first_n(const Tensor<float>& t, std::size_t n) { return batch_slice(t, 0, std::min(n, t.dim(0))); }

}  // namespace detail

inline int cmd_teach(const RunConfig& cfg, std::ostream& out) {
  Resources r = load_resources(cfg, false);
  std::string log;
  const TeacherBundle t = train_teacher(r, &log);
  const std::filesystem::path dir = cfg.out;
  std::filesystem::create_directories(dir);
  write_file_text(dir / "config.json", config_to_json(cfg));
  write_file_text(dir / "metrics.jsonl", log);
  const auto sum = save_teacher(dir / "teacher.gsck", t);
  std::string fid;
  for (const auto& [k, v] : t.meta)
    if (k == "proxy_fid") fid = v;
  out << "teacher " << (dir / "teacher.gsck").string() << "\nchecksum " << sum << "\nproxy_fid " << fid << "\n";
  return kExitOk;
}

inline int cmd_slim(const RunConfig& cfg, std::ostream& out) {
  Resources r = load_resources(cfg, true);
  const RunArtifacts a = run(r);
  out << detail::report_table({{a.variant, a.report}});
  out << "gamma_zero_fraction " << detail::fmt(a.gamma_zero_fraction) << "\n";
  out << "artifacts " << cfg.out << "\n";
  return kExitOk;
}

inline int cmd_eval(const RunConfig& cfg, const std::string& student_path, std::ostream& out) {
  Resources r = load_resources(cfg, true);
  const StudentFile s = load_student(student_path);
  build_generator<float>(s.spec).check_params(s.params);
  r.cfg.quant = s.qcfg;
  const CompressionReport rep = build_report(r, s.spec, s.params, s.quantized);
  out << detail::report_table({{s.variant.empty() ? "student" : s.variant, rep}});
  if (!cfg.out.empty()) {
    std::filesystem::create_directories(cfg.out);
    write_file_text(std::filesystem::path(cfg.out) / "report.txt", rep.to_text());
  }
  return kExitOk;
}

inline int cmd_ablate(const RunConfig& cfg, const std::vector<std::string>& tags, std::ostream& out) {
  for (const auto& t : tags) parse_variant(t);
  Resources r = load_resources(cfg, true);
  std::vector<std::pair<std::string, CompressionReport>> rows;
  std::string records;
  const std::filesystem::path root = cfg.out;
  const Tensor<float> inputs = detail::first_n(eval_inputs(r, r.teacher->spec), 8);
  const Tensor<float> teacher_out =
      generate(Network<float>(r.teacher->spec), r.teacher->params, inputs, false, cfg.quant);
  for (const auto& tag : tags) {
    r.cfg = cfg;
    r.cfg.variant = tag;
    r.cfg.out = (root / tag).string();
    const RunArtifacts a = run(r);
    rows.emplace_back(tag, a.report);
    records += detail::report_record(tag, a.report) + "\n";
    std::vector<Tensor<float>> grid;
    if (r.teacher->spec.input == InputKind::kImage) grid.push_back(inputs);
    grid.push_back(teacher_out);
    grid.push_back(generate(Network<float>(a.student_spec), a.student_params, inputs, a.quantized, a.qcfg));
    write_png(root / tag / "samples.png", image_grid(grid, 8));
  }
  const std::string table = detail::report_table(rows);
  std::filesystem::create_directories(root);
  write_file_text(root / "config.json", config_to_json(cfg));
  write_file_text(root / "ablation.txt", table);
  write_file_text(root / "ablation.jsonl", records);
  out << table;
  return kExitOk;
}

inline int cmd_export(const std::string& student_path, const std::string& out_dir, std::ostream& out) {
  const StudentFile s = load_student(student_path);
  Bundle b;
  b.spec = s.spec;
  b.params = s.params;
  b.quantized = s.quantized;
  b.qcfg = s.qcfg;
  if (!s.variant.empty()) b.meta.emplace_back("variant", s.variant);
  const auto bytes = export_bundle(out_dir, b);
  out << "bundle " << out_dir << "\nbytes " << bytes << "\nfp32_bytes "
      << model_size_bytes(s.spec, SizePolicy::fp32()) << "\n";
  return kExitOk;
}

/// Entry point shared by the executable and the tests.
inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"gslim: joint pruning, quantization and distillation of GAN generators"};
  app.require_subcommand(1);
  detail::Common teach_c, slim_c, eval_c, ablate_c;
  std::string student, bundle_out;
  std::vector<std::string> tags;

  auto* teach = app.add_subcommand("teach", "train a dense teacher generator");
  detail::add_common(teach, teach_c, false);
  auto* slim = app.add_subcommand("slim", "compress the teacher with one variant");
  detail::add_common(slim, slim_c, true);
  auto* eval = app.add_subcommand("eval", "report FLOPs, size and proxy FID of a student");
  detail::add_common(eval, eval_c, false);
  eval->add_option("--student", student, "student.gsck from a slim run")->required();
  auto* ablate = app.add_subcommand("ablate", "run several variants at the same budget");
  detail::add_common(ablate, ablate_c, false);
  ablate->add_option("--variants", tags, "variant tags")->delimiter(',')->required();
  auto* exp = app.add_subcommand("export", "write a deployable bundle");
  exp->add_option("--student", student, "student.gsck from a slim run")->required();
  exp->add_option("--out", bundle_out, "bundle directory")->required();

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      out << app.help();
      return kExitOk;
    } catch (const CLI::ParseError& e) {
      err << "gslim: " << e.what() << "\n";
      return kExitConfig;
    }
    if (*teach) return cmd_teach(detail::resolve_config(teach_c, "teach"), out);
    if (*slim) return cmd_slim(detail::resolve_config(slim_c, "slim"), out);
    if (*eval) return cmd_eval(detail::resolve_config(eval_c, "eval"), student, out);
    if (*ablate) return cmd_ablate(detail::resolve_config(ablate_c, "ablate"), tags, out);
    if (*exp) return cmd_export(student, bundle_out, out);
  } catch (const ConfigError& e) {
    err << "gslim: configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "gslim: numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const IoError& e) {
    err << "gslim: I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "gslim: I/O error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitConfig;
}

}  // namespace gslim
