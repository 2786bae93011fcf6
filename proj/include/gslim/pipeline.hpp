// Copyright 2026 The gslim Authors.
// SPDX-License-Identifier: Apache-2.0

// Run orchestration: resources (task, teacher, extractor), training phases,
// the ablation variants, teacher training and reports.

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gslim/config.hpp"
#include "gslim/data.hpp"
#include "gslim/distill.hpp"
#include "gslim/engine.hpp"
#include "gslim/image_io.hpp"
#include "gslim/metrics.hpp"
#include "gslim/models.hpp"
#include "gslim/sparsity.hpp"

namespace gslim {

// ---------------------------------------------------------------------------
// Variants
// ---------------------------------------------------------------------------

enum class Variant { kGS32, kGS8, kGS8Mse, kCP, kCPD, kDCP, kGD, kPostQ, kFixedD };

inline const std::vector<std::pair<Variant, std::string>>& variant_names() {
  static const std::vector<std::pair<Variant, std::string>> names = {
      {Variant::kGS32, "GS-32"}, {Variant::kGS8, "GS-8"}, {Variant::kGS8Mse, "GS-8-MSE"},
      {Variant::kCP, "CP"},      {Variant::kCPD, "CP+D"}, {Variant::kDCP, "D+CP"},
      {Variant::kGD, "GD"},      {Variant::kPostQ, "postQ"}, {Variant::kFixedD, "fixedD"}};
  return names;
}

inline Variant parse_variant(const std::string& tag) {
  for (const auto& [v, n] : variant_names())
    if (n == tag) return v;
  throw ConfigError("unknown variant '" + tag + "'");
}

inline const std::string& to_string(Variant v) {
  for (const auto& [k, n] : variant_names())
    if (k == v) return n;
  throw ConfigError("unknown variant");
}

/// Variants whose deployed student carries n-bit kernels.
inline bool variant_quantized(Variant v) {
  return v == Variant::kGS8 || v == Variant::kGS8Mse || v == Variant::kPostQ || v == Variant::kFixedD;
}

// ---------------------------------------------------------------------------
// Resources
// ---------------------------------------------------------------------------

struct Resources {
  RunConfig cfg;
  TaskData train;
  TaskData eval;
  std::string fingerprint;
  FeatureExtractor<float> extractor;
  std::optional<TeacherBundle> teacher;

  // Lazily filled caches over the training / eval inputs.
  Tensor<float> teacher_train_out;
  std::vector<Tensor<float>> teacher_train_features;
  std::optional<double> teacher_fid;
};

inline FeatureExtractor<float> load_configured_extractor(const RunConfig& cfg) {
  const auto path = cfg.extractor.path.empty() ? asset_dir() / kExtractorFile : std::filesystem::path(cfg.extractor.path);
  std::optional<std::string> expected;
  if (!cfg.extractor.checksum.empty()) expected = cfg.extractor.checksum;
  return load_extractor(path, expected);
}

/// Loads (or synthesizes) everything a run needs. The teacher is optional
/// so that teacher training can share this path.
inline Resources load_resources(const RunConfig& cfg, bool need_teacher = true) {
  cfg.validate();
  Resources r;
  r.cfg = cfg;
  if (!cfg.folder_x.empty() || !cfg.folder_y.empty()) {
    if (cfg.folder_x.empty() || cfg.folder_y.empty()) throw ConfigError("folder_x and folder_y must be set together");
    auto fx = ingest_folder(cfg.folder_x, cfg.task.size);
    auto fy = ingest_folder(cfg.folder_y, cfg.task.size);
    r.train = {fx.images, fy.images};
    r.eval = r.train;
    r.fingerprint = sha256_hex(fx.manifest_json + fy.manifest_json);
  } else {
    r.train = make_task(cfg.task);
    const auto es = eval_split(cfg.task, cfg.eval_size);
    r.eval = make_task(es);
    r.fingerprint = dataset_fingerprint(cfg.task, r.train);
  }
  r.extractor = load_configured_extractor(cfg);
  if (need_teacher) {
    if (cfg.teacher.path.empty()) throw ConfigError("teacher.path is required (create one with 'gslim teach')");
    std::optional<std::string> expected;
    if (!cfg.teacher.checksum.empty()) expected = cfg.teacher.checksum;
    r.teacher = load_teacher(cfg.teacher.path, expected);
    if (r.teacher->spec.input == InputKind::kImage &&
        (r.teacher->spec.input_shape.h != cfg.task.size || r.teacher->spec.input_shape.c != 3))
      throw ConfigError("teacher input does not match the task image size");
  }
  return r;
}

namespace detail {

inline std::uint64_t seed_for(std::uint64_t seed, const std::string& what) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : what) h = (h ^ c) * 1099511628211ULL;
  return mix64(seed ^ mix64(h));
}

}  // namespace detail

/// Chunked inference, with q_w / q_a when `quant` is set.
inline Tensor<float> generate(const Network<float>& g, const ParamSet<float>& params, const Tensor<float>& input,
                              bool quant, const QuantConfig& qcfg, std::size_t chunk = 64) {
  ForwardOptions o;
  o.training = false;
  o.quant = quant ? QuantMode::kFake : QuantMode::kOff;
  o.qcfg = qcfg;
  const std::size_t N = input.dim(0);
  Tensor<float> out;
  for (std::size_t s = 0; s < N; s += chunk) {
    const std::size_t e = std::min(N, s + chunk);
    auto y = g.forward(params, batch_slice(input, s, e), o);
    if (out.empty()) {
      Shape sh = y.shape();
      sh[0] = N;
      out = Tensor<float>(sh);
    }
    std::copy(y.data(), y.data() + y.size(), out.data() + s * (y.size() / (e - s)));
  }
  return out;
}

/// Generator inputs for evaluation: the eval X images, or fixed noise.
inline Tensor<float> eval_inputs(const Resources& r, const ArchSpec& spec) {
  if (spec.input == InputKind::kImage) return r.eval.x;
  std::mt19937_64 rng(detail::seed_for(r.cfg.seed, "eval-noise"));
  return sample_noise(r.eval.y.dim(0), std::size_t(spec.input_shape.c), rng);
}

inline double generator_fid(const Resources& r, const ArchSpec& spec, const ParamSet<float>& params, bool quant,
                            const QuantConfig& qcfg) {
  Network<float> g(spec);
  return proxy_fid(generate(g, params, eval_inputs(r, spec), quant, qcfg), r.eval.y, r.extractor);
}

inline double teacher_fid(Resources& r) {
  if (!r.teacher) throw ConfigError("no teacher loaded");
  if (!r.teacher_fid) r.teacher_fid = generator_fid(r, r.teacher->spec, r.teacher->params, false, {});
  return *r.teacher_fid;
}

inline void ensure_teacher_cache(Resources& r, bool need_features) {
  if (!r.teacher || r.teacher->spec.input != InputKind::kImage) return;
  if (r.teacher_train_out.empty()) {
    Network<float> g0(r.teacher->spec);
    r.teacher_train_out = generate(g0, r.teacher->params, r.train.x, false, {});
  }
  if (need_features && r.teacher_train_features.empty()) {
    const std::size_t N = r.teacher_train_out.dim(0);
    for (std::size_t s = 0; s < N; s += 64) {
      const std::size_t e = std::min(N, s + std::size_t(64));
      auto f = r.extractor.features(batch_slice(r.teacher_train_out, s, e));
      if (r.teacher_train_features.empty())
        for (auto& t : f) {
          Shape sh = t.shape();
          sh[0] = N;
          r.teacher_train_features.emplace_back(sh);
        }
      for (std::size_t k = 0; k < f.size(); ++k) {
        const std::size_t per = f[k].size() / (e - s);
        std::copy(f[k].data(), f[k].data() + f[k].size(), r.teacher_train_features[k].data() + s * per);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Phases
// ---------------------------------------------------------------------------

struct PhaseSpec {
  std::string name;
  long T = 0;
  double beta = 0;
  double rho = 0;
  bool quant = false;
  bool freeze_theta = false;
  bool gamma_adam = false;
  bool nonsaturating = false;
  double alpha0 = 2e-4;
  double eta0 = 0.01;
  DistillMetric metric = DistillMetric::kPerceptual;
};

/// Line-delimited metrics log, mirrored to a file when one is open.
class MetricsLog {
 public:
  MetricsLog() = default;
  explicit MetricsLog(const std::filesystem::path& file) {
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    out_.open(file, std::ios::trunc);
    if (!out_) throw IoError("cannot write '" + file.string() + "'");
  }
  void write(const std::string& line) {
    text_ += line;
    text_ += '\n';
    if (out_.is_open()) out_ << line << '\n';
  }
  const std::string& text() const { return text_; }

 private:
  std::string text_;
  std::ofstream out_;
};

inline void save_state_checkpoint(const std::filesystem::path& path, const SlimState<float>& s,
                                  const std::string& phase) {
  Checkpoint ck;
  ck.put_network("G", s.G.spec(), s.W);
  ck.put_network("D", s.D.spec(), s.theta);
  ck.set_text("phase", phase);
  ck.set_text("t", std::to_string(s.t));
  save_checkpoint(path, ck);
}

/// Runs ph.T iterations of train_step on fresh optimizer state.
inline void run_phase(SlimState<float>& s, const PhaseSpec& ph, Resources& r, MetricsLog& log) {
  const auto& cfg = r.cfg;
  s.t = 1;
  s.horizon = ph.T;
  s.adam_w.init(s.W);
  s.adam_theta.init(s.theta);
  if (ph.T <= 0) return;

  StepConfig sc;
  sc.beta = ph.beta;
  sc.rho = ph.rho;
  sc.metric = ph.metric;
  sc.quant = ph.quant;
  sc.qcfg = cfg.quant;
  sc.schedule = {ph.alpha0, ph.eta0, ph.T};
  sc.freeze_theta = ph.freeze_theta;
  sc.gamma_adam = ph.gamma_adam;
  sc.gan = {ph.nonsaturating, cfg.prob_floor};

  const bool distill = ph.beta != 0;
  const bool perceptual = distill && ph.metric == DistillMetric::kPerceptual;
  const bool image_input = s.G.spec().input == InputKind::kImage;
  if (distill && !r.teacher) throw ConfigError("phase '" + ph.name + "' needs a teacher");
  if (distill) ensure_teacher_cache(r, perceptual);

  BatchStream xs(r.train.x, std::size_t(cfg.batch_size), detail::seed_for(cfg.seed, ph.name + "/x"));
  BatchStream ys(r.train.y, std::size_t(cfg.batch_size), detail::seed_for(cfg.seed, ph.name + "/y"));
  std::mt19937_64 noise_rng(detail::seed_for(cfg.seed, ph.name + "/z"));
  std::optional<Network<float>> g0;
  if (distill && !image_input) g0.emplace(r.teacher->spec);

  const std::filesystem::path out_dir = cfg.out;
  for (long t = 1; t <= ph.T; ++t) {
    Tensor<float> x, g0_out;
    std::vector<Tensor<float>> feats;
    if (image_input) {
      const auto idx = xs.next_indices();
      x = batch_gather<float>(r.train.x, idx);
      if (distill) {
        g0_out = batch_gather<float>(r.teacher_train_out, idx);
        if (perceptual)
          for (const auto& f : r.teacher_train_features) feats.push_back(batch_gather<float>(f, idx));
      }
    } else {
      x = sample_noise(std::size_t(cfg.batch_size), std::size_t(s.G.spec().input_shape.c), noise_rng);
      if (distill) g0_out = g0->forward(r.teacher->params, x, ForwardOptions{});
    }
    const Tensor<float> y = ys.next();
    StepRecord rec;
    try {
      rec = train_step(s, x, y, g0_out, perceptual && !feats.empty() ? &feats : nullptr, &r.extractor, sc);
    } catch (const NumericError& e) {
      if (!cfg.out.empty()) {
        const auto* f = dynamic_cast<const NumericFailure<float>*>(&e);
        Checkpoint ck;
        ck.put_network("G", s.G.spec(), f ? f->W : s.W);
        ck.put_network("D", s.D.spec(), f ? f->theta : s.theta);
        ck.set_text("phase", ph.name);
        ck.set_text("error", e.what());
        save_checkpoint(out_dir / "failure_snapshot.gsck", ck);
      }
      throw NumericError(std::string(e.what()) + " in phase '" + ph.name + "'" +
                         (cfg.out.empty() ? "" : "; snapshot written to " + (out_dir / "failure_snapshot.gsck").string()));
    }
    if (t % cfg.log_every == 0 || t == ph.T) log.write(step_record_json(rec, ph.name));
    if (cfg.checkpoint_every > 0 && t % cfg.checkpoint_every == 0 && !cfg.out.empty())
      save_state_checkpoint(out_dir / "checkpoints" / (ph.name + "_" + std::to_string(t) + ".gsck"), s, ph.name);
  }
}

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

struct RunArtifacts {
  std::string variant;
  ArchSpec full_spec;           // architecture trained in the pruning phase
  ParamSet<float> full_params;  // its parameters at the end of that phase
  MaskSet masks;
  ArchSpec student_spec;        // extracted (and possibly finetuned) student
  ParamSet<float> student_params;
  bool quantized = false;
  QuantConfig qcfg;
  ArchSpec disc_spec;
  ParamSet<float> theta_init;
  ParamSet<float> theta;
  CompressionReport report;
  std::string metrics_log;
  double gamma_zero_fraction = 0;
  std::uint64_t prob_floor_hits = 0;
};

inline InitOptions init_options(const RunConfig& cfg) {
  InitOptions io;
  io.kernel_std = cfg.kernel_std;
  io.gamma_lo = cfg.gamma_lo;
  io.gamma_hi = cfg.gamma_hi;
  return io;
}

inline ArchSpec discriminator_spec(const Resources& r) {
  if (r.teacher && r.teacher->discriminator) return r.teacher->discriminator->first;
  return builtin_spec(r.cfg.teacher.discriminator);
}

inline CompressionReport build_report(Resources& r, const ArchSpec& student, const ParamSet<float>& params,
                                      bool quantized) {
  ModelStats t, s;
  t.flops = count_flops(r.teacher->spec);
  t.size_bytes = model_size_bytes(r.teacher->spec);
  t.proxy_fid = teacher_fid(r);
  s.flops = count_flops(student);
  s.size_bytes = model_size_bytes(student, quantized ? SizePolicy::quantized(r.cfg.quant.n) : SizePolicy::fp32());
  s.proxy_fid = generator_fid(r, student, params, quantized, r.cfg.quant);
  auto rep = compression_ratios(t, s);
  const auto& is = r.teacher->spec.input_shape;
  rep.input_shape = std::to_string(is.c) + "x" + std::to_string(is.h) + "x" + std::to_string(is.w);
  return rep;
}

inline void write_run_outputs(const RunArtifacts& a, const Resources& r) {
  if (r.cfg.out.empty()) return;
  const std::filesystem::path dir = r.cfg.out;
  std::filesystem::create_directories(dir);
  write_file_text(dir / "config.json", config_to_json(r.cfg));
  write_file_text(dir / "report.txt", a.report.to_text());
  write_file_text(dir / "masks.json", masks_to_json(a.masks) + "\n");
  write_file_text(dir / "fingerprint.txt", r.fingerprint + "\n");
  Checkpoint ck;
  ck.put_network("S", a.student_spec, a.student_params);
  ck.put_network("D", a.disc_spec, a.theta);
  ck.set_text("variant", a.variant);
  ck.set_text("quantized", a.quantized ? "1" : "0");
  ck.set_text("quant", std::to_string(a.qcfg.m) + " " + std::to_string(a.qcfg.n) + " " + std::to_string(a.qcfg.p));
  ck.set_text("dataset", r.fingerprint);
  if (r.teacher) ck.set_text("teacher", r.teacher->checksum);
  ck.set_text("extractor", r.extractor.checksum());
  save_checkpoint(dir / "student.gsck", ck);
}

/// Runs one ablation pipeline end to end with the budget and hyperparameters in r.cfg.
inline RunArtifacts run_variant(Variant v, Resources& r) {
  const RunConfig& cfg = r.cfg;
  if (!r.teacher) throw ConfigError("run_variant needs a teacher");
  const auto& teacher = *r.teacher;
  const long T = cfg.schedule.T;
  const long Tft = static_cast<long>(std::lround(double(T) * cfg.finetune_fraction));
  const DistillMetric metric = v == Variant::kGS8Mse ? DistillMetric::kMse : parse_distill_metric(cfg.metric);
  const InitOptions io = init_options(cfg);

  std::optional<MetricsLog> file_log;
  MetricsLog mem_log;
  if (!cfg.out.empty()) file_log.emplace(std::filesystem::path(cfg.out) / "metrics.jsonl");
  MetricsLog& log = file_log ? *file_log : mem_log;

  const ArchSpec dspec = discriminator_spec(r);
  ParamSet<float> theta0 = init_params<float>(dspec, detail::seed_for(cfg.seed, "theta"), io);
  const bool pretrained_pair = v == Variant::kCP || v == Variant::kCPD || v == Variant::kFixedD;
  if (pretrained_pair && teacher.discriminator) theta0 = teacher.discriminator->second;

  auto phase = [&](std::string name, long len, double beta, double rho, bool quant) {
    PhaseSpec p;
    p.name = std::move(name);
    p.T = len;
    p.beta = beta;
    p.rho = rho;
    p.quant = quant;
    p.metric = metric;
    p.nonsaturating = cfg.nonsaturating;
    p.alpha0 = cfg.schedule.alpha0;
    p.eta0 = cfg.schedule.eta0;
    p.freeze_theta = v == Variant::kFixedD;
    return p;
  };

  RunArtifacts a;
  a.variant = to_string(v);
  a.qcfg = cfg.quant;
  a.disc_spec = dspec;
  a.theta_init = theta0;

  // Pruning-phase network.
  ArchSpec spec = teacher.spec;
  ParamSet<float> params;
  if (v == Variant::kCP || v == Variant::kCPD) {
    params = teacher.params;
  } else if (v == Variant::kDCP || v == Variant::kGD) {
    spec = scale_channels(teacher.spec, cfg.student_fraction, teacher.spec.name + "_student");
    params = init_params<float>(spec, detail::seed_for(cfg.seed, "student"), io);
  } else {
    params = init_params<float>(spec, detail::seed_for(cfg.seed, "student"), io);
  }
  SlimState<float> s(spec, std::move(params), dspec, theta0);

  switch (v) {
    case Variant::kGS32:
      run_phase(s, phase("main", T, cfg.beta, cfg.rho, false), r, log);
      break;
    case Variant::kGS8:
    case Variant::kGS8Mse:
    case Variant::kFixedD:
      run_phase(s, phase("main", T, cfg.beta, cfg.rho, true), r, log);
      break;
    case Variant::kCP:
    case Variant::kCPD:
      run_phase(s, phase("prune", T, 0.0, cfg.rho, false), r, log);
      break;
    case Variant::kDCP:
      run_phase(s, phase("distill", T / 2, cfg.beta, 0.0, false), r, log);
      run_phase(s, phase("prune", T - T / 2, 0.0, cfg.rho, false), r, log);
      break;
    case Variant::kGD:
      run_phase(s, phase("distill", T, cfg.beta, 0.0, false), r, log);
      break;
    case Variant::kPostQ:
      run_phase(s, phase("main", T, cfg.beta, cfg.rho, false), r, log);
      break;
  }
  a.full_spec = s.G.spec();
  a.full_params = s.W;
  a.gamma_zero_fraction = gamma_zero_fraction(a.full_spec, a.full_params);
  a.masks = derive_masks(a.full_spec, a.full_params);
  auto [espec, eparams] = extract_subnetwork(a.full_spec, a.full_params, a.masks);

  // Finetuning on the extracted network.
  const bool finetune = v == Variant::kCP || v == Variant::kCPD || v == Variant::kDCP || v == Variant::kPostQ;
  if (finetune && Tft > 0) {
    SlimState<float> f(espec, std::move(eparams), dspec, s.theta);
    f.floor_hits = s.floor_hits;
    if (v == Variant::kCPD) run_phase(f, phase("finetune", Tft, cfg.beta, 0.0, false), r, log);
    else if (v == Variant::kPostQ) run_phase(f, phase("qat", Tft, 0.0, 0.0, true), r, log);
    else run_phase(f, phase("finetune", Tft, 0.0, 0.0, false), r, log);
    eparams = f.W;
    s.theta = f.theta;
    s.floor_hits = f.floor_hits;
  }
  a.quantized = variant_quantized(v);
  if (a.quantized) eparams = finalize_weights(eparams, cfg.quant);
  a.student_spec = std::move(espec);
  a.student_params = std::move(eparams);
  a.theta = s.theta;
  a.prob_floor_hits = s.floor_hits.hits;
  a.report = build_report(r, a.student_spec, a.student_params, a.quantized);
  a.metrics_log = log.text();
  write_run_outputs(a, r);
  return a;
}

inline RunArtifacts run_variant(const std::string& tag, Resources& r) { return run_variant(parse_variant(tag), r); }

/// The configured variant.
inline RunArtifacts run(Resources& r) { return run_variant(r.cfg.variant, r); }

// ---------------------------------------------------------------------------
// Teacher
// ---------------------------------------------------------------------------

namespace detail {

// mean |a - b| and its gradient w.r.t. a, scaled by w.
inline double l1_loss(const Tensor<float>& a, const Tensor<float>& b, double w, Tensor<float>* grad) {
  double s = 0;
  const double inv = 1.0 / double(a.size());
  if (grad) *grad = Tensor<float>(a.shape());
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = double(a[k]) - double(b[k]);
    s += std::abs(d);
    if (grad) (*grad)[k] = static_cast<float>(w * inv * (d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0));
  }
  return w * s * inv;
}

inline void add_into(Tensor<float>& a, const Tensor<float>& b) {
  for (std::size_t k = 0; k < a.size(); ++k) a[k] += b[k];
}

}  // namespace detail

/// Dense training of G0 (no distillation, sparsity or quantization).
/// Image tasks with teacher.cycle > 0 train a second generator Y -> X and a
/// second discriminator alongside, with the L1 cycle-consistency term of
/// unpaired translation; only G0 and its discriminator are kept. Noise
/// generators, or cycle = 0, use the plain minimax game. `r` needs the task
/// and extractor only.
inline TeacherBundle train_teacher(Resources& r, std::string* metrics_log = nullptr) {
  const auto& cfg = r.cfg;
  const ArchSpec gspec = builtin_spec(cfg.teacher.arch);
  const ArchSpec dspec = builtin_spec(cfg.teacher.discriminator);
  build_generator<float>(gspec);
  build_discriminator<float>(dspec);
  const InitOptions io = init_options(cfg);
  SlimState<float> s(gspec, init_params<float>(gspec, detail::seed_for(cfg.seed, "teacher/G"), io), dspec,
                     init_params<float>(dspec, detail::seed_for(cfg.seed, "teacher/D"), io));
  MetricsLog log;
  const bool cycle = cfg.teacher.cycle > 0 && gspec.input == InputKind::kImage;
  if (!cycle) {
    PhaseSpec p;
    p.name = "teach";
    p.T = cfg.teacher.steps;
    p.gamma_adam = true;
    p.nonsaturating = cfg.teacher.nonsaturating;
    p.alpha0 = cfg.teacher.alpha0;
    run_phase(s, p, r, log);
  } else {
    if (gspec.output_shape().c != gspec.input_shape.c || gspec.output_shape().h != gspec.input_shape.h)
      throw ConfigError("cycle-consistent teacher training needs matching input and output shapes");
    // Backward mapping F: Y -> X and its discriminator.
    SlimState<float> b(gspec, init_params<float>(gspec, detail::seed_for(cfg.seed, "teacher/F"), io), dspec,
                       init_params<float>(dspec, detail::seed_for(cfg.seed, "teacher/DX"), io));
    const long T = cfg.teacher.steps;
    const Schedule sched{cfg.teacher.alpha0, 0.0, T};
    const GanLossOptions gan{cfg.teacher.nonsaturating, cfg.prob_floor};
    const double lam = cfg.teacher.cycle;
    BatchStream xs(r.train.x, std::size_t(cfg.batch_size), detail::seed_for(cfg.seed, "teach/x"));
    BatchStream ys(r.train.y, std::size_t(cfg.batch_size), detail::seed_for(cfg.seed, "teach/y"));
    ForwardOptions fo;
    for (long t = 1; t <= T; ++t) {
      const double alpha = lr_alpha(double(t), sched);
      const Tensor<float> x = xs.next(), y = ys.next();
      Trace<float> tg1, tf1, tf2, tg2;
      const Tensor<float> fake_y = s.G.forward(s.W, x, fo, &tg1);
      const Tensor<float> rec_x = b.G.forward(b.W, fake_y, fo, &tf1);
      const Tensor<float> fake_x = b.G.forward(b.W, y, fo, &tf2);
      const Tensor<float> rec_y = s.G.forward(s.W, fake_x, fo, &tg2);

      ParamSet<float> gG = s.W.zeros_like(), gF = b.W.zeros_like();
      Tensor<float> g_fy, g_fx, g_rx, g_ry;
      const double gan_g = generator_gan_term(s.D, s.theta, fake_y, gan, &s.floor_hits, &g_fy);
      const double gan_f = generator_gan_term(b.D, b.theta, fake_x, gan, &b.floor_hits, &g_fx);
      const double cyc = detail::l1_loss(rec_x, x, lam, &g_rx) + detail::l1_loss(rec_y, y, lam, &g_ry);
      if (!std::isfinite(gan_g + gan_f + cyc))
        throw NumericFailure<float>("non-finite teacher loss at t=" + std::to_string(t), s.W, s.theta);
      detail::add_into(g_fy, b.G.backward(b.W, tf1, g_rx, &gF, true));
      detail::add_into(g_fx, s.G.backward(s.W, tg2, g_ry, &gG, true));
      s.G.backward(s.W, tg1, g_fy, &gG, false);
      b.G.backward(b.W, tf2, g_fx, &gF, false);
      s.adam_w.step(s.W, gG, alpha, +1.0, [](ParamRole q) { return is_trainable(q); });
      b.adam_w.step(b.W, gF, alpha, +1.0, [](ParamRole q) { return is_trainable(q); });

      ParamSet<float> gDy = s.theta.zeros_like(), gDx = b.theta.zeros_like();
      const double ly = gan_loss_discriminator(s.D, s.theta, y, fake_y, gan, &s.floor_hits, &gDy);
      const double lx = gan_loss_discriminator(b.D, b.theta, x, fake_x, gan, &b.floor_hits, &gDx);
      if (!std::isfinite(ly + lx))
        throw NumericFailure<float>("non-finite teacher discriminator loss at t=" + std::to_string(t), s.W, s.theta);
      s.adam_theta.step(s.theta, gDy, alpha, -1.0, [](ParamRole q) { return is_trainable(q); });
      b.adam_theta.step(b.theta, gDx, alpha, -1.0, [](ParamRole q) { return is_trainable(q); });
      s.G.commit_batch_stats(s.W, tg1);
      b.G.commit_batch_stats(b.W, tf2);

      if (t % cfg.log_every == 0 || t == T) {
        nlohmann::ordered_json j;
        j["phase"] = "teach";
        j["t"] = t;
        j["alpha"] = alpha;
        j["gan"] = gan_g;
        j["gan_backward"] = gan_f;
        j["cycle"] = cyc;
        j["l_theta"] = ly;
        j["l_theta_backward"] = lx;
        log.write(j.dump());
      }
    }
  }
  if (metrics_log) *metrics_log = log.text();

  TeacherBundle t;
  t.spec = gspec;
  t.params = s.W;
  t.discriminator = std::make_pair(dspec, s.theta);
  const double fid = generator_fid(r, gspec, t.params, false, {});
  std::ostringstream f;
  f << std::setprecision(10) << fid;
  t.meta = {{"proxy_fid", f.str()}, {"steps", std::to_string(cfg.teacher.steps)},
            {"cycle", std::to_string(cycle ? cfg.teacher.cycle : 0.0)}, {"dataset", r.fingerprint},
            {"seed", std::to_string(cfg.seed)}, {"extractor", r.extractor.checksum()}};
  return t;
}

}  // namespace gslim
