// Copyright 2026 The gslim Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gslim/arch.hpp"
#include "gslim/distill.hpp"
#include "gslim/error.hpp"
#include "gslim/quantization.hpp"
#include "gslim/tensor.hpp"

namespace gslim {

// ---------------------------------------------------------------------------
// FLOPs
// ---------------------------------------------------------------------------

/// How multiply-accumulates and elementwise work are turned into a FLOP count.
struct FlopConvention {
  enum class ConvBasis { kOutput, kPaddedInput };
  enum class DeconvBasis { kOutput, kInput };

  std::string name;
  double flops_per_mac = 1.0;
  ConvBasis conv = ConvBasis::kOutput;
  DeconvBasis deconv = DeconvBasis::kOutput;
  bool elementwise = false;  // bias, norm, activation and residual-add work
  double norm_flops_per_element = 4.0;

  /// Multiply and add each count: a KxK conv costs 2*K*K*Cin*Cout per output pixel.
  static FlopConvention textbook() { return {"mac2-output", 2.0, ConvBasis::kOutput, DeconvBasis::kOutput, false}; }

  /// The frozen default, selected by `calibrate_flops` on the 9-block
  /// translator: one FLOP per MAC, convolutions counted per padded input
  /// pixel divided by stride^2, transposed convolutions per input pixel,
  /// elementwise work included.
  static FlopConvention calibrated() {
    return {"mac1-padded-input-deconv-input+elementwise", 1.0, ConvBasis::kPaddedInput, DeconvBasis::kInput, true};
  }

  static std::vector<FlopConvention> candidates() {
    std::vector<FlopConvention> out;
    for (double fpm : {1.0, 2.0})
      for (auto cb : {ConvBasis::kOutput, ConvBasis::kPaddedInput})
        for (auto db : {DeconvBasis::kOutput, DeconvBasis::kInput})
          for (bool ew : {false, true}) {
            FlopConvention c;
            c.flops_per_mac = fpm;
            c.conv = cb;
            c.deconv = db;
            c.elementwise = ew;
            c.name = std::string(fpm == 1.0 ? "mac1" : "mac2") + (cb == ConvBasis::kOutput ? "-output" : "-padded-input") +
                     (db == DeconvBasis::kOutput ? "" : "-deconv-input") + (ew ? "+elementwise" : "");
            out.push_back(c);
          }
    return out;
  }
};

/// Per-layer FLOPs for one sample of `input`.
inline std::vector<double> layer_flops(const ArchSpec& spec, const FeatureShape& input, const FlopConvention& cv) {
  const auto shapes = spec.infer_shapes(input);
  std::vector<double> out(spec.layers.size(), 0.0);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& d = spec.layers[i];
    const FeatureShape& in = i == 0 ? input : shapes[i - 1];
    const FeatureShape& os = shapes[i];
    const double elems = static_cast<double>(os.numel());
    double macs = 0, extra = 0;
    switch (d.kind) {
      case LayerKind::kConv: {
        const double per_pos = double(d.kernel) * d.kernel * d.in * d.out;
        const double pos = cv.conv == FlopConvention::ConvBasis::kOutput
                               ? double(os.h) * os.w
                               : double(in.h + 2 * d.pad) * (in.w + 2 * d.pad) / (double(d.stride) * d.stride);
        macs = per_pos * pos;
        if (d.bias) extra = elems;
        break;
      }
      case LayerKind::kDeconv: {
        const double per_pos = double(d.kernel) * d.kernel * d.in * d.out;
        const double pos = cv.deconv == FlopConvention::DeconvBasis::kOutput ? double(os.h) * os.w
                                                                              : double(in.h) * in.w;
        macs = per_pos * pos;
        if (d.bias) extra = elems;
        break;
      }
      case LayerKind::kLinear:
        macs = double(d.in) * d.out * d.out_h * d.out_w;
        if (d.bias) extra = elems;
        break;
      case LayerKind::kNorm:
        extra = cv.norm_flops_per_element * elems;
        break;
      case LayerKind::kAct:
        extra = elems;
        break;
      case LayerKind::kResEnd:
        extra = elems;
        break;
      case LayerKind::kResBegin:
        break;
    }
    out[i] = cv.flops_per_mac * macs + (cv.elementwise ? extra : 0.0);
  }
  return out;
}

inline double count_flops(const ArchSpec& spec, const FeatureShape& input,
                          const FlopConvention& cv = FlopConvention::calibrated()) {
  double s = 0;
  for (double f : layer_flops(spec, input, cv)) s += f;
  return s;
}

inline double count_flops(const ArchSpec& spec, const FlopConvention& cv = FlopConvention::calibrated()) {
  return count_flops(spec, spec.input_shape, cv);
}

struct FlopCalibration {
  FlopConvention convention;
  double flops = 0;
  double rel_error = 0;
};

/// Picks the candidate convention whose count for `spec` is closest to `target`.
inline FlopCalibration calibrate_flops(const ArchSpec& spec, double target,
                                       const std::vector<FlopConvention>& candidates = FlopConvention::candidates()) {
  if (candidates.empty()) throw ConfigError("calibrate_flops: no candidate conventions");
  FlopCalibration best;
  best.rel_error = INFINITY;
  for (const auto& c : candidates) {
    const double f = count_flops(spec, c);
    const double e = std::abs(f - target) / target;
    if (e < best.rel_error) best = {c, f, e};
  }
  return best;
}

// ---------------------------------------------------------------------------
// Model size
// ---------------------------------------------------------------------------

/// Storage policy: kernels at `kernel_bits` when quantized, every other tensor at 32 bits.
struct SizePolicy {
  bool quantized_kernels = false;
  int kernel_bits = 8;

  static SizePolicy fp32() { return {}; }
  static SizePolicy quantized(int n) { return {true, n}; }
};

inline constexpr double kBytesPerMB = 1048576.0;

inline double model_size_bytes(const ArchSpec& spec, const SizePolicy& policy = SizePolicy::fp32()) {
  double bits = 0;
  for (const auto& p : param_census(spec)) {
    const double n = static_cast<double>(shape_numel(p.shape));
    bits += n * (policy.quantized_kernels && p.role == ParamRole::kKernel ? policy.kernel_bits : 32);
  }
  return bits / 8.0;
}

inline double model_size_mb(const ArchSpec& spec, const SizePolicy& policy = SizePolicy::fp32()) {
  return model_size_bytes(spec, policy) / kBytesPerMB;
}

// ---------------------------------------------------------------------------
// Proxy Frechet distance
// ---------------------------------------------------------------------------

inline constexpr double kFidShrinkage = 1e-6;

/// Frechet distance between Gaussians fitted to the rows of `a` and `b`
/// (samples x features). Covariances use the unbiased estimator plus
/// `shrinkage` * I.
inline double frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double shrinkage = kFidShrinkage) {
  if (a.rows() == 0 || b.rows() == 0) throw ConfigError("proxy_fid: empty sample set");
  if (a.cols() != b.cols()) throw ConfigError("proxy_fid: feature dimensions differ");
  const Eigen::Index D = a.cols();
  auto stats = [&](const Eigen::MatrixXd& x, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
    mu = x.colwise().mean().transpose();
    const Eigen::MatrixXd c = x.rowwise() - mu.transpose();
    const double denom = x.rows() > 1 ? double(x.rows() - 1) : 1.0;
    cov = (c.transpose() * c) / denom;
    cov += shrinkage * Eigen::MatrixXd::Identity(D, D);
  };
  Eigen::VectorXd m1, m2;
  Eigen::MatrixXd s1, s2;
  stats(a, m1, s1);
  stats(b, m2, s2);
  // Tr((S1 S2)^1/2) = Tr((S1^1/2 S2 S1^1/2)^1/2), the inner matrix being symmetric PSD.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> e1(s1);
  const Eigen::VectorXd ev1 = e1.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd r1 = e1.eigenvectors() * ev1.asDiagonal() * e1.eigenvectors().transpose();
  Eigen::MatrixXd m = r1 * s2 * r1;
  m = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(m, Eigen::EigenvaluesOnly);
  const double tr_sqrt = em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d = (m1 - m2).squaredNorm() + s1.trace() + s2.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, d);
}

template <class T>
Eigen::MatrixXd to_matrix(const Tensor<T>& rows) {
  if (rows.rank() != 2) throw ConfigError("expected a [samples, features] tensor");
  Eigen::MatrixXd m(rows.dim(0), rows.dim(1));
  for (std::size_t i = 0; i < rows.dim(0); ++i)
    for (std::size_t j = 0; j < rows.dim(1); ++j) m(i, j) = rows[i * rows.dim(1) + j];
  return m;
}

/// Embeds images in chunks through the extractor.
inline Eigen::MatrixXd embed_images(const Tensor<float>& images, const FeatureExtractor<float>& f,
                                    std::size_t chunk = 64) {
  if (images.rank() != 4 || images.dim(0) == 0) throw ConfigError("proxy_fid: empty image set");
  const std::size_t N = images.dim(0);
  Eigen::MatrixXd out;
  for (std::size_t s = 0; s < N; s += chunk) {
    const std::size_t e = std::min(N, s + chunk);
    auto emb = f.embed(batch_slice(images, s, e));
    if (out.size() == 0) out.resize(Eigen::Index(N), Eigen::Index(emb.dim(1)));
    out.middleRows(Eigen::Index(s), Eigen::Index(e - s)) = to_matrix(emb);
  }
  return out;
}

/// Frechet distance over extractor embeddings; labelled "proxy" in reports
/// because the embedding is not Inception.
inline double proxy_fid(const Tensor<float>& set_a, const Tensor<float>& set_b, const FeatureExtractor<float>& f) {
  return frechet_distance(embed_images(set_a, f), embed_images(set_b, f));
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct ModelStats {
  double flops = 0;
  double size_bytes = 0;
  double proxy_fid = 0;
};

struct CompressionReport {
  ModelStats teacher;
  ModelStats student;
  double r_s = 1, r_c = 1, r_f = 1;
  std::string flop_convention = FlopConvention::calibrated().name;
  std::string input_shape;
  std::string fid_kind = "proxy";

  /// Flat "key=value" lines in a fixed order.
  std::string to_text() const {
    std::ostringstream os;
    os << std::setprecision(10);
    os << "flops_teacher=" << teacher.flops << "\n"
       << "flops_student=" << student.flops << "\n"
       << "size_teacher_bytes=" << teacher.size_bytes << "\n"
       << "size_student_bytes=" << student.size_bytes << "\n"
       << "size_teacher_mb=" << teacher.size_bytes / kBytesPerMB << "\n"
       << "size_student_mb=" << student.size_bytes / kBytesPerMB << "\n"
       << "fid_teacher=" << teacher.proxy_fid << "\n"
       << "fid_student=" << student.proxy_fid << "\n"
       << "fid_kind=" << fid_kind << "\n"
       << "r_s=" << r_s << "\n"
       << "r_c=" << r_c << "\n"
       << "r_f=" << r_f << "\n"
       << "flop_convention=" << flop_convention << "\n"
       << "input_shape=" << input_shape << "\n";
    return os.str();
  }

  static CompressionReport from_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      auto eq = line.find('=');
      if (eq == std::string::npos) throw IoError("report: malformed line '" + line + "'");
      kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto num = [&](const char* k) {
      auto it = kv.find(k);
      if (it == kv.end()) throw IoError(std::string("report: missing '") + k + "'");
      return std::stod(it->second);
    };
    CompressionReport r;
    r.teacher = {num("flops_teacher"), num("size_teacher_bytes"), num("fid_teacher")};
    r.student = {num("flops_student"), num("size_student_bytes"), num("fid_student")};
    r.r_s = num("r_s");
    r.r_c = num("r_c");
    r.r_f = num("r_f");
    r.flop_convention = kv["flop_convention"];
    r.input_shape = kv["input_shape"];
    r.fid_kind = kv.count("fid_kind") ? kv["fid_kind"] : "proxy";
    return r;
  }
};

/// r_s = FLOPs_G0 / FLOPs_G, r_c = Size_G0 / Size_G, r_f = FID_G0 / FID_G.
inline CompressionReport compression_ratios(const ModelStats& teacher, const ModelStats& student) {
  auto ratio = [](double a, double b, const char* what) {
    if (!(a > 0) || !(b > 0)) throw ConfigError(std::string("compression_ratios: ") + what + " must be positive");
    return a / b;
  };
  CompressionReport r;
  r.teacher = teacher;
  r.student = student;
  r.r_s = ratio(teacher.flops, student.flops, "FLOPs");
  r.r_c = ratio(teacher.size_bytes, student.size_bytes, "sizes");
  r.r_f = ratio(teacher.proxy_fid, student.proxy_fid, "FIDs");
  return r;
}

}  // namespace gslim
