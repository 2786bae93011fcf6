// Copyright 2026 The gslim Authors.
// SPDX-License-Identifier: Apache-2.0

// Raster I/O (PNG via libpng, JPEG via libjpeg, binary PPM) and image-folder
// ingestion. Link against gslim_io.

#pragma once

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gslim/checkpoint.hpp"
#include "gslim/error.hpp"
#include "gslim/tensor.hpp"

namespace gslim {

/// 8-bit interleaved RGB.
struct Image {
  int width = 0, height = 0;
  std::vector<std::uint8_t> rgb;
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::filesystem::path& p, const char* mode) {
  FilePtr f(std::fopen(p.c_str(), mode));
  if (!f) throw IoError("cannot open '" + p.string() + "'");
  return f;
}

inline Image read_png(const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw IoError("'" + path.string() + "': " + img.message);
  img.format = PNG_FORMAT_RGB;
  Image out;
  out.width = int(img.width);
  out.height = int(img.height);
  out.rgb.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.rgb.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError("'" + path.string() + "': " + img.message);
  }
  return out;
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
  auto* e = reinterpret_cast<JpegError*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, e->message);
  std::longjmp(e->jump, 1);
}

inline Image read_jpeg(const std::filesystem::path& path) {
  auto f = open_file(path, "rb");
  jpeg_decompress_struct cinfo;
  JpegError err;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_exit;
  Image out;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw IoError("'" + path.string() + "': " + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out.width = int(cinfo.output_width);
  out.height = int(cinfo.output_height);
  out.rgb.resize(std::size_t(out.width) * out.height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.rgb.data() + std::size_t(cinfo.output_scanline) * out.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

inline Image read_ppm(const std::filesystem::path& path) {
  auto bytes = read_file_bytes(path);
  std::size_t pos = 0;
  auto token = [&]() {
    std::string t;
    while (pos < bytes.size()) {
      const char c = char(bytes[pos]);
      if (c == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
        ++pos;
      } else {
        t.push_back(c);
        ++pos;
      }
    }
    return t;
  };
  if (token() != "P6") throw IoError("'" + path.string() + "': only binary PPM (P6) is supported");
  Image out;
  try {
    out.width = std::stoi(token());
    out.height = std::stoi(token());
    if (std::stoi(token()) != 255) throw IoError("'" + path.string() + "': only 8-bit PPM is supported");
  } catch (const std::invalid_argument&) {
    throw IoError("'" + path.string() + "': malformed PPM header");
  }
  ++pos;
  const std::size_t n = std::size_t(out.width) * out.height * 3;
  if (bytes.size() < pos + n) throw IoError("'" + path.string() + "': truncated PPM");
  out.rgb.assign(bytes.begin() + std::ptrdiff_t(pos), bytes.begin() + std::ptrdiff_t(pos + n));
  return out;
}

inline std::string lower_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return char(std::tolower(c)); });
  return e;
}

}  // namespace detail

inline bool is_supported_image(const std::filesystem::path& p) {
  const auto e = detail::lower_ext(p);
  return e == ".png" || e == ".jpg" || e == ".jpeg" || e == ".ppm";
}

inline Image read_image(const std::filesystem::path& path) {
  const auto e = detail::lower_ext(path);
  if (e == ".png") return detail::read_png(path);
  if (e == ".jpg" || e == ".jpeg") return detail::read_jpeg(path);
  if (e == ".ppm") return detail::read_ppm(path);
  throw IoError("'" + path.string() + "': unsupported image format");
}

inline void write_png(const std::filesystem::path& path, const Image& img) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image p;
  std::memset(&p, 0, sizeof p);
  p.version = PNG_IMAGE_VERSION;
  p.width = png_uint_32(img.width);
  p.height = png_uint_32(img.height);
  p.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&p, path.c_str(), 0, img.rgb.data(), 0, nullptr))
    throw IoError("cannot write '" + path.string() + "': " + p.message);
}

/// Bilinear resize so the shorter side equals `size`, then a centered
/// size x size crop.
inline Image resize_center_crop(const Image& in, int size) {
  if (in.width <= 0 || in.height <= 0) throw IoError("empty image");
  const double scale = double(size) / std::min(in.width, in.height);
  const int rw = std::max(size, int(std::lround(in.width * scale)));
  const int rh = std::max(size, int(std::lround(in.height * scale)));
  const int ox = (rw - size) / 2, oy = (rh - size) / 2;
  Image out;
  out.width = out.height = size;
  out.rgb.resize(std::size_t(size) * size * 3);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double sx = std::clamp((x + ox + 0.5) * in.width / double(rw) - 0.5, 0.0, in.width - 1.0);
      const double sy = std::clamp((y + oy + 0.5) * in.height / double(rh) - 0.5, 0.0, in.height - 1.0);
      const int x0 = int(sx), y0 = int(sy);
      const int x1 = std::min(x0 + 1, in.width - 1), y1 = std::min(y0 + 1, in.height - 1);
      const double fx = sx - x0, fy = sy - y0;
      for (int c = 0; c < 3; ++c) {
        auto px = [&](int yy, int xx) { return double(in.rgb[(std::size_t(yy) * in.width + xx) * 3 + c]); };
        const double v = (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x1)) + fy * ((1 - fx) * px(y1, x0) + fx * px(y1, x1));
        out.rgb[(std::size_t(y) * size + x) * 3 + c] = std::uint8_t(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  return out;
}

/// [N, 3, H, W] in [-1, 1] from 8-bit images of equal size.
inline Tensor<float> images_to_tensor(const std::vector<Image>& imgs) {
  if (imgs.empty()) throw IoError("no images");
  const std::size_t H = imgs[0].height, W = imgs[0].width;
  Tensor<float> t({imgs.size(), 3, H, W});
  for (std::size_t n = 0; n < imgs.size(); ++n) {
    if (std::size_t(imgs[n].height) != H || std::size_t(imgs[n].width) != W) throw IoError("image sizes differ");
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        for (std::size_t c = 0; c < 3; ++c)
          t.at(n, c, y, x) = imgs[n].rgb[(y * W + x) * 3 + c] / 127.5f - 1.0f;
  }
  return t;
}

/// Sample n of a [-1, 1] tensor as an 8-bit image.
inline Image tensor_to_image(const Tensor<float>& t, std::size_t n) {
  Image img;
  img.height = int(t.dim(2));
  img.width = int(t.dim(3));
  img.rgb.resize(std::size_t(img.width) * img.height * 3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp((t.at(n, std::size_t(c), std::size_t(y), std::size_t(x)) + 1.0f) * 127.5f, 0.0f, 255.0f);
        img.rgb[(std::size_t(y) * img.width + x) * 3 + c] = std::uint8_t(std::lround(v));
      }
  return img;
}

/// Rows of sample tiles separated by a 1-pixel gap; each row is one tensor.
inline Image image_grid(const std::vector<Tensor<float>>& rows, std::size_t per_row) {
  if (rows.empty()) throw IoError("image grid: no rows");
  const int h = int(rows[0].dim(2)), w = int(rows[0].dim(3));
  Image g;
  g.width = int(per_row) * (w + 1) + 1;
  g.height = int(rows.size()) * (h + 1) + 1;
  g.rgb.assign(std::size_t(g.width) * g.height * 3, 255);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t k = 0; k < std::min(per_row, rows[r].dim(0)); ++k) {
      const Image tile = tensor_to_image(rows[r], k);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const int gy = int(r) * (h + 1) + 1 + y, gx = int(k) * (w + 1) + 1 + x;
          std::memcpy(&g.rgb[(std::size_t(gy) * g.width + gx) * 3], &tile.rgb[(std::size_t(y) * w + x) * 3], 3);
        }
    }
  return g;
}

struct IngestedFolder {
  Tensor<float> images;
  std::string manifest_json;  // file name -> sha256 of the original bytes
};

/// Loads every supported raster in `dir` (sorted by name), resized and
/// center-cropped to size x size.
inline IngestedFolder ingest_folder(const std::filesystem::path& dir, int size) {
  if (!std::filesystem::is_directory(dir)) throw IoError("'" + dir.string() + "' is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && is_supported_image(e.path())) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("'" + dir.string() + "' contains no supported images");
  std::vector<Image> imgs;
  nlohmann::ordered_json manifest;
  manifest["size"] = size;
  manifest["images"] = nlohmann::ordered_json::array();
  for (const auto& f : files) {
    const auto bytes = read_file_bytes(f);
    imgs.push_back(resize_center_crop(read_image(f), size));
    manifest["images"].push_back({{"file", f.filename().string()}, {"sha256", sha256_hex(bytes.data(), bytes.size())}});
  }
  return {images_to_tensor(imgs), manifest.dump(2)};
}

}  // namespace gslim
