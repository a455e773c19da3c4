#pragma once

// Grayscale image IO and the page/word preprocessing pipeline.
// Pixels are ink-positive: background 0, ink toward 1, all within [0,1].

#include <png.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "grn/pool.hpp"
#include "grn/rng.hpp"
#include "grn/tensor.hpp"

namespace grn {

struct GrayImage {
  int h = 0;
  int w = 0;
  std::vector<double> px;  // row-major

  GrayImage() = default;
  GrayImage(int h_, int w_, double v = 0.0) : h(h_), w(w_) {
    if (h_ <= 0 || w_ <= 0) fail("GrayImage: dimensions must be positive");
    px.assign(static_cast<std::size_t>(h_) * w_, v);
  }
  double& at(int r, int c) { return px[static_cast<std::size_t>(r) * w + c]; }
  double at(int r, int c) const { return px[static_cast<std::size_t>(r) * w + c]; }
};

namespace detail {

struct FileCloser {
  std::FILE* f;
  ~FileCloser() {
    if (f) std::fclose(f);
  }
};

inline GrayImage from_bytes(const std::vector<unsigned char>& raw, int h, int w) {
  GrayImage img(h, w);
  for (std::size_t i = 0; i < raw.size(); ++i) img.px[i] = 1.0 - raw[i] / 255.0;
  return img;
}

inline GrayImage load_png(std::FILE* f, const std::string& path) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail_data("png: out of memory reading " + path);
  }
  std::vector<unsigned char> raw;
  int h = 0, w = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail_data("png: corrupt file " + path);
  }
  png_init_io(png, f);
  png_read_info(png, info);
  w = static_cast<int>(png_get_image_width(png, info));
  h = static_cast<int>(png_get_image_height(png, info));
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (depth != 8 || color != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail_data("png: only 8-bit grayscale is supported: " + path);
  }
  raw.resize(static_cast<std::size_t>(h) * w);
  std::vector<png_bytep> rows(h);
  for (int r = 0; r < h; ++r) rows[r] = raw.data() + static_cast<std::size_t>(r) * w;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return from_bytes(raw, h, w);
}

inline int pgm_token(std::FILE* f, const std::string& path) {
  int c = std::fgetc(f);
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = std::fgetc(f);
    } else if (std::isspace(c)) {
      c = std::fgetc(f);
    } else {
      break;
    }
  }
  if (c == EOF || !std::isdigit(c)) fail_data("pgm: malformed header in " + path);
  int v = 0;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    c = std::fgetc(f);
  }
  return v;
}

inline GrayImage load_pgm(std::FILE* f, const std::string& path) {
  if (std::fgetc(f) != 'P' || std::fgetc(f) != '5') fail_data("pgm: not a P5 file: " + path);
  const int w = pgm_token(f, path);
  const int h = pgm_token(f, path);
  const int maxval = pgm_token(f, path);
  if (w <= 0 || h <= 0) fail_data("pgm: bad dimensions in " + path);
  if (maxval != 255) fail_data("pgm: only 8-bit (maxval 255) is supported: " + path);
  std::vector<unsigned char> raw(static_cast<std::size_t>(h) * w);
  if (std::fread(raw.data(), 1, raw.size(), f) != raw.size())
    fail_data("pgm: truncated pixel data in " + path);
  return from_bytes(raw, h, w);
}

inline unsigned char quantize(double v) {
  const double raw = std::lround((1.0 - std::clamp(v, 0.0, 1.0)) * 255.0);
  return static_cast<unsigned char>(raw);
}

}  // namespace detail

inline GrayImage load_gray(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) fail_data("cannot open image: " + path);
  detail::FileCloser guard{f};
  unsigned char sig[2] = {0, 0};
  if (std::fread(sig, 1, 2, f) != 2) fail_data("image too short: " + path);
  std::rewind(f);
  if (sig[0] == 0x89 && sig[1] == 'P') return detail::load_png(f, path);
  if (sig[0] == 'P' && sig[1] == '5') return detail::load_pgm(f, path);
  fail_data("unsupported image format (need 8-bit gray PNG or P5 PGM): " + path);
}

inline void save_gray(const GrayImage& img, const std::string& path) {
  std::vector<unsigned char> raw(img.px.size());
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = detail::quantize(img.px[i]);

  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) fail_data("cannot write image: " + path);
  detail::FileCloser guard{f};

  if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".pgm") == 0) {
    std::fprintf(f, "P5\n%d %d\n255\n", img.w, img.h);
    if (std::fwrite(raw.data(), 1, raw.size(), f) != raw.size())
      fail_data("short write: " + path);
    return;
  }

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    fail_data("png: out of memory writing " + path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail_data("png: write failure: " + path);
  }
  png_init_io(png, f);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int r = 0; r < img.h; ++r)
    png_write_row(png, raw.data() + static_cast<std::size_t>(r) * img.w);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// smallest bounding box containing every pixel >= tau
inline GrayImage crop_margins(const GrayImage& img, double tau = 0.05) {
  int r0 = img.h, r1 = -1, c0 = img.w, c1 = -1;
  for (int r = 0; r < img.h; ++r)
    for (int c = 0; c < img.w; ++c)
      if (img.at(r, c) >= tau) {
        r0 = std::min(r0, r);
        r1 = std::max(r1, r);
        c0 = std::min(c0, c);
        c1 = std::max(c1, c);
      }
  if (r1 < 0) fail_data("crop_margins: image is blank below threshold");
  GrayImage out(r1 - r0 + 1, c1 - c0 + 1);
  for (int r = 0; r < out.h; ++r)
    for (int c = 0; c < out.w; ++c) out.at(r, c) = img.at(r0 + r, c0 + c);
  return out;
}

// 3x3 partition into the largest square per cell, cell origins jittered by
// up to jitter_frac of the cell size and clamped inside the page
inline std::array<GrayImage, 9> split_page9(const GrayImage& img, Rng& rng,
                                            double jitter_frac = 0.1) {
  if (img.h < 3 || img.w < 3) fail_data("split_page9: page smaller than 3x3");
  int rb[4], cb[4];
  for (int k = 0; k <= 3; ++k) {
    rb[k] = static_cast<int>(static_cast<long long>(img.h) * k / 3);
    cb[k] = static_cast<int>(static_cast<long long>(img.w) * k / 3);
  }
  std::array<GrayImage, 9> out;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const int ch = rb[i + 1] - rb[i], cw = cb[j + 1] - cb[j];
      const int side = std::min(ch, cw);
      const int jr = static_cast<int>(rng.uniform() * jitter_frac * ch);
      const int jc = static_cast<int>(rng.uniform() * jitter_frac * cw);
      const int r0 = std::min(rb[i] + jr, img.h - side);
      const int c0 = std::min(cb[j] + jc, img.w - side);
      GrayImage tile(side, side);
      for (int r = 0; r < side; ++r)
        for (int c = 0; c < side; ++c) tile.at(r, c) = img.at(r0 + r, c0 + c);
      out[static_cast<std::size_t>(i) * 3 + j] = std::move(tile);
    }
  return out;
}

// pad the short dimension with background, content centered (odd remainder
// goes to the bottom/right)
inline GrayImage pad_to_square(const GrayImage& img) {
  if (img.h == img.w) return img;
  const int side = std::max(img.h, img.w);
  GrayImage out(side, side);
  const int r0 = (side - img.h) / 2, c0 = (side - img.w) / 2;
  for (int r = 0; r < img.h; ++r)
    for (int c = 0; c < img.w; ++c) out.at(r0 + r, c0 + c) = img.at(r, c);
  return out;
}

// bilinear resampling with half-pixel-center source coordinates; handles
// both down- and up-scaling
inline GrayImage resize(const GrayImage& img, int s) {
  if (s < 1) fail_data("resize: target side must be >= 1");
  GrayImage out(s, s);
  detail::bilinear_plane(img.px.data(), img.h, img.w, out.px.data(), s, s);
  for (double& v : out.px) v = std::clamp(v, 0.0, 1.0);
  return out;
}

// word pipeline: crop -> square pad -> resize
inline GrayImage prep_word(const GrayImage& img, int s, double tau = 0.05) {
  return resize(pad_to_square(crop_margins(img, tau)), s);
}

// page pipeline: crop -> 9 jittered square tiles -> resize
inline std::array<GrayImage, 9> prep_page(const GrayImage& img, int s, Rng& rng,
                                          double tau = 0.05, double jitter_frac = 0.1) {
  std::array<GrayImage, 9> tiles = split_page9(crop_margins(img, tau), rng, jitter_frac);
  for (GrayImage& t : tiles) t = resize(t, s);
  return tiles;
}

}  // namespace grn
