#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "rnr/common.hpp"

namespace rnr {

// 8-bit RGB raster, row-major, interleaved.
struct RgbImage {
  int h = 0, w = 0;
  std::vector<std::uint8_t> pixels;  // 3*h*w

  std::uint8_t* at(int y, int x) { return pixels.data() + 3 * (static_cast<std::size_t>(y) * w + x); }
  const std::uint8_t* at(int y, int x) const {
    return pixels.data() + 3 * (static_cast<std::size_t>(y) * w + x);
  }
};

// 8-bit grayscale raster (masks use 0/255).
struct GrayImage {
  int h = 0, w = 0;
  std::vector<std::uint8_t> pixels;  // h*w

  std::uint8_t& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * w + x]; }
  std::uint8_t at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * w + x]; }
};

// Binary PPM (P6) / PGM (P5), maxval 255, fixed single-space header so the
// files are byte-reproducible.

inline void write_ppm(const std::string& path, const RgbImage& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << "P6\n" << img.w << " " << img.h << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (!f) throw IoError("short write to " + path);
}

inline void write_pgm(const std::string& path, const GrayImage& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << "P5\n" << img.w << " " << img.h << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (!f) throw IoError("short write to " + path);
}

namespace detail {
inline int pnm_token(std::istream& is) {
  // skips whitespace and '#' comments
  int c = is.get();
  while (c == '#' || std::isspace(c)) {
    if (c == '#')
      while (c != '\n' && c != EOF) c = is.get();
    c = is.get();
  }
  int v = 0;
  bool any = false;
  while (std::isdigit(c)) {
    v = v * 10 + (c - '0');
    any = true;
    c = is.get();
  }
  if (!any) throw FormatError("malformed PNM header");
  return v;
}
}  // namespace detail

inline RgbImage read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  char m0 = 0, m1 = 0;
  f.get(m0);
  f.get(m1);
  if (m0 != 'P' || m1 != '6') throw FormatError(path + ": not a binary PPM (P6)");
  RgbImage img;
  img.w = detail::pnm_token(f);
  img.h = detail::pnm_token(f);
  const int maxval = detail::pnm_token(f);
  if (maxval != 255) throw FormatError(path + ": unsupported maxval");
  img.pixels.resize(3 * static_cast<std::size_t>(img.h) * img.w);
  f.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (f.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw FormatError(path + ": truncated pixel data");
  return img;
}

inline GrayImage read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  char m0 = 0, m1 = 0;
  f.get(m0);
  f.get(m1);
  if (m0 != 'P' || m1 != '5') throw FormatError(path + ": not a binary PGM (P5)");
  GrayImage img;
  img.w = detail::pnm_token(f);
  img.h = detail::pnm_token(f);
  const int maxval = detail::pnm_token(f);
  if (maxval != 255) throw FormatError(path + ": unsupported maxval");
  img.pixels.resize(static_cast<std::size_t>(img.h) * img.w);
  f.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (f.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw FormatError(path + ": truncated pixel data");
  return img;
}

}  // namespace rnr
