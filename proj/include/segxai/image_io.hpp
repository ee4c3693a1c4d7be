#pragma once
// Binary PPM (P6) and PGM (P5) at 8 bits, plus saliency overlay rendering.
// Real values quantize as round(255 * clamp(v, 0, 1)) with round-half-up;
// write -> read reproduces the quantized values exactly.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "segxai/common.hpp"
#include "segxai/tensor.hpp"

namespace segxai {

namespace detail {

inline int pnm_getc(std::istream& is, const std::string& path) {
  int ch = is.get();
  if (ch == EOF) throw Error("truncated header in " + path);
  if (ch == '#') {
    while (ch != '\n') {
      ch = is.get();
      if (ch == EOF) throw Error("truncated header comment in " + path);
    }
  }
  return ch;
}

inline std::size_t pnm_uint(std::istream& is, const std::string& path) {
  int ch = pnm_getc(is, path);
  while (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r')
    ch = pnm_getc(is, path);
  if (ch < '0' || ch > '9') throw Error("malformed header field in " + path);
  std::size_t v = 0;
  while (ch >= '0' && ch <= '9') {
    v = v * 10 + static_cast<std::size_t>(ch - '0');
    ch = is.get();
    if (ch == EOF) throw Error("truncated header in " + path);
  }
  return v;
}

inline std::vector<unsigned char> pnm_read_body(std::istream& is,
                                                const std::string& path,
                                                const char* magic,
                                                std::size_t channels,
                                                std::size_t& height,
                                                std::size_t& width) {
  char m[2];
  if (!is.read(m, 2)) throw Error("truncated magic in " + path);
  if (m[0] != magic[0] || m[1] != magic[1])
    throw Error(std::string("bad magic '") + m[0] + m[1] + "' in " + path +
                " (expected " + magic + ")");
  width = pnm_uint(is, path);
  height = pnm_uint(is, path);
  const std::size_t maxval = pnm_uint(is, path);
  if (maxval != 255)
    throw Error("unsupported max value " + std::to_string(maxval) + " in " +
                path + " (only 8-bit supported)");
  // pnm_uint consumed the single whitespace byte after maxval already.
  std::vector<unsigned char> bytes(width * height * channels);
  if (!is.read(reinterpret_cast<char*>(bytes.data()),
               static_cast<std::streamsize>(bytes.size())))
    throw Error("truncated pixel data in " + path);
  return bytes;
}

inline unsigned char quantize8(double v) {
  const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return static_cast<unsigned char>(std::lround(255.0 * c));
}

}  // namespace detail

// 3 x H x W in [0,1]
inline Tensor read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open for reading: " + path);
  std::size_t h = 0, w = 0;
  auto bytes = detail::pnm_read_body(is, path, "P6", 3, h, w);
  Tensor img({3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        img.at(c, y, x) = bytes[(y * w + x) * 3 + c] / 255.0;
  return img;
}

inline void write_ppm(const std::string& path, const Tensor& image) {
  if (image.rank() != 3 || image.extent(0) != 3)
    throw Error("write_ppm: expected 3 x H x W image, got " +
                image.shape_str());
  const std::size_t h = image.extent(1), w = image.extent(2);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open for writing: " + path);
  os << "P6\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> bytes(h * w * 3);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        bytes[(y * w + x) * 3 + c] = detail::quantize8(image.at(c, y, x));
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error("write failed: " + path);
}

// H x W in [0,1]
inline Tensor read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open for reading: " + path);
  std::size_t h = 0, w = 0;
  auto bytes = detail::pnm_read_body(is, path, "P5", 1, h, w);
  Tensor map({h, w});
  for (std::size_t i = 0; i < bytes.size(); ++i) map[i] = bytes[i] / 255.0;
  return map;
}

inline void write_pgm(const std::string& path, const Tensor& map) {
  if (map.rank() != 2)
    throw Error("write_pgm: expected H x W map, got " + map.shape_str());
  const std::size_t h = map.extent(0), w = map.extent(1);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open for writing: " + path);
  os << "P5\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> bytes(h * w);
  for (std::size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = detail::quantize8(map[i]);
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error("write failed: " + path);
}

// Class labels <-> grayscale. Class k of L maps to k/(L-1); exact through
// 8-bit quantization for any L <= 128.
inline Tensor mask_to_gray(const std::vector<int>& labels, std::size_t h,
                           std::size_t w, std::size_t num_classes) {
  if (labels.size() != h * w)
    throw Error("mask_to_gray: " + std::to_string(labels.size()) +
                " labels for " + std::to_string(h * w) + " pixels");
  Tensor map({h, w});
  for (std::size_t i = 0; i < labels.size(); ++i)
    map[i] = static_cast<double>(labels[i]) /
             static_cast<double>(num_classes - 1);
  return map;
}

inline std::vector<int> gray_to_mask(const Tensor& map,
                                     std::size_t num_classes) {
  std::vector<int> labels(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) {
    const long cls = std::lround(map[i] * static_cast<double>(num_classes - 1));
    if (cls < 0 || cls >= static_cast<long>(num_classes))
      throw Error("gray_to_mask: value " + std::to_string(map[i]) +
                  " outside class range");
    labels[i] = static_cast<int>(cls);
  }
  return labels;
}

// 3-stop linear ramp blue -> green -> red with stops at 0, 0.5, 1.
inline std::array<double, 3> saliency_color(double v) {
  const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  if (c <= 0.5) {
    const double t = c * 2.0;
    return {0.0, t, 1.0 - t};
  }
  const double t = (c - 0.5) * 2.0;
  return {t, 1.0 - t, 0.0};
}

// Per pixel: (1 - alpha*v) * image + alpha*v * colormap(v).
inline Tensor render_overlay(const Tensor& image, const Tensor& saliency,
                             double alpha) {
  if (image.rank() != 3 || image.extent(0) != 3)
    throw Error("render_overlay: expected 3 x H x W image, got " +
                image.shape_str());
  if (saliency.rank() != 2 || saliency.extent(0) != image.extent(1) ||
      saliency.extent(1) != image.extent(2))
    throw Error("render_overlay: saliency " + saliency.shape_str() +
                " does not match image " + image.shape_str());
  if (alpha < 0.0 || alpha > 1.0)
    throw Error("render_overlay: alpha " + std::to_string(alpha) +
                " outside [0,1]");
  const std::size_t h = image.extent(1), w = image.extent(2);
  Tensor out(image.shape());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double v = saliency.at(y, x);
      const auto color = saliency_color(v);
      const double blend = alpha * v;
      for (std::size_t c = 0; c < 3; ++c)
        out.at(c, y, x) = (1.0 - blend) * image.at(c, y, x) + blend * color[c];
    }
  return out;
}

}  // namespace segxai
