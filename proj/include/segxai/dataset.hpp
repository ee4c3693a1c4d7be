#pragma once
// Synthetic segmentation scenes: axis-aligned bright rectangles
// ("buildings", class 1) over seeded value-noise background (class 0).
// Images and masks are generated from the same rectangle list so they are
// pixel-aligned by construction.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "segxai/common.hpp"
#include "segxai/image_io.hpp"
#include "segxai/tensor.hpp"

namespace segxai {

struct SyntheticSceneConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t min_rects = 1;
  std::size_t max_rects = 4;
  std::size_t min_rect_size = 10;
  std::size_t max_rect_size = 24;
  double background_amplitude = 0.35;
  std::uint64_t seed = 7;
};

struct Rect {
  std::size_t row = 0, col = 0, height = 0, width = 0;
};

struct Sample {
  std::string name;
  Tensor image;             // 3 x H x W in [0,1]
  std::vector<int> labels;  // row-major H*W class ids
  std::vector<Rect> rects;  // generation metadata (empty for loaded samples)
};

struct Dataset {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t num_classes = 2;
  std::vector<Sample> samples;
};

namespace detail {

// Smooth value noise in [0,1]: a coarse lattice of uniforms, bilinearly
// interpolated per pixel.
inline Tensor value_noise(std::size_t h, std::size_t w, std::size_t cell,
                          Rng& rng) {
  const std::size_t gh = h / cell + 2, gw = w / cell + 2;
  std::vector<double> grid(gh * gw);
  for (auto& v : grid) v = rng.uniform();
  Tensor out({h, w});
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t gy = y / cell;
    const double ty = static_cast<double>(y % cell) / static_cast<double>(cell);
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t gx = x / cell;
      const double tx =
          static_cast<double>(x % cell) / static_cast<double>(cell);
      const double a = grid[gy * gw + gx];
      const double b = grid[gy * gw + gx + 1];
      const double c = grid[(gy + 1) * gw + gx];
      const double d = grid[(gy + 1) * gw + gx + 1];
      const double top = a + tx * (b - a);
      const double bot = c + tx * (d - c);
      out.at(y, x) = top + ty * (bot - top);
    }
  }
  return out;
}

}  // namespace detail

inline Dataset generate_synthetic(const SyntheticSceneConfig& cfg,
                                  std::size_t count) {
  if (cfg.height < 4 || cfg.width < 4)
    throw Error("synthetic config: image size too small");
  if (cfg.min_rects < 1 || cfg.min_rects > cfg.max_rects)
    throw Error("synthetic config: invalid rectangle count range");
  if (cfg.min_rect_size < 1 || cfg.min_rect_size > cfg.max_rect_size ||
      cfg.max_rect_size > cfg.height || cfg.max_rect_size > cfg.width)
    throw Error("synthetic config: rectangle size range does not fit image");
  if (cfg.background_amplitude < 0.0 || cfg.background_amplitude > 1.0)
    throw Error("synthetic config: background amplitude outside [0,1]");

  Rng rng(cfg.seed);
  Dataset data;
  data.height = cfg.height;
  data.width = cfg.width;
  data.num_classes = 2;
  const std::size_t total = cfg.height * cfg.width;
  for (std::size_t n = 0; n < count; ++n) {
    Sample s;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "img_%04zu", n);
    s.name = buf;

    // Redraw rectangle layouts until the foreground fraction lands in
    // [2%, 60%].
    bool accepted = false;
    for (int attempt = 0; attempt < 100 && !accepted; ++attempt) {
      s.rects.clear();
      const std::size_t n_rects = rng.uniform_int(cfg.min_rects, cfg.max_rects);
      for (std::size_t r = 0; r < n_rects; ++r) {
        Rect rect;
        rect.height = rng.uniform_int(cfg.min_rect_size, cfg.max_rect_size);
        rect.width = rng.uniform_int(cfg.min_rect_size, cfg.max_rect_size);
        rect.row = rng.uniform_int(0, cfg.height - rect.height);
        rect.col = rng.uniform_int(0, cfg.width - rect.width);
        s.rects.push_back(rect);
      }
      s.labels.assign(total, 0);
      std::size_t fg = 0;
      for (const Rect& r : s.rects)
        for (std::size_t y = r.row; y < r.row + r.height; ++y)
          for (std::size_t x = r.col; x < r.col + r.width; ++x) {
            std::size_t i = y * cfg.width + x;
            if (s.labels[i] == 0) {
              s.labels[i] = 1;
              ++fg;
            }
          }
      const double frac = static_cast<double>(fg) / static_cast<double>(total);
      accepted = frac >= 0.02 && frac <= 0.60;
    }
    if (!accepted)
      throw Error("synthetic generation: could not hit the target foreground "
                  "fraction; adjust rectangle ranges");

    s.image = Tensor({3, cfg.height, cfg.width});
    for (std::size_t c = 0; c < 3; ++c) {
      const Tensor noise = detail::value_noise(cfg.height, cfg.width, 8, rng);
      for (std::size_t y = 0; y < cfg.height; ++y)
        for (std::size_t x = 0; x < cfg.width; ++x)
          s.image.at(c, y, x) = cfg.background_amplitude * noise.at(y, x);
    }
    for (const Rect& r : s.rects) {
      double color[3];
      for (double& v : color) v = rng.uniform(0.55, 0.95);
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = r.row; y < r.row + r.height; ++y)
          for (std::size_t x = r.col; x < r.col + r.width; ++x)
            s.image.at(c, y, x) = color[c];
    }
    data.samples.push_back(std::move(s));
  }
  return data;
}

inline void save_dataset(const Dataset& data, const std::string& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const Sample& s = data.samples[i];
    write_ppm(dir + "/" + s.name + ".ppm", s.image);
    const std::string mask_name =
        "msk_" + s.name.substr(s.name.find('_') + 1) + ".pgm";
    write_pgm(dir + "/" + mask_name,
              mask_to_gray(s.labels, data.height, data.width,
                           data.num_classes));
  }
}

// Loads img_0000.ppm / msk_0000.pgm pairs by ascending index until the
// first missing image, so ordering never depends on directory iteration.
inline Dataset load_dataset(const std::string& dir,
                            std::size_t num_classes = 2) {
  Dataset data;
  data.num_classes = num_classes;
  for (std::size_t i = 0;; ++i) {
    char img[32], msk[32];
    std::snprintf(img, sizeof(img), "img_%04zu", i);
    std::snprintf(msk, sizeof(msk), "msk_%04zu.pgm", i);
    const std::string img_path = dir + "/" + std::string(img) + ".ppm";
    if (!std::filesystem::exists(img_path)) break;
    Sample s;
    s.name = img;
    s.image = read_ppm(img_path);
    s.labels = gray_to_mask(read_pgm(dir + "/" + msk), num_classes);
    if (data.samples.empty()) {
      data.height = s.image.extent(1);
      data.width = s.image.extent(2);
    } else if (s.image.extent(1) != data.height ||
               s.image.extent(2) != data.width) {
      throw Error("dataset: inconsistent image size at " + img_path);
    }
    if (s.labels.size() != data.height * data.width)
      throw Error("dataset: mask size does not match image at " + img_path);
    data.samples.push_back(std::move(s));
  }
  if (data.samples.empty())
    throw Error("dataset: no img_*.ppm files found in " + dir);
  return data;
}

// Per-channel mean over every pixel of every image; the alternative fill
// value for perturbations.
inline std::array<double, 3> dataset_channel_mean(const Dataset& data) {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  if (data.samples.empty()) return mean;
  double count = 0.0;
  for (const auto& s : data.samples) {
    const std::size_t hw = data.height * data.width;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < hw; ++i) mean[c] += s.image[c * hw + i];
    count += static_cast<double>(hw);
  }
  for (double& m : mean) m /= count;
  return mean;
}

}  // namespace segxai
