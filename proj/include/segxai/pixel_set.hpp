#pragma once
// Exact sets of (row, col) pixel coordinates within a fixed H x W frame.
// Stored as sorted unique linear indices so union / intersection /
// complement are exact merges.

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "segxai/common.hpp"

namespace segxai {

class PixelSet {
 public:
  PixelSet(std::size_t height, std::size_t width)
      : height_(height), width_(width) {}

  static PixelSet full(std::size_t height, std::size_t width) {
    PixelSet s(height, width);
    s.idx_.resize(height * width);
    for (std::size_t i = 0; i < s.idx_.size(); ++i) s.idx_[i] = i;
    return s;
  }

  static PixelSet from_pairs(
      std::size_t height, std::size_t width,
      const std::vector<std::pair<std::size_t, std::size_t>>& pts) {
    PixelSet s(height, width);
    s.idx_.reserve(pts.size());
    for (const auto& [r, c] : pts) {
      if (r >= height || c >= width)
        throw Error("pixel set: (" + std::to_string(r) + ", " +
                    std::to_string(c) + ") outside " + std::to_string(height) +
                    "x" + std::to_string(width));
      s.idx_.push_back(r * width + c);
    }
    s.normalize();
    return s;
  }

  static PixelSet from_linear(std::size_t height, std::size_t width,
                              std::vector<std::size_t> linear) {
    PixelSet s(height, width);
    for (std::size_t i : linear)
      if (i >= height * width)
        throw Error("pixel set: linear index " + std::to_string(i) +
                    " outside " + std::to_string(height * width));
    s.idx_ = std::move(linear);
    s.normalize();
    return s;
  }

  // Pixels whose label equals cls in a row-major label image.
  static PixelSet from_labels(std::size_t height, std::size_t width,
                              const std::vector<int>& labels, int cls) {
    if (labels.size() != height * width)
      throw Error("pixel set: " + std::to_string(labels.size()) +
                  " labels for " + std::to_string(height * width) + " pixels");
    PixelSet s(height, width);
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == cls) s.idx_.push_back(i);
    return s;
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return idx_.size(); }
  bool empty() const { return idx_.empty(); }

  bool contains(std::size_t r, std::size_t c) const {
    if (r >= height_ || c >= width_) return false;
    return std::binary_search(idx_.begin(), idx_.end(), r * width_ + c);
  }

  const std::vector<std::size_t>& linear() const { return idx_; }

  std::vector<std::pair<std::size_t, std::size_t>> pairs() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    out.reserve(idx_.size());
    for (std::size_t i : idx_) out.emplace_back(i / width_, i % width_);
    return out;
  }

  PixelSet set_union(const PixelSet& o) const {
    require_same_bounds(o, "union");
    PixelSet s(height_, width_);
    std::set_union(idx_.begin(), idx_.end(), o.idx_.begin(), o.idx_.end(),
                   std::back_inserter(s.idx_));
    return s;
  }

  PixelSet intersect(const PixelSet& o) const {
    require_same_bounds(o, "intersection");
    PixelSet s(height_, width_);
    std::set_intersection(idx_.begin(), idx_.end(), o.idx_.begin(),
                          o.idx_.end(), std::back_inserter(s.idx_));
    return s;
  }

  // Complement within the full frame.
  PixelSet complement() const {
    PixelSet s(height_, width_);
    s.idx_.reserve(height_ * width_ - idx_.size());
    std::size_t j = 0;
    for (std::size_t i = 0; i < height_ * width_; ++i) {
      if (j < idx_.size() && idx_[j] == i) {
        ++j;
      } else {
        s.idx_.push_back(i);
      }
    }
    return s;
  }

  // Chebyshev (square structuring element) dilation by the given radius.
  PixelSet dilate(std::size_t radius) const {
    std::vector<char> hit(height_ * width_, 0);
    const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(radius);
    for (std::size_t i : idx_) {
      const std::ptrdiff_t row = static_cast<std::ptrdiff_t>(i / width_);
      const std::ptrdiff_t col = static_cast<std::ptrdiff_t>(i % width_);
      for (std::ptrdiff_t dy = -r; dy <= r; ++dy) {
        const std::ptrdiff_t y = row + dy;
        if (y < 0 || y >= static_cast<std::ptrdiff_t>(height_)) continue;
        for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
          const std::ptrdiff_t x = col + dx;
          if (x < 0 || x >= static_cast<std::ptrdiff_t>(width_)) continue;
          hit[static_cast<std::size_t>(y) * width_ +
              static_cast<std::size_t>(x)] = 1;
        }
      }
    }
    PixelSet s(height_, width_);
    for (std::size_t i = 0; i < hit.size(); ++i)
      if (hit[i]) s.idx_.push_back(i);
    return s;
  }

  bool operator==(const PixelSet& o) const {
    return height_ == o.height_ && width_ == o.width_ && idx_ == o.idx_;
  }

 private:
  void normalize() {
    std::sort(idx_.begin(), idx_.end());
    idx_.erase(std::unique(idx_.begin(), idx_.end()), idx_.end());
  }

  void require_same_bounds(const PixelSet& o, const char* op) const {
    if (height_ != o.height_ || width_ != o.width_)
      throw Error(std::string("pixel set ") + op + ": bounds " +
                  std::to_string(height_) + "x" + std::to_string(width_) +
                  " vs " + std::to_string(o.height_) + "x" +
                  std::to_string(o.width_));
  }

  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::size_t> idx_;
};

}  // namespace segxai
