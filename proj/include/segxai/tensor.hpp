#pragma once
// Dense n-dimensional double tensor plus the forward math used by the
// segmentation network and the saliency methods: conv2d, channel softmax,
// bilinear upsampling and pointwise ops. Every public operation verifies
// its output is finite. All reductions accumulate sequentially in
// index-ascending order so identical inputs give bit-identical outputs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "segxai/common.hpp"

namespace segxai {

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(count(shape_), 0.0) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> values)
      : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != count(shape_)) {
      throw Error("tensor: " + std::to_string(data_.size()) +
                  " values do not fill shape of " +
                  std::to_string(count(shape_)) + " elements");
    }
    ensure_finite("tensor construction");
  }

  static Tensor full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t extent(std::size_t dim) const { return shape_.at(dim); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::vector<double>& values() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // rank-2 (rows x cols)
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const {
    return data_[r * shape_[1] + c];
  }

  // rank-3 (channels x height x width)
  double& at(std::size_t ch, std::size_t y, std::size_t x) {
    return data_[(ch * shape_[1] + y) * shape_[2] + x];
  }
  double at(std::size_t ch, std::size_t y, std::size_t x) const {
    return data_[(ch * shape_[1] + y) * shape_[2] + x];
  }

  // rank-4 (kernels x channels x kh x kw)
  double& at(std::size_t k, std::size_t c, std::size_t y, std::size_t x) {
    return data_[((k * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  double at(std::size_t k, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[((k * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  void ensure_finite(const std::string& op) const {
    for (std::size_t i = 0; i < data_.size(); ++i) {
      if (!std::isfinite(data_[i])) {
        throw Error(op + ": non-finite value at flat index " +
                    std::to_string(i));
      }
    }
  }

  std::string shape_str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ", ";
      s += std::to_string(shape_[i]);
    }
    return s + ")";
  }

 private:
  static std::size_t count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return shape.empty() ? 0 : n;
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b,
                               const char* op) {
  if (a.shape() == b.shape()) return;
  if (a.rank() != b.rank()) {
    throw Error(std::string(op) + ": rank mismatch " +
                std::to_string(a.rank()) + " vs " + std::to_string(b.rank()));
  }
  for (std::size_t d = 0; d < a.rank(); ++d) {
    if (a.extent(d) != b.extent(d)) {
      throw Error(std::string(op) + ": shape mismatch at dim " +
                  std::to_string(d) + " (" + std::to_string(a.extent(d)) +
                  " vs " + std::to_string(b.extent(d)) + ")");
    }
  }
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  out.ensure_finite("add");
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  out.ensure_finite("mul");
  return out;
}

inline Tensor relu(const Tensor& a) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
  return out;
}

inline Tensor scale(const Tensor& a, double s) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
  out.ensure_finite("scale");
  return out;
}

// Discrete cross-correlation plus bias. input: C x H x W, kernels:
// K x C x kh x kw, bias: K. Output K x H' x W' with
// H' = (H + 2*padding - kh) / stride + 1 (floor), same for W'.
inline Tensor conv2d(const Tensor& input, const Tensor& kernels,
                     const Tensor& bias, int stride, int padding) {
  if (input.rank() != 3)
    throw Error("conv2d: input rank " + std::to_string(input.rank()) +
                " != 3");
  if (kernels.rank() != 4)
    throw Error("conv2d: kernel rank " + std::to_string(kernels.rank()) +
                " != 4");
  if (bias.rank() != 1)
    throw Error("conv2d: bias rank " + std::to_string(bias.rank()) + " != 1");
  if (stride < 1) throw Error("conv2d: stride must be >= 1");
  if (padding < 0) throw Error("conv2d: padding must be >= 0");

  const std::size_t C = input.extent(0), H = input.extent(1),
                    W = input.extent(2);
  const std::size_t K = kernels.extent(0), kh = kernels.extent(2),
                    kw = kernels.extent(3);
  if (kernels.extent(1) != C)
    throw Error("conv2d: kernel input channels " +
                std::to_string(kernels.extent(1)) + " != input channels " +
                std::to_string(C));
  if (bias.extent(0) != K)
    throw Error("conv2d: bias length " + std::to_string(bias.extent(0)) +
                " != kernel count " + std::to_string(K));
  const std::size_t pad = static_cast<std::size_t>(padding);
  if (kh > H + 2 * pad)
    throw Error("conv2d: kernel height " + std::to_string(kh) +
                " exceeds padded input height " + std::to_string(H + 2 * pad));
  if (kw > W + 2 * pad)
    throw Error("conv2d: kernel width " + std::to_string(kw) +
                " exceeds padded input width " + std::to_string(W + 2 * pad));

  const std::size_t Ho = (H + 2 * pad - kh) / stride + 1;
  const std::size_t Wo = (W + 2 * pad - kw) / stride + 1;
  Tensor out({K, Ho, Wo});
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        double acc = bias[k];
        for (std::size_t c = 0; c < C; ++c) {
          for (std::size_t ky = 0; ky < kh; ++ky) {
            const std::ptrdiff_t y =
                static_cast<std::ptrdiff_t>(oy * stride + ky) -
                static_cast<std::ptrdiff_t>(pad);
            if (y < 0 || y >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const std::ptrdiff_t x =
                  static_cast<std::ptrdiff_t>(ox * stride + kx) -
                  static_cast<std::ptrdiff_t>(pad);
              if (x < 0 || x >= static_cast<std::ptrdiff_t>(W)) continue;
              acc += input.at(c, static_cast<std::size_t>(y),
                              static_cast<std::size_t>(x)) *
                     kernels.at(k, c, ky, kx);
            }
          }
        }
        out.at(k, oy, ox) = acc;
      }
    }
  }
  out.ensure_finite("conv2d");
  return out;
}

// Per-pixel softmax over the leading (class) dimension of an L x H x W
// field. Stable through max subtraction; probabilities per pixel sum to 1.
inline Tensor softmax_channels(const Tensor& logits) {
  if (logits.rank() != 3)
    throw Error("softmax_channels: rank " + std::to_string(logits.rank()) +
                " != 3");
  const std::size_t L = logits.extent(0), H = logits.extent(1),
                    W = logits.extent(2);
  if (L < 2) throw Error("softmax_channels: need at least 2 classes");
  Tensor out(logits.shape());
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      double mx = logits.at(0, y, x);
      for (std::size_t l = 1; l < L; ++l) mx = std::max(mx, logits.at(l, y, x));
      double denom = 0.0;
      for (std::size_t l = 0; l < L; ++l) {
        const double e = std::exp(logits.at(l, y, x) - mx);
        out.at(l, y, x) = e;
        denom += e;
      }
      for (std::size_t l = 0; l < L; ++l) out.at(l, y, x) /= denom;
    }
  }
  out.ensure_finite("softmax_channels");
  return out;
}

// Corner-aligned bilinear interpolation of a rank-2 map up to (H, W).
inline Tensor bilinear_upsample(const Tensor& map, std::size_t H,
                                std::size_t W) {
  if (map.rank() != 2)
    throw Error("bilinear_upsample: rank " + std::to_string(map.rank()) +
                " != 2");
  const std::size_t h = map.extent(0), w = map.extent(1);
  if (h < 1 || w < 1) throw Error("bilinear_upsample: empty source map");
  if (H < h || W < w)
    throw Error("bilinear_upsample: target " + std::to_string(H) + "x" +
                std::to_string(W) + " smaller than source " +
                std::to_string(h) + "x" + std::to_string(w));
  Tensor out({H, W});
  for (std::size_t y = 0; y < H; ++y) {
    const double sy =
        (H > 1 && h > 1)
            ? static_cast<double>(y) * (h - 1) / static_cast<double>(H - 1)
            : 0.0;
    const std::size_t y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double ty = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < W; ++x) {
      const double sx =
          (W > 1 && w > 1)
              ? static_cast<double>(x) * (w - 1) / static_cast<double>(W - 1)
              : 0.0;
      const std::size_t x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double tx = sx - static_cast<double>(x0);
      const double top = map.at(y0, x0) + tx * (map.at(y0, x1) - map.at(y0, x0));
      const double bot = map.at(y1, x0) + tx * (map.at(y1, x1) - map.at(y1, x0));
      out.at(y, x) = top + ty * (bot - top);
    }
  }
  out.ensure_finite("bilinear_upsample");
  return out;
}

inline Tensor channel(const Tensor& t, std::size_t k) {
  if (t.rank() != 3) throw Error("channel: rank != 3");
  if (k >= t.extent(0))
    throw Error("channel: index " + std::to_string(k) + " out of " +
                std::to_string(t.extent(0)));
  const std::size_t H = t.extent(1), W = t.extent(2);
  Tensor out({H, W});
  const double* src = t.data() + k * H * W;
  std::copy(src, src + H * W, out.data());
  return out;
}

inline double sum_all(const Tensor& t) {
  double acc = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) acc += t[i];
  return acc;
}

inline double min_value(const Tensor& t) {
  double m = t[0];
  for (std::size_t i = 1; i < t.size(); ++i) m = std::min(m, t[i]);
  return m;
}

inline double max_value(const Tensor& t) {
  double m = t[0];
  for (std::size_t i = 1; i < t.size(); ++i) m = std::max(m, t[i]);
  return m;
}

}  // namespace segxai
