#pragma once
// Test-only reference implementations, kept independent of the library
// code paths they verify.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <set>
#include <utility>
#include <vector>

#include "segxai/tensor.hpp"

namespace oracle {

// Quadruple-nested-loop cross-correlation, indexing flat arrays directly.
inline segxai::Tensor conv2d_naive(const segxai::Tensor& in,
                                   const segxai::Tensor& ker,
                                   const segxai::Tensor& bias, int stride,
                                   int pad) {
  const int C = static_cast<int>(in.extent(0));
  const int H = static_cast<int>(in.extent(1));
  const int W = static_cast<int>(in.extent(2));
  const int K = static_cast<int>(ker.extent(0));
  const int kh = static_cast<int>(ker.extent(2));
  const int kw = static_cast<int>(ker.extent(3));
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  segxai::Tensor out({static_cast<std::size_t>(K), static_cast<std::size_t>(Ho),
                      static_cast<std::size_t>(Wo)});
  for (int k = 0; k < K; ++k)
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) {
        double acc = bias[static_cast<std::size_t>(k)];
        for (int c = 0; c < C; ++c)
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
              const int y = oy * stride + ky - pad;
              const int x = ox * stride + kx - pad;
              if (y < 0 || y >= H || x < 0 || x >= W) continue;
              acc += in[static_cast<std::size_t>((c * H + y) * W + x)] *
                     ker[static_cast<std::size_t>(
                         ((k * C + c) * kh + ky) * kw + kx)];
            }
        out[static_cast<std::size_t>((k * Ho + oy) * Wo + ox)] = acc;
      }
  return out;
}

// Cyclic Jacobi eigen-decomposition of a small symmetric matrix; returns
// eigenvalues (descending) and the matching eigenvectors as columns.
struct JacobiResult {
  std::vector<double> values;
  std::vector<std::vector<double>> vectors;  // vectors[i] is eigenvector i
};

inline JacobiResult jacobi_eigen(std::vector<double> a, std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    if (off < 1e-24) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t i = 0; i < n; ++i) {
          const double aip = a[i * n + p], aiq = a[i * n + q];
          a[i * n + p] = c * aip - s * aiq;
          a[i * n + q] = s * aip + c * aiq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double api = a[p * n + i], aqi = a[q * n + i];
          a[p * n + i] = c * api - s * aqi;
          a[q * n + i] = s * api + c * aqi;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vip = v[i * n + p], viq = v[i * n + q];
          v[i * n + p] = c * vip - s * viq;
          v[i * n + q] = s * vip + c * viq;
        }
      }
  }
  JacobiResult r;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return a[x * n + x] > a[y * n + y];
  });
  for (std::size_t i : order) {
    r.values.push_back(a[i * n + i]);
    std::vector<double> vec(n);
    for (std::size_t j = 0; j < n; ++j) vec[j] = v[j * n + i];
    r.vectors.push_back(std::move(vec));
  }
  return r;
}

using Coord = std::pair<std::size_t, std::size_t>;

inline std::set<Coord> to_set(
    const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  return std::set<Coord>(pairs.begin(), pairs.end());
}

}  // namespace oracle
