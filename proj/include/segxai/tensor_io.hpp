#pragma once
// Binary tensor container. Layout: 8-byte magic "SXTENSR\0", u32 rank,
// rank x u64 extents, then row-major IEEE-754 doubles. All integers and
// doubles little-endian. Round-trips are bit-exact.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "segxai/tensor.hpp"

namespace segxai {

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b, 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b, 8);
}

inline void put_f64(std::ostream& os, double v) {
  put_u64(os, std::bit_cast<std::uint64_t>(v));
}

inline std::uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw Error(std::string("truncated input while reading ") + what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint64_t get_u64(std::istream& is, const char* what) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw Error(std::string("truncated input while reading ") + what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline double get_f64(std::istream& is, const char* what) {
  return std::bit_cast<double>(get_u64(is, what));
}

}  // namespace detail

inline constexpr char kTensorMagic[8] = {'S', 'X', 'T', 'E', 'N', 'S', 'R', 0};

inline void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(kTensorMagic, 8);
  detail::put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d = 0; d < t.rank(); ++d)
    detail::put_u64(os, static_cast<std::uint64_t>(t.extent(d)));
  for (std::size_t i = 0; i < t.size(); ++i) detail::put_f64(os, t[i]);
  if (!os) throw Error("tensor write failed");
}

inline Tensor read_tensor(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8)) throw Error("truncated input while reading tensor magic");
  if (std::memcmp(magic, kTensorMagic, 8) != 0)
    throw Error("bad tensor magic (not an SXTENSR blob)");
  const std::uint32_t rank = detail::get_u32(is, "tensor rank");
  if (rank > 8) throw Error("tensor rank " + std::to_string(rank) + " too large");
  std::vector<std::size_t> shape(rank);
  std::size_t n = rank ? 1 : 0;
  for (std::uint32_t d = 0; d < rank; ++d) {
    shape[d] = static_cast<std::size_t>(detail::get_u64(is, "tensor extent"));
    n *= shape[d];
  }
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) data[i] = detail::get_f64(is, "tensor data");
  return Tensor(std::move(shape), std::move(data));
}

inline void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open for writing: " + path);
  write_tensor(os, t);
}

inline Tensor load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open for reading: " + path);
  return read_tensor(is);
}

}  // namespace segxai
