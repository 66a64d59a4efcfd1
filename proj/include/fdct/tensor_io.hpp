#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "fdct/tensor.hpp"

// FDT tensor file: magic "FDT1", uint32 LE rank, rank uint32 LE dims,
// row-major float32 LE payload. Round-trips bit-exactly.

namespace fdct {

namespace detail {

inline void put_u32le(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff), static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32le(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw IoError("truncated FDT file: " + path);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

}  // namespace detail

template <typename Real>
inline void save_fdt(const TensorT<Real>& t, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for write: " + path);
  os.write("FDT1", 4);
  detail::put_u32le(os, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) detail::put_u32le(os, static_cast<std::uint32_t>(d));
  for (Real v : t.values()) {
    float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    detail::put_u32le(os, bits);
  }
  if (!os) throw IoError("write failed: " + path);
}

template <typename Real = float>
inline TensorT<Real> load_fdt(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for read: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "FDT1", 4) != 0)
    throw IoError("bad FDT magic in " + path);
  const std::uint32_t rank = detail::get_u32le(is, path);
  if (rank > 16) throw IoError("implausible FDT rank in " + path);
  Shape shape(rank);
  for (auto& d : shape) d = static_cast<std::int64_t>(detail::get_u32le(is, path));
  const std::int64_t n = shape_numel(shape);
  std::vector<Real> data(static_cast<std::size_t>(n));
  for (auto& v : data) {
    const std::uint32_t bits = detail::get_u32le(is, path);
    float f;
    std::memcpy(&f, &bits, 4);
    v = static_cast<Real>(f);
  }
  char extra;
  if (is.read(&extra, 1)) throw IoError("trailing bytes in FDT file: " + path);
  return TensorT<Real>::from_data(std::move(shape), std::move(data));
}

}  // namespace fdct
