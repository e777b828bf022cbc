#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "glowflow/errors.hpp"
#include "glowflow/tensor.hpp"

// GTB tensor file: magic "GTB1", u8 dtype tag (0=f32, 1=f64), u8 rank,
// rank x u32 dims, little-endian payload. Used for fixtures, datasets and
// checkpoint blobs.
namespace glow {

static_assert(std::endian::native == std::endian::little,
              "GTB I/O writes native payloads and assumes little-endian");

struct GtbBlob {
  std::uint8_t dtype = 0;  // 0 = f32, 1 = f64
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> payload;

  std::size_t element_count() const {
    std::size_t n = 1;
    for (const std::uint32_t d : dims) n *= d;
    return n;
  }
  std::size_t element_size() const { return dtype == 0 ? 4 : 8; }
};

void write_gtb(std::ostream& out, const GtbBlob& blob);
void write_gtb_file(const std::string& path, const GtbBlob& blob);
GtbBlob read_gtb(std::istream& in, const std::string& context);
GtbBlob read_gtb_file(const std::string& path);

// Exact serialized byte size of a blob (header + payload).
std::size_t gtb_byte_size(const GtbBlob& blob);

namespace detail {
template <typename T>
constexpr std::uint8_t dtype_tag() {
  return sizeof(T) == 4 ? 0 : 1;
}
}  // namespace detail

template <typename T>
GtbBlob make_blob(const std::vector<T>& data,
                  const std::vector<std::uint32_t>& dims) {
  GtbBlob b;
  b.dtype = detail::dtype_tag<T>();
  b.dims = dims;
  std::size_t n = 1;
  for (const std::uint32_t d : dims) n *= d;
  if (n != data.size()) throw ShapeError("make_blob: dims do not match data");
  b.payload.resize(data.size() * sizeof(T));
  std::memcpy(b.payload.data(), data.data(), b.payload.size());
  return b;
}

template <typename T>
GtbBlob make_blob(const Tensor4<T>& t) {
  return make_blob(t.flat(),
                   {static_cast<std::uint32_t>(t.n()),
                    static_cast<std::uint32_t>(t.h()),
                    static_cast<std::uint32_t>(t.w()),
                    static_cast<std::uint32_t>(t.c())});
}

// Extracts the payload as T, converting between f32/f64 when needed.
template <typename T>
std::vector<T> blob_values(const GtbBlob& b) {
  const std::size_t n = b.element_count();
  if (b.payload.size() != n * b.element_size()) {
    throw DataError("GTB payload size does not match dims");
  }
  std::vector<T> out(n);
  if (b.dtype == detail::dtype_tag<T>()) {
    std::memcpy(out.data(), b.payload.data(), b.payload.size());
  } else if (b.dtype == 0) {
    std::vector<float> tmp(n);
    std::memcpy(tmp.data(), b.payload.data(), b.payload.size());
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<T>(tmp[i]);
  } else {
    std::vector<double> tmp(n);
    std::memcpy(tmp.data(), b.payload.data(), b.payload.size());
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<T>(tmp[i]);
  }
  return out;
}

template <typename T>
Tensor4<T> blob_tensor4(const GtbBlob& b) {
  if (b.dims.size() != 4) throw DataError("GTB blob is not rank 4");
  Tensor4<T> t(static_cast<int>(b.dims[0]), static_cast<int>(b.dims[1]),
               static_cast<int>(b.dims[2]), static_cast<int>(b.dims[3]));
  t.flat() = blob_values<T>(b);
  return t;
}

}  // namespace glow
