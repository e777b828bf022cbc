#include "glowflow/gtb.hpp"

#include <cstring>
#include <fstream>

namespace glow {

namespace {
constexpr char kMagic[4] = {'G', 'T', 'B', '1'};
}

std::size_t gtb_byte_size(const GtbBlob& blob) {
  return 4 + 1 + 1 + 4 * blob.dims.size() + blob.payload.size();
}

void write_gtb(std::ostream& out, const GtbBlob& blob) {
  if (blob.dims.empty() || blob.dims.size() > 8) {
    throw DataError("GTB rank must be in [1, 8]");
  }
  if (blob.payload.size() != blob.element_count() * blob.element_size()) {
    throw DataError("GTB payload size does not match dims");
  }
  out.write(kMagic, 4);
  const std::uint8_t rank = static_cast<std::uint8_t>(blob.dims.size());
  out.put(static_cast<char>(blob.dtype));
  out.put(static_cast<char>(rank));
  for (const std::uint32_t d : blob.dims) {
    out.write(reinterpret_cast<const char*>(&d), 4);
  }
  out.write(reinterpret_cast<const char*>(blob.payload.data()),
            static_cast<std::streamsize>(blob.payload.size()));
  if (!out) throw DataError("GTB write failed");
}

void write_gtb_file(const std::string& path, const GtbBlob& blob) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open for writing: " + path);
  write_gtb(f, blob);
}

GtbBlob read_gtb(std::istream& in, const std::string& context) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError("not a GTB tensor: " + context);
  }
  GtbBlob b;
  const int dtype = in.get();
  const int rank = in.get();
  if (dtype != 0 && dtype != 1) {
    throw DataError("GTB dtype tag must be 0 or 1: " + context);
  }
  if (rank < 1 || rank > 8) throw DataError("GTB rank out of range: " + context);
  b.dtype = static_cast<std::uint8_t>(dtype);
  b.dims.resize(rank);
  for (int i = 0; i < rank; ++i) {
    std::uint32_t d = 0;
    in.read(reinterpret_cast<char*>(&d), 4);
    if (d == 0) throw DataError("GTB zero dim: " + context);
    b.dims[i] = d;
  }
  b.payload.resize(b.element_count() * b.element_size());
  in.read(reinterpret_cast<char*>(b.payload.data()),
          static_cast<std::streamsize>(b.payload.size()));
  if (!in) throw DataError("truncated GTB tensor: " + context);
  return b;
}

GtbBlob read_gtb_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open: " + path);
  return read_gtb(f, path);
}

}  // namespace glow
