#include "common/binary_array.hpp"

#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "common/error.hpp"

namespace lld {
namespace {

template <typename T>
void put_le(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  is.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!is) fail(Errc::io, "truncated array header");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return static_cast<T>(v);
}

}  // namespace

std::uint64_t NdArray::numel() const {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

void write_array(std::ostream& os, const NdArray& a, DType dtype) {
  if (a.numel() != a.data.size()) fail(Errc::shape, "array payload does not match dims");
  os.write("LLDK", 4);
  put_le<std::uint16_t>(os, kArrayVersion);
  put_le<std::uint16_t>(os, static_cast<std::uint16_t>(dtype));
  put_le<std::uint16_t>(os, static_cast<std::uint16_t>(a.dims.size()));
  for (auto d : a.dims) put_le<std::uint64_t>(os, d);
  for (double v : a.data) {
    switch (dtype) {
      case DType::f64: {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        put_le<std::uint64_t>(os, bits);
        break;
      }
      case DType::f32: {
        float f = static_cast<float>(v);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_le<std::uint32_t>(os, bits);
        break;
      }
      case DType::u8:
        put_le<std::uint8_t>(os, static_cast<std::uint8_t>(v));
        break;
    }
  }
  if (!os) fail(Errc::io, "failed writing array");
}

NdArray read_array(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "LLDK", 4) != 0) fail(Errc::io, "bad array magic");
  auto version = get_le<std::uint16_t>(is);
  if (version != kArrayVersion) fail(Errc::io, "unsupported array version " + std::to_string(version));
  auto dtype = static_cast<DType>(get_le<std::uint16_t>(is));
  auto rank = get_le<std::uint16_t>(is);
  NdArray a;
  for (std::uint16_t i = 0; i < rank; ++i) a.dims.push_back(get_le<std::uint64_t>(is));
  a.data.resize(a.numel());
  for (auto& v : a.data) {
    switch (dtype) {
      case DType::f64: {
        auto bits = get_le<std::uint64_t>(is);
        std::memcpy(&v, &bits, 8);
        break;
      }
      case DType::f32: {
        auto bits = get_le<std::uint32_t>(is);
        float f;
        std::memcpy(&f, &bits, 4);
        v = f;
        break;
      }
      case DType::u8:
        v = get_le<std::uint8_t>(is);
        break;
      default:
        fail(Errc::io, "unknown dtype code");
    }
  }
  return a;
}

void save_array(const std::string& path, const NdArray& a, DType dtype) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(Errc::io, "cannot open " + path + " for writing");
  write_array(os, a, dtype);
}

NdArray load_array(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(Errc::io, "cannot open " + path);
  return read_array(is);
}

}  // namespace lld
