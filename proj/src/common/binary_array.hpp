#pragma once

// On-disk array container shared by the cache, checkpoints and sample dumps.
//
// Layout (all integers little-endian):
//   "LLDK" | u16 version | u16 dtype | u16 rank | u64 dims[rank] | payload
// Payload is row-major IEEE-754. dtype 1 = float64, 2 = float32, 3 = uint8.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace lld {

enum class DType : std::uint16_t { f64 = 1, f32 = 2, u8 = 3 };

struct NdArray {
  std::vector<std::uint64_t> dims;
  std::vector<double> data;  // row-major; u8 / f32 payloads are widened on read

  std::uint64_t numel() const;
};

constexpr std::uint16_t kArrayVersion = 1;

void write_array(std::ostream& os, const NdArray& a, DType dtype = DType::f64);
NdArray read_array(std::istream& is);

void save_array(const std::string& path, const NdArray& a, DType dtype = DType::f64);
NdArray load_array(const std::string& path);

}  // namespace lld
