#pragma once

// Seed derivation and per-stream generators.
//
// Every random stream in the project is identified by (root seed, stream name,
// index). The derived 64-bit seed is produced by a SplitMix64 finalizer over
// an FNV-1a hash of the name, so streams are stable across runs, platforms and
// worker counts.

#include <cstdint>
#include <random>
#include <string_view>

namespace lld {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xCBF29CE484222325ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t root, std::string_view stream, std::uint64_t index = 0) {
  return splitmix64(splitmix64(root ^ fnv1a64(stream)) + index);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}
  Rng(std::uint64_t root, std::string_view stream, std::uint64_t index = 0)
      : eng_(derive_seed(root, stream, index)) {}

  double normal() { return norm_(eng_); }
  double uniform() { return unif_(eng_); }
  double uniform(double a, double b) { return a + (b - a) * unif_(eng_); }
  std::uint64_t below(std::uint64_t n) { return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(eng_); }
  bool bernoulli(double p) { return unif_(eng_) < p; }
  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
  std::normal_distribution<double> norm_{0.0, 1.0};
  std::uniform_real_distribution<double> unif_{0.0, 1.0};
};

}  // namespace lld
