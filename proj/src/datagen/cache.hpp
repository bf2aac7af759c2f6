#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "datagen/synthetic.hpp"

namespace lld::datagen {

enum class Split { train = 0, val = 1, test = 2 };
const char* split_name(Split s);

struct WindowRef {
  int entity_id = 0;  // panel id; every window spans all N entities of the panel
  int start_idx = 0;
  double context_end_time = 0.0;
  Split split = Split::train;
};

struct CacheLayout {
  int ell = 48;  // history length
  int h = 24;    // horizon length
  double resolution = 0.01;
  std::array<double, 3> ratios{0.7, 0.1, 0.2};
};

struct RatioIndexCache {
  CacheLayout layout;
  std::vector<double> grid;           // shared timestamps (bin centres)
  int N = 0, d = 0;
  std::vector<MatrixXd> values;       // per entity T x d, standardized, 0 where missing
  std::vector<MatrixXd> masks;        // per entity T x d in {0, 1}
  MatrixXd mean, std;                 // N x d train-split statistics
  std::array<double, 2> split_times{};  // first timestamps of the val and test splits
  std::array<int, 2> split_idx{};       // grid indices of those boundaries
  std::vector<WindowRef> windows;
  std::uint64_t spec_hash = 0;
  double min_coverage = 0.0;

  int T() const { return static_cast<int>(grid.size()); }
  std::vector<WindowRef> windows_in(Split s) const;
};

// Time-major slices: row r*N + n holds entity n at step r.
struct WindowSlice {
  WindowRef ref;
  MatrixXd hist_x, hist_mask;    // (ell*N) x d
  std::vector<double> hist_times;
  MatrixXd y, y_mask;            // (h*N) x d
  std::vector<double> query_times;
  int N = 0, d = 0;

  double context_end() const { return hist_times.back(); }
};

RatioIndexCache build_cache(const SeriesData& series, const SyntheticSpec& spec, const CacheLayout& layout);

// Drops timestamps whose observed fraction (over entities x channels) is
// below min_coverage, keeps split boundaries fixed in time, and rebuilds
// the window index. The input cache is not modified.
RatioIndexCache induce_missingness(const RatioIndexCache& cache, double min_coverage);

// Per-timestamp observed fraction.
std::vector<double> coverage(const RatioIndexCache& cache);

void rebuild_windows(RatioIndexCache& cache);

WindowSlice slice(const RatioIndexCache& cache, const WindowRef& ref);
// Slice with an explicit start index and lengths (used by imputation and latency runs).
WindowSlice slice_at(const RatioIndexCache& cache, int start, int ell, int h);

void save_cache(const RatioIndexCache& cache, const std::string& dir);
RatioIndexCache load_cache(const std::string& dir);

// Nearest native bin index; exact half-way ties round down.
long long nearest_bin(double t, double resolution);

}  // namespace lld::datagen
