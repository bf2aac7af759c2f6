#include "datagen/cache.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include <json.hpp>

#include "common/binary_array.hpp"
#include "common/error.hpp"

namespace lld::datagen {

namespace fs = std::filesystem;

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

std::vector<WindowRef> RatioIndexCache::windows_in(Split s) const {
  std::vector<WindowRef> out;
  for (const auto& w : windows)
    if (w.split == s) out.push_back(w);
  return out;
}

long long nearest_bin(double t, double resolution) {
  // ceil(x - 0.5) sends exact halves down.
  return static_cast<long long>(std::ceil(t / resolution - 0.5));
}

RatioIndexCache build_cache(const SeriesData& series, const SyntheticSpec& spec, const CacheLayout& layout) {
  require(layout.ell >= 2 && layout.h >= 1, Errc::validation, "window lengths must satisfy ell >= 2, h >= 1");
  require(layout.resolution > 0.0, Errc::validation, "native resolution must be positive");
  const double rsum = layout.ratios[0] + layout.ratios[1] + layout.ratios[2];
  require(std::abs(rsum - 1.0) < 1e-9, Errc::validation, "split ratios must sum to 1");
  const int N = static_cast<int>(series.observations.size());
  require(N >= 1, Errc::validation, "series has no entities");
  const int d = static_cast<int>(series.observations[0].cols());
  const int E = static_cast<int>(series.times.size());

  std::vector<long long> bins(E);
  for (int j = 0; j < E; ++j) bins[j] = nearest_bin(series.times[j], layout.resolution);
  std::vector<long long> uniq = bins;
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  const int T = static_cast<int>(uniq.size());

  RatioIndexCache c;
  c.layout = layout;
  c.N = N;
  c.d = d;
  c.spec_hash = spec_hash(spec);
  c.grid.resize(T);
  for (int g = 0; g < T; ++g) c.grid[g] = static_cast<double>(uniq[g]) * layout.resolution;

  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<MatrixXd> raw(N, MatrixXd::Constant(T, d, nan));
  int g = 0;
  for (int j = 0; j < E; ++j) {
    while (uniq[g] != bins[j]) ++g;
    for (int n = 0; n < N; ++n)
      for (int k = 0; k < d; ++k) {
        const double v = series.observations[n](j, k);
        // First observation in a bin wins; later collisions are discarded.
        if (std::isnan(raw[n](g, k)) && !std::isnan(v)) raw[n](g, k) = v;
      }
  }

  const int n_train = static_cast<int>(std::floor(layout.ratios[0] * T));
  const int n_trval = static_cast<int>(std::floor((layout.ratios[0] + layout.ratios[1]) * T));
  require(n_train >= 1 && n_trval > n_train && T > n_trval, Errc::validation, "empty split");
  c.split_idx = {n_train, n_trval};
  c.split_times = {c.grid[n_train], c.grid[n_trval]};

  c.mean = MatrixXd::Zero(N, d);
  c.std = MatrixXd::Ones(N, d);
  for (int n = 0; n < N; ++n)
    for (int k = 0; k < d; ++k) {
      double s = 0, s2 = 0;
      int cnt = 0;
      for (int t = 0; t < n_train; ++t)
        if (!std::isnan(raw[n](t, k))) {
          s += raw[n](t, k);
          ++cnt;
        }
      if (cnt == 0) continue;
      const double m = s / cnt;
      for (int t = 0; t < n_train; ++t)
        if (!std::isnan(raw[n](t, k))) s2 += (raw[n](t, k) - m) * (raw[n](t, k) - m);
      const double sd = std::sqrt(s2 / cnt);
      c.mean(n, k) = m;
      c.std(n, k) = sd > 1e-12 ? sd : 1.0;
    }

  c.values.assign(N, MatrixXd::Zero(T, d));
  c.masks.assign(N, MatrixXd::Zero(T, d));
  for (int n = 0; n < N; ++n)
    for (int t = 0; t < T; ++t)
      for (int k = 0; k < d; ++k)
        if (!std::isnan(raw[n](t, k))) {
          c.values[n](t, k) = (raw[n](t, k) - c.mean(n, k)) / c.std(n, k);
          c.masks[n](t, k) = 1.0;
        }
  rebuild_windows(c);
  return c;
}

void rebuild_windows(RatioIndexCache& c) {
  const int T = c.T(), ell = c.layout.ell, h = c.layout.h;
  auto first_at_or_after = [&](double t) {
    return static_cast<int>(std::lower_bound(c.grid.begin(), c.grid.end(), t) - c.grid.begin());
  };
  c.split_idx = {first_at_or_after(c.split_times[0]), first_at_or_after(c.split_times[1])};
  const int bounds[4] = {0, c.split_idx[0], c.split_idx[1], T};
  c.windows.clear();
  for (int s = 0; s < 3; ++s) {
    const int a = bounds[s], b = bounds[s + 1];
    for (int st = std::max(0, a - ell); st + ell + h <= b; ++st) {
      if (st + ell < a) continue;
      bool any = false;
      for (int n = 0; n < c.N && !any; ++n) any = c.masks[n].middleRows(st + ell, h).sum() > 0.0;
      if (!any) continue;
      c.windows.push_back({0, st, c.grid[st + ell - 1], static_cast<Split>(s)});
    }
  }
}

std::vector<double> coverage(const RatioIndexCache& c) {
  std::vector<double> cov(c.T(), 0.0);
  for (int t = 0; t < c.T(); ++t) {
    double s = 0;
    for (int n = 0; n < c.N; ++n) s += c.masks[n].row(t).sum();
    cov[t] = s / static_cast<double>(c.N * c.d);
  }
  return cov;
}

RatioIndexCache induce_missingness(const RatioIndexCache& cache, double min_coverage) {
  require(min_coverage >= 0.0 && min_coverage <= 1.0, Errc::validation, "min coverage must lie in [0, 1]");
  const auto cov = coverage(cache);
  std::vector<int> keep;
  for (int t = 0; t < cache.T(); ++t)
    if (cov[t] >= min_coverage) keep.push_back(t);
  RatioIndexCache c = cache;
  c.min_coverage = min_coverage;
  c.grid.clear();
  for (int t : keep) c.grid.push_back(cache.grid[t]);
  for (int n = 0; n < c.N; ++n) {
    MatrixXd v(keep.size(), c.d), m(keep.size(), c.d);
    for (std::size_t i = 0; i < keep.size(); ++i) {
      v.row(static_cast<Eigen::Index>(i)) = cache.values[n].row(keep[i]);
      m.row(static_cast<Eigen::Index>(i)) = cache.masks[n].row(keep[i]);
    }
    c.values[n] = v;
    c.masks[n] = m;
  }
  rebuild_windows(c);
  return c;
}

WindowSlice slice_at(const RatioIndexCache& c, int start, int ell, int h) {
  require(start >= 0 && ell >= 1 && h >= 0 && start + ell + h <= c.T(), Errc::validation, "window out of range");
  WindowSlice w;
  w.N = c.N;
  w.d = c.d;
  w.ref = {0, start, c.grid[start + ell - 1], Split::train};
  w.hist_x.resize(ell * c.N, c.d);
  w.hist_mask.resize(ell * c.N, c.d);
  w.y.resize(h * c.N, c.d);
  w.y_mask.resize(h * c.N, c.d);
  for (int r = 0; r < ell; ++r) {
    w.hist_times.push_back(c.grid[start + r]);
    for (int n = 0; n < c.N; ++n) {
      w.hist_x.row(r * c.N + n) = c.values[n].row(start + r);
      w.hist_mask.row(r * c.N + n) = c.masks[n].row(start + r);
    }
  }
  for (int r = 0; r < h; ++r) {
    w.query_times.push_back(c.grid[start + ell + r]);
    for (int n = 0; n < c.N; ++n) {
      w.y.row(r * c.N + n) = c.values[n].row(start + ell + r);
      w.y_mask.row(r * c.N + n) = c.masks[n].row(start + ell + r);
    }
  }
  return w;
}

WindowSlice slice(const RatioIndexCache& c, const WindowRef& ref) {
  WindowSlice w = slice_at(c, ref.start_idx, c.layout.ell, c.layout.h);
  w.ref = ref;
  return w;
}

namespace {

NdArray to_array(const MatrixXd& m) {
  NdArray a;
  a.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  a.data.resize(m.size());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) a.data[i * m.cols() + j] = m(i, j);
  return a;
}

MatrixXd from_array(const NdArray& a) {
  require(a.dims.size() == 2, Errc::io, "expected a rank-2 array");
  MatrixXd m(a.dims[0], a.dims[1]);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = a.data[i * m.cols() + j];
  return m;
}

std::string entity_file(int n, const char* what) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "entity_%03d_%s.lldk", n, what);
  return buf;
}

}  // namespace

void save_cache(const RatioIndexCache& c, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, Errc::io, "cannot create cache directory " + dir);
  NdArray grid;
  grid.dims = {c.grid.size()};
  grid.data = c.grid;
  save_array(dir + "/grid.lldk", grid);
  for (int n = 0; n < c.N; ++n) {
    MatrixXd v = c.values[n];
    for (Eigen::Index i = 0; i < v.size(); ++i)
      if (c.masks[n].data()[i] == 0.0) v.data()[i] = std::numeric_limits<double>::quiet_NaN();
    save_array(dir + "/" + entity_file(n, "values"), to_array(v));
    save_array(dir + "/" + entity_file(n, "mask"), to_array(c.masks[n]), DType::u8);
  }
  save_array(dir + "/stats_mean.lldk", to_array(c.mean));
  save_array(dir + "/stats_std.lldk", to_array(c.std));

  std::ofstream wi(dir + "/windows.csv");
  require(static_cast<bool>(wi), Errc::io, "cannot write window index");
  wi.precision(17);
  wi << "entity_id,start_idx,context_end_time,split\n";
  for (const auto& w : c.windows)
    wi << w.entity_id << ',' << w.start_idx << ',' << w.context_end_time << ',' << split_name(w.split) << '\n';

  nlohmann::json m;
  m["format"] = "ratio-index-cache";
  m["version"] = 1;
  m["grid_resolution"] = c.layout.resolution;
  m["ell"] = c.layout.ell;
  m["h"] = c.layout.h;
  m["ratios"] = c.layout.ratios;
  m["split_times"] = c.split_times;
  m["split_idx"] = c.split_idx;
  m["entities"] = c.N;
  m["channels"] = c.d;
  m["timestamps"] = c.T();
  m["min_coverage"] = c.min_coverage;
  m["spec_hash"] = c.spec_hash;
  m["windows"] = c.windows.size();
  m["normalization"] = "per-entity per-channel z-score from observed train-split values; missing entries filled with 0 after normalization";
  std::ofstream mf(dir + "/manifest.json");
  require(static_cast<bool>(mf), Errc::io, "cannot write cache manifest");
  mf << m.dump(2) << '\n';
}

RatioIndexCache load_cache(const std::string& dir) {
  std::ifstream mf(dir + "/manifest.json");
  require(static_cast<bool>(mf), Errc::io, "missing cache manifest in " + dir);
  nlohmann::json m;
  try {
    mf >> m;
  } catch (const std::exception& e) {
    fail(Errc::io, std::string("unreadable cache manifest: ") + e.what());
  }
  RatioIndexCache c;
  c.layout.resolution = m.at("grid_resolution").get<double>();
  c.layout.ell = m.at("ell").get<int>();
  c.layout.h = m.at("h").get<int>();
  c.layout.ratios = m.at("ratios").get<std::array<double, 3>>();
  c.split_times = m.at("split_times").get<std::array<double, 2>>();
  c.split_idx = m.at("split_idx").get<std::array<int, 2>>();
  c.N = m.at("entities").get<int>();
  c.d = m.at("channels").get<int>();
  c.min_coverage = m.at("min_coverage").get<double>();
  c.spec_hash = m.at("spec_hash").get<std::uint64_t>();
  c.grid = load_array(dir + "/grid.lldk").data;
  for (int n = 0; n < c.N; ++n) {
    MatrixXd v = from_array(load_array(dir + "/" + entity_file(n, "values")));
    MatrixXd k = from_array(load_array(dir + "/" + entity_file(n, "mask")));
    for (Eigen::Index i = 0; i < v.size(); ++i)
      if (k.data()[i] == 0.0) v.data()[i] = 0.0;
    c.values.push_back(v);
    c.masks.push_back(k);
  }
  c.mean = from_array(load_array(dir + "/stats_mean.lldk"));
  c.std = from_array(load_array(dir + "/stats_std.lldk"));
  std::ifstream wi(dir + "/windows.csv");
  require(static_cast<bool>(wi), Errc::io, "missing window index");
  std::string line;
  std::getline(wi, line);
  while (std::getline(wi, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string a, b, t, s;
    std::getline(ss, a, ',');
    std::getline(ss, b, ',');
    std::getline(ss, t, ',');
    std::getline(ss, s, ',');
    WindowRef w;
    w.entity_id = std::stoi(a);
    w.start_idx = std::stoi(b);
    w.context_end_time = std::stod(t);
    w.split = s == "train" ? Split::train : s == "val" ? Split::val : Split::test;
    c.windows.push_back(w);
  }
  return c;
}

}  // namespace lld::datagen
