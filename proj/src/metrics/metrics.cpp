#include "metrics/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "common/error.hpp"

namespace lld::metrics {

double crps_empirical(const std::vector<double>& samples, double y) {
  const std::size_t m = samples.size();
  require(m >= 1, Errc::validation, "CRPS needs at least one sample");
  std::vector<double> x = samples;
  std::sort(x.begin(), x.end());
  double a = 0.0, pair = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    a += std::abs(x[i] - y);
    // sum_{i,j} |x_i - x_j| = 2 sum_i (2i - m + 1) x_(i) for 0-based sorted order
    pair += (2.0 * static_cast<double>(i) - static_cast<double>(m) + 1.0) * x[i];
  }
  const double md = static_cast<double>(m);
  return a / md - pair / (md * md);
}

void validate(const ForecastBundle& b) {
  require(!b.samples.empty(), Errc::validation, "bundle has no samples");
  require(b.target.rows() == b.mask.rows() && b.target.cols() == b.mask.cols(), Errc::shape,
          "target and mask differ in shape");
  for (const auto& s : b.samples)
    require(s.rows() == b.target.rows() && s.cols() == b.target.cols(), Errc::shape, "sample shape differs from target");
}

double bundle_crps(const ForecastBundle& b) {
  validate(b);
  double tot = 0.0;
  long cnt = 0;
  std::vector<double> xs(b.samples.size());
  for (Eigen::Index i = 0; i < b.target.rows(); ++i)
    for (Eigen::Index j = 0; j < b.target.cols(); ++j) {
      if (b.mask(i, j) == 0.0) continue;
      for (std::size_t k = 0; k < b.samples.size(); ++k) xs[k] = b.samples[k](i, j);
      tot += crps_empirical(xs, b.target(i, j));
      ++cnt;
    }
  require(cnt > 0, Errc::validation, "bundle has no observed entries");
  return tot / static_cast<double>(cnt);
}

PointMetrics masked_point_metrics(const ForecastBundle& b) {
  validate(b);
  MatrixXd mean = MatrixXd::Zero(b.target.rows(), b.target.cols());
  for (const auto& s : b.samples) mean += s;
  mean /= static_cast<double>(b.samples.size());
  PointMetrics pm;
  for (Eigen::Index i = 0; i < b.target.rows(); ++i)
    for (Eigen::Index j = 0; j < b.target.cols(); ++j) {
      if (b.mask(i, j) == 0.0) continue;
      const double e = mean(i, j) - b.target(i, j);
      pm.mae += std::abs(e);
      pm.mse += e * e;
      ++pm.observed;
    }
  require(pm.observed > 0, Errc::validation, "bundle has no observed entries");
  pm.mae /= static_cast<double>(pm.observed);
  pm.mse /= static_cast<double>(pm.observed);
  return pm;
}

namespace {

void summarize_branch(BranchStats& s, const MatrixXd& rho, const MatrixXd& omega, double omega_max) {
  for (Eigen::Index i = 0; i < rho.rows(); ++i)
    for (Eigen::Index k = 0; k < rho.cols(); ++k) {
      const double r = rho(i, k), w = omega(i, k);
      require(r > 0.0, Errc::invariant, "predicted decay is not positive");
      require(w > 0.0 && w < omega_max, Errc::invariant, "predicted frequency left (0, omega_max)");
      s.scatter.emplace_back(w, r);
    }
  const double n = static_cast<double>(s.scatter.size());
  for (const auto& [w, r] : s.scatter) {
    s.mu_omega += w / n;
    s.mu_rho += r / n;
  }
  for (const auto& [w, r] : s.scatter) {
    s.sd_omega += (w - s.mu_omega) * (w - s.mu_omega) / n;
    s.sd_rho += (r - s.mu_rho) * (r - s.mu_rho) / n;
  }
  s.sd_omega = std::sqrt(s.sd_omega);
  s.sd_rho = std::sqrt(s.sd_rho);
}

}  // namespace

PoleStats pole_stats(const denoiser::Denoiser& den, const std::vector<MatrixXd>& summaries,
                     const std::vector<double>& anchors, int tau) {
  require(!summaries.empty() && summaries.size() == anchors.size(), Errc::validation,
          "pole statistics need matching summaries and anchors");
  ad::NoGradGuard ng;
  const auto& c = den.config();
  const int B = static_cast<int>(summaries.size());
  MatrixXd E(static_cast<Eigen::Index>(B) * c.S, c.d_ctx);
  for (int b = 0; b < B; ++b) E.middleRows(static_cast<Eigen::Index>(b) * c.S, c.S) = summaries[b];
  const auto cond = den.conditioning(std::vector<int>(static_cast<std::size_t>(B), tau), anchors);
  const auto pc = den.predict_poles(cond, den.context(E, std::vector<bool>(static_cast<std::size_t>(B), false)), B);
  const auto pu = den.predict_poles(cond, den.null_context(B), B);
  PoleStats st;
  summarize_branch(st.cond, pc.rho.value(), pc.omega.value(), c.omega_max);
  summarize_branch(st.uncond, pu.rho.value(), pu.omega.value(), c.omega_max);
  return st;
}

double median(std::vector<double> v) {
  require(!v.empty(), Errc::validation, "median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

const LatencyCell* LatencyTable::find(int horizon, int steps) const {
  for (const auto& c : cells)
    if (c.horizon == horizon && c.steps == steps) return &c;
  return nullptr;
}

double LatencyTable::flatness(int h_lo, int h_hi, int steps) const {
  const auto* a = find(h_lo, steps);
  const auto* b = find(h_hi, steps);
  require(a && b, Errc::validation, "latency cell missing");
  return b->median_ms / a->median_ms;
}

double LatencyTable::step_ratio(int s_lo, int s_hi, int horizon) const {
  const auto* a = find(horizon, s_lo);
  const auto* b = find(horizon, s_hi);
  require(a && b, Errc::validation, "latency cell missing");
  return b->median_ms / a->median_ms;
}

LatencyTable latency_bench(const std::function<void(int, int)>& run, const std::vector<int>& horizons,
                           const std::vector<int>& steps_list, int repeats, int warmup) {
  require(repeats >= 1, Errc::validation, "latency bench needs at least one repeat");
  LatencyTable t;
  for (int h : horizons)
    for (int st : steps_list) {
      for (int w = 0; w < warmup; ++w) run(h, st);
      LatencyCell c;
      c.horizon = h;
      c.steps = st;
      for (int r = 0; r < repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        run(h, st);
        c.samples_ms.push_back(
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
      }
      c.median_ms = median(c.samples_ms);
      t.cells.push_back(std::move(c));
    }
  return t;
}

}  // namespace lld::metrics
