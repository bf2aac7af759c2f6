#pragma once

#include <functional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "denoiser/denoiser.hpp"

namespace lld::metrics {

using Eigen::MatrixXd;

// (1/m) sum |x_i - y| - (1/(2 m^2)) sum_ij |x_i - x_j|
double crps_empirical(const std::vector<double>& samples, double y);

// m samples, each (h*N) x d in time-major rows; target and mask share that shape.
struct ForecastBundle {
  std::vector<MatrixXd> samples;
  MatrixXd target, mask;
};

void validate(const ForecastBundle& b);

// Mean pointwise CRPS over observed entries.
double bundle_crps(const ForecastBundle& b);

struct PointMetrics {
  double mae = 0.0;
  double mse = 0.0;
  long observed = 0;
};

// Errors of the per-point sample mean over observed entries.
PointMetrics masked_point_metrics(const ForecastBundle& b);

struct BranchStats {
  std::vector<std::pair<double, double>> scatter;  // (omega, rho)
  double mu_omega = 0.0, sd_omega = 0.0, mu_rho = 0.0, sd_rho = 0.0;
};

struct PoleStats {
  BranchStats cond, uncond;
};

// Evaluates the pole head on each summary (S x d_ctx) and on the null tokens.
// Throws an invariant error if any decay is non-positive or a frequency
// leaves (0, omega_max).
PoleStats pole_stats(const denoiser::Denoiser& den, const std::vector<MatrixXd>& summaries,
                     const std::vector<double>& anchors, int tau = 1);

struct LatencyCell {
  int horizon = 0;
  int steps = 0;
  double median_ms = 0.0;
  std::vector<double> samples_ms;
};

struct LatencyTable {
  std::vector<LatencyCell> cells;
  const LatencyCell* find(int horizon, int steps) const;
  // time(h_hi) / time(h_lo) at fixed steps
  double flatness(int h_lo, int h_hi, int steps) const;
  // time(s_hi) / time(s_lo) at fixed horizon
  double step_ratio(int s_lo, int s_hi, int horizon) const;
};

double median(std::vector<double> v);

// run(h, steps) performs one timed sampling call. `warmup` untimed calls
// precede the timed repeats of each cell.
LatencyTable latency_bench(const std::function<void(int, int)>& run, const std::vector<int>& horizons,
                           const std::vector<int>& steps_list, int repeats, int warmup = 1);

}  // namespace lld::metrics
