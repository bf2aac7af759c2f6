#pragma once

#include <vector>

#include <Eigen/Dense>

#include "datagen/cache.hpp"
#include "modal/modal.hpp"

namespace lld::datagen {

constexpr double kOracleRidge = 1e-6;

// Ridge least squares of observed values onto the damped basis of the true
// poles, evaluated at fit_times - t0 and then at query_times - t0.
// values/mask are n_fit x d; returns n_query x d. Channels without any
// observation predict zero.
MatrixXd oracle_fit_predict(const std::vector<double>& fit_times, const MatrixXd& values, const MatrixXd& mask,
                            const std::vector<double>& query_times, const std::vector<modal::Pole>& poles, double t0,
                            double ridge = kOracleRidge);

struct OracleForecast {
  MatrixXd pred;      // (h*N) x d, standardized units
  double crps_floor;  // deterministic forecast: CRPS equals masked MAE
};

// Per (entity, channel): undo the cache standardization, fit the context,
// synthesize the horizon and standardize again.
OracleForecast oracle_forecast(const WindowSlice& w, const std::vector<modal::Pole>& poles, const MatrixXd& mean,
                               const MatrixXd& std);

}  // namespace lld::datagen
