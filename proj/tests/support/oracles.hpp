#pragma once

// Independent reference computations used by the unit and acceptance tests.
// Nothing here calls into the library's numerical code paths.

#include <cmath>
#include <complex>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using Eigen::MatrixXd;

// Scaling and squaring with a truncated Taylor series.
inline MatrixXd expm(const MatrixXd& A) {
  const double norm = A.cwiseAbs().rowwise().sum().maxCoeff();
  int s = norm > 0.5 ? static_cast<int>(std::ceil(std::log2(norm / 0.5))) : 0;
  const MatrixXd X = A / std::ldexp(1.0, s);
  MatrixXd term = MatrixXd::Identity(A.rows(), A.cols()), sum = term;
  for (int k = 1; k <= 30; ++k) {
    term = term * X / static_cast<double>(k);
    sum += term;
  }
  for (int i = 0; i < s; ++i) sum = sum * sum;
  return sum;
}

// Empirical CRPS straight from the pairwise definition.
inline double crps_pairwise(const std::vector<double>& x, double y) {
  const double m = static_cast<double>(x.size());
  double a = 0.0, b = 0.0;
  for (double xi : x) a += std::abs(xi - y);
  for (double xi : x)
    for (double xj : x) b += std::abs(xi - xj);
  return a / m - b / (2.0 * m * m);
}

// Cosine schedule written out directly from its defining formula.
inline std::vector<double> cosine_alpha_bar(int T, double s = 0.008, double max_beta = 0.999) {
  auto f = [&](double t) {
    const double c = std::cos((t / T + s) / (1.0 + s) * M_PI / 2.0);
    return c * c;
  };
  std::vector<double> ab(T + 1);
  ab[0] = 1.0;
  double prod = 1.0;
  for (int t = 1; t <= T; ++t) {
    const double beta = std::min(1.0 - f(t) / f(t - 1), max_beta);
    prod *= 1.0 - beta;
    ab[t] = prod;
  }
  return ab;
}

}  // namespace oracle
