#include "datagen/oracle.hpp"

#include <cmath>

#include "common/error.hpp"

namespace lld::datagen {

namespace {

VectorXd shifted(const std::vector<double>& t, double t0) {
  VectorXd v(static_cast<Eigen::Index>(t.size()));
  for (std::size_t i = 0; i < t.size(); ++i) v[static_cast<Eigen::Index>(i)] = t[i] - t0;
  return v;
}

}  // namespace

MatrixXd oracle_fit_predict(const std::vector<double>& fit_times, const MatrixXd& values, const MatrixXd& mask,
                            const std::vector<double>& query_times, const std::vector<modal::Pole>& poles, double t0,
                            double ridge) {
  require(values.rows() == static_cast<Eigen::Index>(fit_times.size()) && mask.rows() == values.rows() &&
              mask.cols() == values.cols(),
          Errc::shape, "oracle inputs disagree in shape");
  require(mask.sum() >= 1.0, Errc::validation, "oracle needs at least one context observation");
  const MatrixXd Phi = modal::basis_matrix(shifted(fit_times, t0), poles).values;
  const MatrixXd Q = modal::basis_matrix(shifted(query_times, t0), poles).values;
  const Eigen::Index P = Phi.cols();
  MatrixXd out = MatrixXd::Zero(static_cast<Eigen::Index>(query_times.size()), values.cols());
  for (Eigen::Index c = 0; c < values.cols(); ++c) {
    MatrixXd A = ridge * MatrixXd::Identity(P, P);
    VectorXd rhs = VectorXd::Zero(P);
    bool any = false;
    for (Eigen::Index i = 0; i < Phi.rows(); ++i) {
      if (mask(i, c) == 0.0) continue;
      any = true;
      A.noalias() += Phi.row(i).transpose() * Phi.row(i);
      rhs += Phi.row(i).transpose() * values(i, c);
    }
    if (!any) continue;
    out.col(c) = Q * A.ldlt().solve(rhs);
  }
  return out;
}

OracleForecast oracle_forecast(const WindowSlice& w, const std::vector<modal::Pole>& poles, const MatrixXd& mean,
                               const MatrixXd& std) {
  require(w.hist_mask.sum() >= 1.0, Errc::validation, "oracle needs at least one context observation");
  const int N = w.N, d = w.d;
  const int ell = static_cast<int>(w.hist_times.size()), h = static_cast<int>(w.query_times.size());
  OracleForecast f;
  f.pred = MatrixXd::Zero(h * N, d);
  double abs_sum = 0.0, cnt = 0.0;
  for (int n = 0; n < N; ++n) {
    MatrixXd vals(ell, d), msk(ell, d);
    for (int r = 0; r < ell; ++r) {
      msk.row(r) = w.hist_mask.row(r * N + n);
      for (int c = 0; c < d; ++c) vals(r, c) = msk(r, c) != 0.0 ? w.hist_x(r * N + n, c) * std(n, c) + mean(n, c) : 0.0;
    }
    if (msk.sum() < 1.0) continue;
    const MatrixXd raw = oracle_fit_predict(w.hist_times, vals, msk, w.query_times, poles, w.context_end());
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < d; ++c) {
        const bool fitted = msk.col(c).sum() > 0.0;
        const double z = fitted ? (raw(r, c) - mean(n, c)) / std(n, c) : 0.0;
        f.pred(r * N + n, c) = z;
        if (w.y_mask(r * N + n, c) != 0.0) {
          abs_sum += std::abs(z - w.y(r * N + n, c));
          cnt += 1.0;
        }
      }
  }
  f.crps_floor = cnt > 0.0 ? abs_sum / cnt : 0.0;
  return f;
}

}  // namespace lld::datagen
