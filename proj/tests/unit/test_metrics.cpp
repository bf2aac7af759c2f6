#include <doctest.h>

#include <chrono>
#include <random>
#include <thread>

#include "common/error.hpp"
#include "metrics/metrics.hpp"
#include "support/oracles.hpp"

using namespace lld;
using namespace lld::metrics;

TEST_CASE("empirical CRPS hand values") {
  CHECK(crps_empirical({1.0, 1.0, 1.0}, 1.0) == 0.0);
  CHECK(crps_empirical({3.5}, 1.0) == doctest::Approx(2.5));
  CHECK(crps_empirical({0.0, 2.0}, 1.0) == doctest::Approx(0.5));
  CHECK_THROWS_AS(crps_empirical({}, 1.0), Error);
}

TEST_CASE("CRPS matches the pairwise oracle and its invariances") {
  std::mt19937_64 g(1);
  std::normal_distribution<double> n;
  for (int rep = 0; rep < 200; ++rep) {
    const int m = 1 + rep % 30;
    std::vector<double> x(static_cast<std::size_t>(m));
    for (double& v : x) v = n(g);
    const double y = n(g);
    const double c = crps_empirical(x, y);
    CHECK(c >= 0.0);
    CHECK(c == doctest::Approx(oracle::crps_pairwise(x, y)).epsilon(1e-12));
    std::vector<double> shifted = x, scaled = x;
    for (double& v : shifted) v += 4.2;
    for (double& v : scaled) v *= 3.0;
    CHECK(crps_empirical(shifted, y + 4.2) == doctest::Approx(c).epsilon(1e-10));
    CHECK(crps_empirical(scaled, 3.0 * y) == doctest::Approx(3.0 * c).epsilon(1e-10));
  }
}

TEST_CASE("bundle metrics read only observed entries") {
  ForecastBundle b;
  b.samples = {MatrixXd::Zero(2, 2), MatrixXd::Constant(2, 2, 2.0)};
  b.target = MatrixXd::Ones(2, 2);
  b.mask = MatrixXd::Zero(2, 2);
  b.mask(0, 0) = 1.0;
  const auto pm = masked_point_metrics(b);
  CHECK(pm.mse == 0.0);
  CHECK(pm.mae == 0.0);
  CHECK(pm.observed == 1);
  CHECK(bundle_crps(b) == doctest::Approx(0.5));

  ForecastBundle p = b;
  p.target(1, 1) = 100.0;
  p.samples[0](0, 1) = -50.0;
  CHECK(bundle_crps(p) == bundle_crps(b));
  CHECK(masked_point_metrics(p).mse == pm.mse);

  ForecastBundle none = b;
  none.mask.setZero();
  CHECK_THROWS_AS(masked_point_metrics(none), Error);
  CHECK_THROWS_AS(bundle_crps(none), Error);
  ForecastBundle bad = b;
  bad.samples[1] = MatrixXd::Zero(3, 2);
  CHECK_THROWS_AS(validate(bad), Error);

  ForecastBundle q;
  q.samples = {MatrixXd::Constant(1, 1, 3.0)};
  q.target = MatrixXd::Constant(1, 1, 1.0);
  q.mask = MatrixXd::Ones(1, 1);
  CHECK(masked_point_metrics(q).mse == doctest::Approx(4.0));
  CHECK(masked_point_metrics(q).mae == doctest::Approx(2.0));
}

TEST_CASE("pole statistics of a fresh model reflect the initialization ranges") {
  denoiser::DenoiserConfig c;
  c.d_z = 3;
  c.d_ctx = 4;
  c.S = 2;
  c.K = 6;
  c.d_model = 8;
  c.L = 1;
  c.heads = 2;
  c.ffn = 8;
  c.time_features = 2;
  denoiser::Denoiser d(c, 3);
  std::mt19937_64 g(3);
  std::normal_distribution<double> n;
  std::vector<MatrixXd> E;
  std::vector<double> anchors;
  for (int i = 0; i < 5; ++i) {
    MatrixXd e(c.S, c.d_ctx);
    for (Eigen::Index j = 0; j < e.size(); ++j) e.data()[j] = n(g);
    E.push_back(e);
    anchors.push_back(1.0);
  }
  const auto st = pole_stats(d, E, anchors);
  CHECK(st.cond.scatter.size() == 5u * 6u);
  CHECK(st.uncond.scatter.size() >= 6u);
  for (const auto& [w, r] : st.cond.scatter) {
    CHECK(r >= c.rho_init_lo + c.rho_min - 1e-12);
    CHECK(r <= c.rho_init_hi + c.rho_min + 1e-12);
    CHECK(w >= c.omega_init_lo - 1e-12);
    CHECK(w <= 0.95 * c.omega_max + 1e-12);
  }
  CHECK(st.cond.sd_rho > 0.0);
  CHECK(st.cond.mu_rho == doctest::Approx(st.uncond.mu_rho));
}

TEST_CASE("latency harness") {
  int calls = 0;
  auto run = [&](int h, int steps) {
    ++calls;
    std::this_thread::sleep_for(std::chrono::microseconds(200 * steps + h));
  };
  const auto t = latency_bench(run, {4, 8}, {2, 8}, 3, 1);
  CHECK(calls == 4 * (3 + 1));
  CHECK(t.cells.size() == 4);
  CHECK(t.find(8, 2)->samples_ms.size() == 3);
  CHECK(t.find(3, 2) == nullptr);
  CHECK(t.step_ratio(2, 8, 4) > 2.0);
  CHECK(t.flatness(4, 8, 8) < 1.3);
  const auto one = latency_bench(run, {4}, {2}, 1, 0);
  CHECK(one.cells[0].median_ms == one.cells[0].samples_ms[0]);
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
}
