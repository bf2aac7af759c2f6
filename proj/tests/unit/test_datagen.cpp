#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "common/error.hpp"
#include "datagen/cache.hpp"
#include "datagen/oracle.hpp"
#include "datagen/synthetic.hpp"

using namespace lld;
using namespace lld::datagen;

namespace {

SyntheticSpec small_spec(std::uint64_t seed) {
  auto s = default_benchmark(seed);
  s.n_entities = 3;
  s.T_total = 1500;
  return s;
}

SyntheticSpec quiet(SyntheticSpec s) {
  s.obs_noise_std = 0.0;
  s.kick_rate = 0.0;
  s.keep_prob = 1.0;
  s.readout = MatrixXd::Identity(s.d_z(), s.d_z());
  return s;
}

int zero_crossings(const MatrixXd& x, const VectorXd& t, double a, double b) {
  int n = 0;
  for (Eigen::Index j = 1; j < x.rows(); ++j)
    if (t[j - 1] >= a && t[j] < b && (x(j - 1, 0) > 0) != (x(j, 0) > 0)) ++n;
  return n;
}

}  // namespace

TEST_CASE("deterministic gaps give a regular grid") {
  auto s = small_spec(1);
  s.gap_dist = renewal::GapDistribution::deterministic(0.25);
  const auto d = generate_series(s, 1);
  CHECK(d.times[0] == 0.0);
  for (Eigen::Index j = 1; j < d.times.size(); ++j) CHECK(d.times[j] - d.times[j - 1] == doctest::Approx(0.25));
}

TEST_CASE("noiseless series equal closed-form modal synthesis") {
  const auto s = quiet(small_spec(2));
  const auto d = generate_series(s, 2);
  const auto design = modal::basis_matrix(d.times, s.true_modes.poles());
  for (int n = 0; n < s.n_entities; ++n) {
    MatrixXd R(2 * s.true_modes.K(), s.d_z());
    R << d.entity_cos[n], d.entity_sin[n];
    const MatrixXd z = modal::synthesize(design, R);
    CHECK((z - d.latent[n]).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((d.observations[n] - z).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("doubling the frequency doubles the post-shift zero-crossing rate") {
  SyntheticSpec s = quiet(small_spec(3));
  s.true_modes.modes.resize(1);
  s.true_modes.modes[0].pole = {1e-4, 0.5};
  s.n_entities = 1;
  s.entity_perturbation = 0.0;
  s.gap_dist = renewal::GapDistribution::deterministic(0.05);
  s.T_total = 8000;
  s.regime_shift = RegimeShift{200.0, 2.0, 1.0};
  const auto d = generate_series(s, 3);
  const int before = zero_crossings(d.latent[0], d.times, 0.0, 200.0);
  const int after = zero_crossings(d.latent[0], d.times, 200.0, 400.0);
  CHECK(before > 20);
  CHECK(static_cast<double>(after) / before == doctest::Approx(2.0).epsilon(0.08));
}

TEST_CASE("generation is seeded") {
  const auto s = small_spec(4);
  const auto a = generate_series(s, 9), b = generate_series(s, 9), c = generate_series(s, 10);
  CHECK(a.times == b.times);
  const auto same = [](const MatrixXd& x, const MatrixXd& y) {
    return ((x.array() == y.array()) || (x.array().isNaN() && y.array().isNaN())).all();
  };
  CHECK(same(a.observations[1], b.observations[1]));
  CHECK(a.times != c.times);
  CHECK(spec_hash(s) == spec_hash(small_spec(4)));
}

TEST_CASE("cache standardization, fill values and splits") {
  const auto s = small_spec(5);
  const auto c = build_cache(generate_series(s, 5), s, CacheLayout{});
  const int T = c.T();
  CHECK(std::abs(c.split_idx[0] - 0.7 * T) <= 1.0);
  CHECK(std::abs(c.split_idx[1] - 0.8 * T) <= 1.0);
  for (std::size_t i = 1; i < c.grid.size(); ++i) CHECK(c.grid[i] > c.grid[i - 1]);
  for (int n = 0; n < c.N; ++n)
    for (int k = 0; k < c.d; ++k) {
      double sum = 0, sq = 0;
      int cnt = 0;
      for (int t = 0; t < T; ++t) {
        if (c.masks[n](t, k) == 0.0) {
          CHECK(c.values[n](t, k) == 0.0);
          continue;
        }
        if (t >= c.split_idx[0]) continue;
        sum += c.values[n](t, k);
        sq += c.values[n](t, k) * c.values[n](t, k);
        ++cnt;
      }
      CHECK(std::abs(sum / cnt) < 1e-9);
      CHECK(std::abs(sq / cnt - 1.0) < 1e-9);
    }
  CHECK_THROWS_AS(build_cache(generate_series(s, 5), s, CacheLayout{48, 24, 0.01, {0.7, 0.1, 0.1}}), Error);
}

TEST_CASE("windows are causal, inside their split and have observed targets") {
  const auto s = small_spec(6);
  const auto c = build_cache(generate_series(s, 6), s, CacheLayout{});
  CHECK(!c.windows_in(Split::train).empty());
  CHECK(!c.windows_in(Split::val).empty());
  CHECK(!c.windows_in(Split::test).empty());
  const int bounds[4] = {0, c.split_idx[0], c.split_idx[1], c.T()};
  for (const auto& ref : c.windows) {
    const auto w = slice(c, ref);
    CHECK(w.hist_times.back() == ref.context_end_time);
    CHECK(w.query_times.front() > w.context_end());
    CHECK(w.y_mask.sum() > 0.0);
    const int s_idx = static_cast<int>(ref.split);
    CHECK(ref.start_idx + c.layout.ell >= bounds[s_idx]);
    CHECK(ref.start_idx + c.layout.ell + c.layout.h <= bounds[s_idx + 1]);
    CHECK(ref.entity_id == 0);
  }
}

TEST_CASE("nearest-bin ties round down") {
  CHECK(nearest_bin(0.015, 0.01) == 1);
  CHECK(nearest_bin(0.0151, 0.01) == 2);
  CHECK(nearest_bin(0.0149, 0.01) == 1);
  CHECK(nearest_bin(0.0, 0.01) == 0);
}

TEST_CASE("missingness induction") {
  const auto s = small_spec(7);
  const auto c = build_cache(generate_series(s, 7), s, CacheLayout{});
  const auto c0 = induce_missingness(c, 0.0);
  CHECK(c0.T() == c.T());
  CHECK(c0.windows.size() == c.windows.size());
  const auto c1 = induce_missingness(c, 1.0);
  for (double v : coverage(c1)) CHECK(v == 1.0);
  int prev = c.T();
  for (double m : {0.0, 0.2, 0.4, 0.5, 0.6, 0.8, 1.0}) {
    const auto ci = induce_missingness(c, m);
    CHECK(ci.T() <= prev);
    prev = ci.T();
    CHECK(ci.split_times == c.split_times);
    for (double v : coverage(ci)) CHECK(v >= m);
  }
  CHECK_THROWS_AS(induce_missingness(c, 1.5), Error);
}

TEST_CASE("cache round trip on disk") {
  const auto s = small_spec(8);
  const auto c = build_cache(generate_series(s, 8), s, CacheLayout{});
  const auto dir = std::filesystem::temp_directory_path() / "lld_test_cache";
  std::filesystem::remove_all(dir);
  save_cache(c, dir.string());
  const auto r = load_cache(dir.string());
  CHECK(r.grid == c.grid);
  CHECK(r.N == c.N);
  CHECK(r.spec_hash == c.spec_hash);
  CHECK(r.windows.size() == c.windows.size());
  CHECK(r.values[2] == c.values[2]);
  CHECK(r.masks[1] == c.masks[1]);
  CHECK(r.mean == c.mean);
  CHECK_THROWS_AS(load_cache((dir / "missing").string()), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("oracle forecast") {
  const std::vector<modal::Pole> poles = {{0.05, 0.6}, {0.08, 1.4}};
  std::mt19937_64 g(9);
  std::normal_distribution<double> nd;
  MatrixXd R(4, 2);
  for (Eigen::Index i = 0; i < R.size(); ++i) R.data()[i] = nd(g);
  std::vector<double> fit, query;
  for (int j = 0; j < 30; ++j) fit.push_back(j * 0.7 + 0.1 * std::sin(j));
  for (int j = 0; j < 10; ++j) query.push_back(21.0 + j);
  auto eval = [&](const std::vector<double>& t) {
    VectorXd v(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) v[i] = t[i] - 3.0;
    return modal::synthesize(modal::basis_matrix(v, poles), R);
  };
  const MatrixXd Y = eval(fit), target = eval(query);
  // Independent ridge solution of the normal equations.
  {
    VectorXd tf(30), tq(10);
    for (int j = 0; j < 30; ++j) tf[j] = fit[j] - 3.0;
    for (int j = 0; j < 10; ++j) tq[j] = query[j] - 3.0;
    const MatrixXd Bf = modal::basis_matrix(tf, poles).values, Bq = modal::basis_matrix(tq, poles).values;
    const MatrixXd A = Bf.transpose() * Bf + kOracleRidge * MatrixXd::Identity(4, 4);
    const MatrixXd ref = Bq * A.ldlt().solve(Bf.transpose() * Y);
    const MatrixXd pred = oracle_fit_predict(fit, Y, MatrixXd::Ones(30, 2), query, poles, 3.0);
    CHECK((pred - ref).cwiseAbs().maxCoeff() < 1e-10);
  }
  // Window-sized context: the ridge bias is below 1e-8.
  {
    std::vector<double> f48, q24;
    for (int j = 0; j < 48; ++j) f48.push_back(j);
    for (int j = 0; j < 24; ++j) q24.push_back(48.0 + j);
    const MatrixXd pred = oracle_fit_predict(f48, eval(f48), MatrixXd::Ones(48, 2), q24, poles, 47.0);
    CHECK((pred - eval(q24)).cwiseAbs().maxCoeff() < 1e-8);
  }
  CHECK(oracle_fit_predict(fit, MatrixXd::Zero(30, 2), MatrixXd::Ones(30, 2), query, poles, 3.0).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(oracle_fit_predict(fit, Y, MatrixXd::Zero(30, 2), query, poles, 3.0), Error);
  MatrixXd half = MatrixXd::Ones(30, 2);
  half.col(1).setZero();
  CHECK(oracle_fit_predict(fit, Y, half, query, poles, 3.0).col(1).cwiseAbs().maxCoeff() == 0.0);

  // Horizon error grows roughly in proportion to the observation noise.
  auto rmse_at = [&](double sigma) {
    double acc = 0.0;
    std::mt19937_64 gg(10);
    std::normal_distribution<double> e;
    for (int rep = 0; rep < 200; ++rep) {
      MatrixXd noisy = Y;
      for (Eigen::Index i = 0; i < noisy.size(); ++i) noisy.data()[i] += sigma * e(gg);
      acc += (oracle_fit_predict(fit, noisy, MatrixXd::Ones(30, 2), query, poles, 3.0) - target).squaredNorm();
    }
    return std::sqrt(acc / (200.0 * target.size()));
  };
  const double r1 = rmse_at(0.05), r2 = rmse_at(0.1);
  CHECK(r2 / r1 == doctest::Approx(2.0).epsilon(0.05));
}
