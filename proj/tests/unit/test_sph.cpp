#include <doctest.h>

#include <cmath>
#include <random>

#include "common/error.hpp"
#include "common/rng.hpp"
#include "modal/modal.hpp"
#include "sph/sph.hpp"
#include "support/oracles.hpp"

using namespace lld;
using namespace lld::sph;

namespace {

QuadraticHamiltonianSystem diagonal_system(int d, double sigma) {
  QuadraticHamiltonianSystem s;
  s.J = MatrixXd::Zero(d, d);
  s.R = MatrixXd::Identity(d, d);
  s.kappa = MatrixXd::Identity(d, d);
  s.G = MatrixXd::Identity(d, 1);
  s.Sigma = sigma * MatrixXd::Identity(d, d);
  return s;
}

}  // namespace

TEST_CASE("fixed point stays at zero without noise or input") {
  auto s = random_stable_system(3, 3, 2);
  s.Sigma.setZero();
  SimConfig c;
  c.dt = 0.01;
  c.t_end = 1.0;
  c.n_paths = 3;
  c.x0 = VectorXd::Zero(3);
  const auto p = simulate(s, c);
  for (double v : p.data) CHECK(v == 0.0);
}

TEST_CASE("noiseless unforced energy is nonincreasing") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = random_stable_system(seed, 4, 2);
    Rng r(seed, "x0");
    VectorXd x0(4);
    for (int i = 0; i < 4; ++i) x0[i] = 3.0 * r.normal();
    CHECK(max_energy_increase(s, x0, default_dt(s), 2000) <= 1e-9);
  }
}

TEST_CASE("strong convergence against a fine-grid reference") {
  const auto s = random_stable_system(12, 3, 1);
  const VectorXd x0 = VectorXd::Ones(3);
  const auto in = InputSignal::constant(VectorXd::Constant(1, 0.5));
  const double T = 1.0, h_ref = 1.0 / 4096.0;
  const int n_ref = 4096, paths = 200;
  auto endpoint_error = [&](int coarsen) {
    double err = 0.0;
    for (int p = 0; p < paths; ++p) {
      std::mt19937_64 g(1000 + p);
      std::normal_distribution<double> n;
      std::vector<VectorXd> fine(n_ref, VectorXd(3));
      for (auto& w : fine)
        for (int i = 0; i < 3; ++i) w[i] = std::sqrt(h_ref) * n(g);
      const VectorXd ref = simulate_path(s, x0, in, h_ref, fine).back();
      const int step = 64 * coarsen;
      std::vector<VectorXd> coarse;
      for (int k = 0; k < n_ref; k += step) {
        VectorXd w = VectorXd::Zero(3);
        for (int j = 0; j < step; ++j) w += fine[k + j];
        coarse.push_back(w);
      }
      err += (simulate_path(s, x0, in, h_ref * step, coarse).back() - ref).norm();
    }
    return err / paths;
  };
  const double e1 = endpoint_error(2), e2 = endpoint_error(1);
  MESSAGE("endpoint error at 2dt " << e1 << ", at dt " << e2);
  CHECK(e1 / e2 >= 1.8);
  (void)T;
}

TEST_CASE("simulation is deterministic under a seed and guards divergence") {
  const auto s = random_stable_system(5, 3, 1);
  SimConfig c;
  c.dt = 0.01;
  c.t_end = 0.5;
  c.n_paths = 4;
  c.seed = 9;
  CHECK(simulate(s, c).data == simulate(s, c).data);
  SimConfig bad = c;
  bad.input = InputSignal::constant(VectorXd::Constant(1, NAN));
  try {
    simulate(s, bad);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::divergence);
    CHECK(std::string(e.what()).find("step 1") != std::string::npos);
  }
}

TEST_CASE("energy ledger at a zero start is the Ito correction") {
  const double sigma = 0.5;
  const int d = 3;
  auto s = diagonal_system(d, sigma);
  SimConfig c;
  c.dt = 1e-3;
  c.t_end = 0.02;
  c.n_paths = 20000;
  c.seed = 3;
  c.x0 = VectorXd::Zero(d);
  const auto L = energy_balance_audit(s, c, 2);
  const auto& I = L.intervals[0];
  CHECK(I.ito.mean == doctest::Approx(0.5 * sigma * sigma * d));
  CHECK(std::abs(I.measured.mean - 0.5 * sigma * sigma * d) <= 3 * I.measured.se + 0.02);
  CHECK(L.all_close);
}

TEST_CASE("noiseless forced ledger closes deterministically") {
  auto s = random_stable_system(8, 3, 2);
  s.Sigma.setZero();
  SimConfig c;
  c.dt = 1e-3;
  c.t_end = 1.0;
  c.n_paths = 2;
  c.x0 = VectorXd::Ones(3);
  c.input = InputSignal::constant(VectorXd::Constant(2, 0.7));
  const auto L = energy_balance_audit(s, c, 5);
  for (const auto& I : L.intervals) {
    // Trapezoidal power quadrature is second order in dt.
    CHECK(std::abs(I.measured.mean - I.input_power.mean - I.dissipation.mean) < 50 * c.dt * c.dt);
    CHECK(I.residual.se < 1e-12);
  }
}

TEST_CASE("context switch adds exactly the energy jump") {
  auto s = random_stable_system(4, 2, 1);
  s.Sigma.setZero();
  SimConfig c;
  c.dt = 0.01;
  c.t_end = 1.0;
  c.n_paths = 2;
  c.x0 = VectorXd::Ones(2);
  ContextSwitch cs;
  cs.time = 0.5;
  cs.kappa_after = 2.0 * s.kappa;
  c.context_switch = cs;
  const auto L = energy_balance_audit(s, c, 2);
  // State at the switch from an unswitched run.
  std::vector<VectorXd> dW(50, VectorXd::Zero(s.Sigma.cols()));
  const VectorXd xs = simulate_path(s, c.x0, c.input, c.dt, dW).back();
  const double jump = s.H(xs, cs.kappa_after) - s.H(xs, s.kappa);
  CHECK(L.intervals[1].jump_total == doctest::Approx(jump).epsilon(1e-12));
  CHECK(L.intervals[0].jump_total == 0.0);
  CHECK(L.all_close);
}

TEST_CASE("linearization") {
  QuadraticHamiltonianSystem s = diagonal_system(3, 0.0);
  s.G = MatrixXd::Random(3, 2);
  const auto lin = linearize(s, MatrixXd::Identity(2, 3));
  CHECK(lin.A == -MatrixXd::Identity(3, 3));
  CHECK(lin.B == s.G);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto r = random_stable_system(seed, 4, 2);
    Eigen::EigenSolver<MatrixXd> es(linearize(r, MatrixXd::Identity(4, 4)).A);
    CHECK(es.eigenvalues().real().maxCoeff() < 0.0);
  }
}

TEST_CASE("Lyapunov certificate") {
  const MatrixXd I = MatrixXd::Identity(3, 3);
  const auto c = lyapunov_certificate(MatrixXd::Zero(3, 3), I, I);
  CHECK((c.lhs + 2 * I).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(c.negdef);
  const auto s = random_stable_system(2, 4, 1);
  const MatrixXd J2 = MatrixXd::Random(4, 4);
  const auto a = lyapunov_certificate(s.J, s.R, s.kappa);
  const auto b = lyapunov_certificate(J2 - J2.transpose(), s.R, s.kappa);
  CHECK((a.lhs - b.lhs).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(a.identity_ok);
  MatrixXd Rbad = I;
  Rbad(1, 1) = -1.0;
  const auto bad = lyapunov_certificate(MatrixXd::Zero(3, 3), Rbad, I);
  CHECK_FALSE(bad.negdef);
  CHECK(bad.failing_pivot >= 0);
}

TEST_CASE("mild solution of the mean") {
  const auto s = random_stable_system(6, 3, 1);
  const auto lin = linearize(s, MatrixXd::Identity(3, 3));
  const VectorXd x0 = VectorXd::Ones(3);
  const std::vector<double> times = {0.0, 0.3, 1.0, 2.5};
  const auto m = mean_mild_solution(lin.A, lin.B, x0, InputSignal::zero(), times);
  for (std::size_t i = 0; i < times.size(); ++i)
    CHECK((m.mean[i] - oracle::expm(lin.A * times[i]) * x0).cwiseAbs().maxCoeff() < 1e-10);
  const MatrixXd A = -0.7 * MatrixXd::Identity(3, 3);
  const auto d = mean_mild_solution(A, lin.B, x0, InputSignal::zero(), times);
  for (std::size_t i = 0; i < times.size(); ++i)
    CHECK((d.mean[i] - std::exp(-0.7 * times[i]) * x0).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("mild solution matches the simulated mean") {
  const auto s = random_stable_system(13, 3, 1);
  const auto lin = linearize(s, MatrixXd::Identity(3, 3));
  std::vector<double> tt = {0.0, 0.5, 1.5};
  std::vector<VectorXd> uu = {VectorXd::Constant(1, 1.0), VectorXd::Constant(1, -0.5), VectorXd::Constant(1, 0.2)};
  const auto in = InputSignal::tabulated(tt, uu);
  SimConfig c;
  c.dt = 1e-3;
  c.t_end = 2.0;
  c.n_paths = 10000;
  c.seed = 17;
  c.x0 = VectorXd::Ones(3);
  c.input = in;
  const auto paths = simulate(s, c);
  std::vector<double> checks;
  for (int j = 1; j <= 10; ++j) checks.push_back(0.2 * j);
  std::vector<double> times = {0.0};
  times.insert(times.end(), checks.begin(), checks.end());
  const auto mild = mean_mild_solution(lin.A, lin.B, c.x0, in, times);
  for (std::size_t j = 0; j < checks.size(); ++j) {
    const int step = static_cast<int>(std::lround(checks[j] / c.dt));
    for (int i = 0; i < 3; ++i) {
      double m = 0, q = 0;
      for (int p = 0; p < c.n_paths; ++p) {
        const double v = paths.state(p, step)[i];
        m += v;
        q += v * v;
      }
      m /= c.n_paths;
      const double se = std::sqrt((q / c.n_paths - m * m) / c.n_paths);
      CHECK(std::abs(m - mild.mean[j + 1][i]) <= 3 * se + 5 * c.dt);
    }
  }
}

TEST_CASE("Green response") {
  const auto s = random_stable_system(7, 3, 2);
  const auto lin = linearize(s, MatrixXd::Random(2, 3));
  const auto g0 = green_response(lin.A, lin.B, lin.C, {0.0}, 1);
  CHECK((g0.row(0).transpose() - lin.C * lin.B.col(1)).cwiseAbs().maxCoeff() < 1e-14);

  modal::ModalSystem ms;
  ms.d_z = 2;
  for (auto p : {modal::Pole{0.2, 0.9}, modal::Pole{0.5, 2.0}}) {
    modal::Mode m;
    m.pole = p;
    m.c = Eigen::Vector2d(1.0, -0.5) * (1 + p.rho);
    m.b = Eigen::Vector2d(0.3, 0.8) * p.omega;
    ms.modes.push_back(m);
  }
  std::vector<VectorXd> bu = {Eigen::Vector2d(1.0, 0.5), Eigen::Vector2d(-0.4, 2.0)};
  const auto r = modal::realize(ms, bu);
  std::vector<double> times;
  for (int i = 0; i < 20; ++i) times.push_back(0.37 * i);
  const auto g = green_response(r.A, r.B, r.C, times, 0);
  VectorXd tv = Eigen::Map<VectorXd>(times.data(), 20);
  MatrixXd res = MatrixXd::Zero(4, 2);
  for (int k = 0; k < 2; ++k) res.row(2 + k) = ms.modes[k].c.transpose() * bu[k][0];
  const MatrixXd syn = modal::synthesize(modal::basis_matrix(tv, ms.poles()), res);
  CHECK((g - syn).cwiseAbs().maxCoeff() < 1e-12);
  for (int i = 10; i < 20; ++i) CHECK(g.row(i).norm() < std::exp(-0.2 * times[i] / 2));
}

TEST_CASE("random stable systems") {
  const auto a = random_stable_system(42, 4, 2), b = random_stable_system(42, 4, 2);
  CHECK(a.J == b.J);
  CHECK(a.kappa == b.kappa);
  CHECK(a.Sigma == b.Sigma);
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    const auto s = random_stable_system(seed, 2 + seed % 3, 1 + seed % 2);
    validate(s);
    const MatrixXd A = (s.J - s.R) * s.kappa;
    Eigen::EigenSolver<MatrixXd> es(A, false);
    REQUIRE(es.eigenvalues().real().maxCoeff() < 0.0);
  }
  CHECK_THROWS_AS(random_stable_system(1, 1, 1), Error);
}
