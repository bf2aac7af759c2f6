#include <doctest.h>

#include <cmath>
#include <random>

#include "common/error.hpp"
#include "modal/modal.hpp"
#include "renewal/renewal.hpp"

using namespace lld;
using namespace lld::renewal;

namespace {

// Independent Monte Carlo estimate of E[exp(s D)] for exponential gaps.
cplx mc_exponential(double mu, cplx s, int n, std::uint64_t seed, double* se) {
  std::mt19937_64 g(seed);
  std::exponential_distribution<double> e(mu);
  cplx sum = 0;
  double s2r = 0, s2i = 0;
  for (int i = 0; i < n; ++i) {
    const cplx v = std::exp(s * e(g));
    sum += v;
    s2r += v.real() * v.real();
    s2i += v.imag() * v.imag();
  }
  const cplx m = sum / double(n);
  *se = std::hypot(std::sqrt((s2r / n - m.real() * m.real()) / n), std::sqrt((s2i / n - m.imag() * m.imag()) / n));
  return m;
}

}  // namespace

TEST_CASE("closed-form multipliers") {
  const auto d = effective_multiplier({1.0, 1.0}, GapDistribution::deterministic(1.0), Method::closed_form);
  CHECK(std::abs(d.lambda - std::exp(-1.0) * cplx(std::cos(1.0), std::sin(1.0))) < 1e-15);

  const auto e = effective_multiplier({1.0, 1e-300}, GapDistribution::exponential(2.0), Method::closed_form);
  CHECK(std::abs(e.lambda - cplx(2.0 / 3.0, 0.0)) < 1e-12);
  double se = 0;
  const cplx mc = mc_exponential(2.0, {-1.0, 0.0}, 1000000, 11, &se);
  CHECK(std::abs(mc - cplx(2.0 / 3.0)) < 3 * se);

  const auto e2 = effective_multiplier({1.0, 1.0}, GapDistribution::exponential(2.0), Method::closed_form);
  CHECK(std::abs(e2.lambda - cplx(0.6, 0.2)) < 1e-15);
  const cplx mc2 = mc_exponential(2.0, {-1.0, 1.0}, 1000000, 12, &se);
  CHECK(std::abs(mc2 - cplx(0.6, 0.2)) < 3 * se);
}

TEST_CASE("gamma closed form uses the principal power") {
  const Pole p{0.3, 2.5};
  const double a = 2.5, b = 1.5;
  const auto g = effective_multiplier(p, GapDistribution::gamma(a, b), Method::closed_form);
  CHECK(std::abs(g.lambda - std::pow(b / (b - p.s()), a)) < 1e-14);
  const auto mc = effective_multiplier(p, GapDistribution::gamma(a, b), Method::monte_carlo, 1000000, 3);
  CHECK(std::abs(mc.lambda - g.lambda) < 3 * mc.se());
}

TEST_CASE("closed form is refused for distributions without one") {
  CHECK_THROWS_AS(effective_multiplier({1, 1}, GapDistribution::lognormal(0, 1), Method::closed_form), Error);
  try {
    effective_multiplier({1, 1}, GapDistribution::empirical({0.5, 1.0}), Method::closed_form);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::unsupported_method);
  }
  const auto mc = effective_multiplier({1, 1}, GapDistribution::lognormal(0, 0.5), Method::monte_carlo, 20000, 1);
  CHECK(std::abs(mc.lambda) < 1.0);
}

TEST_CASE("monte carlo agrees with closed forms within three standard errors") {
  const Pole p{0.2, 1.1};
  for (const auto& g : {GapDistribution::exponential(1.3), GapDistribution::gamma(3.0, 2.0)}) {
    const auto cf = effective_multiplier(p, g, Method::closed_form);
    const auto mc = effective_multiplier(p, g, Method::monte_carlo, kDefaultSamples, 99);
    CHECK(std::abs(cf.lambda.real() - mc.lambda.real()) <= 3 * mc.se_re);
    CHECK(std::abs(cf.lambda.imag() - mc.lambda.imag()) <= 3 * mc.se_im);
  }
}

TEST_CASE("monte carlo is reproducible under a fixed seed") {
  const auto a = effective_multiplier({0.2, 1.1}, GapDistribution::exponential(1.0), Method::monte_carlo, 50000, 5);
  const auto b = effective_multiplier({0.2, 1.1}, GapDistribution::exponential(1.0), Method::monte_carlo, 50000, 5);
  CHECK(a.lambda == b.lambda);
}

TEST_CASE("effective log-pole") {
  const auto h = log_pole({0.5, 0.0});
  CHECK(h.sbar.real() == doctest::Approx(-std::log(2.0)));
  CHECK(h.omega_bar == 0.0);
  CHECK(h.rho_bar == doctest::Approx(std::log(2.0)));
  CHECK(std::abs(log_pole({1.0, 0.0}).sbar) == 0.0);
  const auto c = log_pole({0.6, 0.2});
  CHECK(std::abs(c.sbar - cplx(std::log(std::sqrt(0.40)), std::atan2(0.2, 0.6))) < 1e-15);
  CHECK_THROWS_AS(log_pole({0.0, 0.0}), Error);
  const auto neg = log_pole({-0.5, 0.0});
  CHECK(neg.branch_cut_warning);
  CHECK_FALSE(neg.unwrapped);
}

TEST_CASE("phase unwrapping follows the previous branch") {
  const cplx lam = std::polar(0.9, 3.0);
  const auto u = log_pole_unwrapped(lam, 3.0 + 2 * M_PI - 0.1);
  CHECK(u.omega_bar == doctest::Approx(3.0 + 2 * M_PI));
  CHECK(u.unwrapped);
}

TEST_CASE("renewal-averaged propagator matrix") {
  const Pole p{0.4, 1.2};
  CHECK(phi_matrix(p, GapDistribution::deterministic(0.0), Method::closed_form).isApprox(Eigen::Matrix2d::Identity()));
  CHECK((phi_matrix(p, GapDistribution::deterministic(0.7), Method::closed_form) - modal::block_exp(p, 0.7))
            .cwiseAbs()
            .maxCoeff() < 1e-14);
  for (const auto& g : {GapDistribution::exponential(1.5), GapDistribution::gamma(2.0, 3.0)}) {
    const Eigen::Matrix2d P = phi_matrix(p, g, Method::closed_form);
    const cplx lam = effective_multiplier(p, g, Method::closed_form).lambda;
    Eigen::EigenSolver<Eigen::Matrix2d> es(P);
    const cplx e0 = es.eigenvalues()[0], e1 = es.eigenvalues()[1];
    CHECK(std::min(std::abs(e0 - lam), std::abs(e0 - std::conj(lam))) < 1e-12);
    CHECK(std::min(std::abs(e1 - lam), std::abs(e1 - std::conj(lam))) < 1e-12);
  }
}

TEST_CASE("second-order Taylor log-pole") {
  const Pole p{0.3, 0.9};
  const cplx exact = log_pole(effective_multiplier(p, GapDistribution::deterministic(1.7), Method::closed_form).lambda).sbar;
  CHECK(std::abs(taylor_approx(p, 1.7, 0.0) - exact) < 1e-14);
  CHECK(std::abs(taylor_approx({0.5, 0.5}, 1.0, 0.4).real() - taylor_approx({0.5, 0.5}, 1.0, 0.0).real()) < 1e-15);

  const Pole q{0.1, 0.5};
  auto err = [&](double c) {
    const auto g = GapDistribution::exponential(10.0).scaled(c);
    const cplx ex = log_pole(effective_multiplier(q, g, Method::closed_form).lambda).sbar;
    return std::abs(taylor_approx(q, g.mean(), g.variance()) - ex);
  };
  CHECK(err(1.0) < err(2.0) / 4.0);
}

TEST_CASE("Jensen bound chain") {
  const auto d = jensen_audit({0.5, 2.0}, GapDistribution::deterministic(1.0), 1000, 1);
  CHECK(d.abs_lambda == doctest::Approx(std::exp(-0.5)));
  CHECK(d.mean_decay == doctest::Approx(std::exp(-0.5)));
  CHECK(d.pass);
  const auto w0 = jensen_audit({0.5, 1e-12}, GapDistribution::exponential(1.0), 1000, 1);
  CHECK(w0.abs_lambda == doctest::Approx(w0.mean_decay).epsilon(1e-12));
  const auto e = jensen_audit({1.0, 1.0}, GapDistribution::exponential(2.0), 1000, 1);
  CHECK(e.abs_lambda == doctest::Approx(std::abs(cplx(0.6, 0.2))));
  CHECK(e.abs_lambda == doctest::Approx(0.632).epsilon(1e-3));
  CHECK(e.mean_decay == doctest::Approx(2.0 / 3.0));
  CHECK(e.abs_lambda < e.mean_decay);
  CHECK(e.pass);
}

TEST_CASE("multiplier magnitude never exceeds one") {
  std::mt19937_64 g(21);
  std::uniform_real_distribution<double> u(0.01, 3.0);
  for (int i = 0; i < 2000; ++i) {
    const Pole p{u(g), u(g)};
    for (const auto& gap : {GapDistribution::deterministic(u(g)), GapDistribution::exponential(u(g)),
                            GapDistribution::gamma(u(g), u(g))}) {
      const double a = std::abs(effective_multiplier(p, gap, Method::closed_form).lambda);
      CHECK(a < 1.0);
    }
  }
}

TEST_CASE("tilted characteristic function") {
  CHECK(tilt_attenuation({0.5, 1e-9}, GapDistribution::exponential(1.0), 20000, 1) == doctest::Approx(1.0));
  CHECK(tilt_attenuation({0.5, 2.0}, GapDistribution::deterministic(0.8), 1000, 1) == doctest::Approx(1.0));
  const double mu = 2.0, rho = 0.5, om = 1.5;
  const double expected = (mu + rho) / std::hypot(mu + rho, om);
  CHECK(tilt_attenuation({rho, om}, GapDistribution::exponential(mu), 200000, 7) ==
        doctest::Approx(expected).epsilon(1e-2));
  const auto g = GapDistribution::gamma(2.0, 1.0);
  const double lam = std::abs(effective_multiplier({rho, om}, g, Method::closed_form).lambda);
  const double md = jensen_audit({rho, om}, g, 200000, 8).mean_decay;
  CHECK(lam == doctest::Approx(md * tilt_attenuation({rho, om}, g, 200000, 8)).epsilon(1e-2));
}

TEST_CASE("event-index recursion matches powers of the multiplier") {
  const Pole p{0.1, 0.8};
  const auto gaps = GapDistribution::exponential(1.0);
  const cplx lam = effective_multiplier(p, gaps, Method::closed_form).lambda;
  std::mt19937_64 g(4);
  std::exponential_distribution<double> e(1.0);
  const int paths = 100000, J = 5;
  std::vector<cplx> sum(J + 1, 0.0);
  std::vector<double> sq(J + 1, 0.0);
  for (int i = 0; i < paths; ++i) {
    cplx z = 1.0;
    for (int j = 1; j <= J; ++j) {
      z *= std::exp(p.s() * e(g));
      sum[j] += z;
      sq[j] += std::norm(z);
    }
  }
  for (int j = 1; j <= J; ++j) {
    const cplx m = sum[j] / double(paths);
    const double se = std::sqrt((sq[j] / paths - std::norm(m)) / paths);
    CHECK(std::abs(m - std::pow(lam, j)) < 3 * se);
  }
}
