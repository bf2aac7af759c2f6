#include "renewal/renewal.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "common/error.hpp"
#include "common/parallel.hpp"

namespace lld::renewal {

GapDistribution GapDistribution::deterministic(double delta) { return {GapKind::deterministic, delta, 0.0, {}}; }
GapDistribution GapDistribution::exponential(double rate) { return {GapKind::exponential, rate, 0.0, {}}; }
GapDistribution GapDistribution::gamma(double shape, double rate) { return {GapKind::gamma, shape, rate, {}}; }
GapDistribution GapDistribution::lognormal(double log_mean, double log_std) {
  return {GapKind::lognormal, log_mean, log_std, {}};
}
GapDistribution GapDistribution::empirical(std::vector<double> samples) {
  return {GapKind::empirical, 0.0, 0.0, std::move(samples)};
}

const char* kind_name(GapKind k) {
  switch (k) {
    case GapKind::deterministic: return "deterministic";
    case GapKind::exponential: return "exponential";
    case GapKind::gamma: return "gamma";
    case GapKind::lognormal: return "lognormal";
    case GapKind::empirical: return "empirical";
  }
  return "?";
}

void validate(const GapDistribution& g) {
  auto fin = [](double v) { return std::isfinite(v); };
  switch (g.kind) {
    case GapKind::deterministic:
      require(fin(g.p1) && g.p1 >= 0.0, Errc::validation, "deterministic gap must be a nonnegative finite value");
      break;
    case GapKind::exponential:
      require(fin(g.p1) && g.p1 > 0.0, Errc::validation, "exponential rate must be positive");
      break;
    case GapKind::gamma:
      require(fin(g.p1) && fin(g.p2) && g.p1 > 0.0 && g.p2 > 0.0, Errc::validation, "gamma shape and rate must be positive");
      break;
    case GapKind::lognormal:
      require(fin(g.p1) && fin(g.p2) && g.p2 >= 0.0, Errc::validation, "lognormal parameters invalid");
      break;
    case GapKind::empirical:
      require(!g.samples.empty(), Errc::validation, "empirical gap distribution needs samples");
      for (double v : g.samples) require(fin(v) && v >= 0.0, Errc::validation, "empirical gaps must be nonnegative");
      break;
  }
}

double GapDistribution::draw(Rng& rng) const {
  switch (kind) {
    case GapKind::deterministic: return p1;
    case GapKind::exponential: return std::exponential_distribution<double>(p1)(rng.engine());
    case GapKind::gamma: return std::gamma_distribution<double>(p1, 1.0 / p2)(rng.engine());
    case GapKind::lognormal: return std::lognormal_distribution<double>(p1, p2)(rng.engine());
    case GapKind::empirical: return samples[rng.below(samples.size())];
  }
  return 0.0;
}

double GapDistribution::mean() const {
  switch (kind) {
    case GapKind::deterministic: return p1;
    case GapKind::exponential: return 1.0 / p1;
    case GapKind::gamma: return p1 / p2;
    case GapKind::lognormal: return std::exp(p1 + 0.5 * p2 * p2);
    case GapKind::empirical: {
      double s = 0;
      for (double v : samples) s += v;
      return s / static_cast<double>(samples.size());
    }
  }
  return 0.0;
}

double GapDistribution::variance() const {
  switch (kind) {
    case GapKind::deterministic: return 0.0;
    case GapKind::exponential: return 1.0 / (p1 * p1);
    case GapKind::gamma: return p1 / (p2 * p2);
    case GapKind::lognormal: return (std::exp(p2 * p2) - 1.0) * std::exp(2.0 * p1 + p2 * p2);
    case GapKind::empirical: {
      const double m = mean();
      double s = 0;
      for (double v : samples) s += (v - m) * (v - m);
      return s / static_cast<double>(samples.size());
    }
  }
  return 0.0;
}

bool GapDistribution::has_closed_form() const {
  return kind == GapKind::deterministic || kind == GapKind::exponential || kind == GapKind::gamma;
}

GapDistribution GapDistribution::scaled(double c) const {
  GapDistribution g = *this;
  switch (kind) {
    case GapKind::deterministic: g.p1 *= c; break;
    case GapKind::exponential: g.p1 /= c; break;
    case GapKind::gamma: g.p2 /= c; break;
    case GapKind::lognormal: g.p1 += std::log(c); break;
    case GapKind::empirical:
      for (auto& v : g.samples) v *= c;
      break;
  }
  return g;
}

bool GapDistribution::has_positive_mass() const {
  switch (kind) {
    case GapKind::deterministic: return p1 > 0.0;
    case GapKind::empirical:
      for (double v : samples)
        if (v > 0.0) return true;
      return false;
    default: return true;
  }
}

cplx mgf_closed_form(const GapDistribution& g, cplx s) {
  validate(g);
  switch (g.kind) {
    case GapKind::deterministic: return std::exp(s * g.p1);
    case GapKind::exponential: {
      require(s.real() < g.p1, Errc::validation, "exponential MGF diverges for Re(s) >= rate");
      return g.p1 / (g.p1 - s);
    }
    case GapKind::gamma: {
      require(s.real() < g.p2, Errc::validation, "gamma MGF diverges for Re(s) >= rate");
      return std::exp(g.p1 * std::log(g.p2 / (g.p2 - s)));
    }
    default:
      fail(Errc::unsupported_method, std::string("no closed-form multiplier for ") + kind_name(g.kind) + " gaps");
  }
}

namespace {
constexpr std::size_t kPartitions = 64;
}

Multiplier mc_expectation(const GapDistribution& gaps, cplx s, std::size_t n_samples, std::uint64_t seed) {
  validate(gaps);
  require(n_samples >= 1, Errc::validation, "Monte Carlo needs at least one sample");
  struct Acc {
    double re = 0, im = 0, re2 = 0, im2 = 0;
  };
  const std::size_t parts = std::min(kPartitions, n_samples);
  std::vector<Acc> acc(parts);
  parallel_for(parts, [&](std::size_t p) {
    const std::size_t lo = n_samples * p / parts, hi = n_samples * (p + 1) / parts;
    Rng rng(seed, "renewal.mc", p);
    Acc a;
    for (std::size_t i = lo; i < hi; ++i) {
      const cplx v = std::exp(s * gaps.draw(rng));
      a.re += v.real();
      a.im += v.imag();
      a.re2 += v.real() * v.real();
      a.im2 += v.imag() * v.imag();
    }
    acc[p] = a;
  });
  Acc t;
  for (const auto& a : acc) {
    t.re += a.re;
    t.im += a.im;
    t.re2 += a.re2;
    t.im2 += a.im2;
  }
  const double n = static_cast<double>(n_samples);
  Multiplier m;
  m.lambda = {t.re / n, t.im / n};
  if (n_samples > 1) {
    const double var_re = std::max(0.0, (t.re2 - n * m.lambda.real() * m.lambda.real()) / (n - 1));
    const double var_im = std::max(0.0, (t.im2 - n * m.lambda.imag() * m.lambda.imag()) / (n - 1));
    m.se_re = std::sqrt(var_re / n);
    m.se_im = std::sqrt(var_im / n);
  }
  return m;
}

Multiplier effective_multiplier(const Pole& pole, const GapDistribution& gaps, Method method, std::size_t n_samples,
                                std::uint64_t seed) {
  modal::validate(pole);
  if (method == Method::closed_form) return {mgf_closed_form(gaps, pole.s()), 0.0, 0.0};
  return mc_expectation(gaps, pole.s(), n_samples, seed);
}

EffectivePole log_pole(cplx lambda) {
  require(std::isfinite(lambda.real()) && std::isfinite(lambda.imag()), Errc::validation, "non-finite multiplier");
  if (lambda == cplx(0.0, 0.0)) fail(Errc::degenerate_mode, "zero multiplier: mode is annihilated and has no log-pole");
  EffectivePole e;
  e.lambda = lambda;
  if (lambda.imag() == 0.0 && lambda.real() < 0.0) {
    e.branch_cut_warning = true;
    e.sbar = cplx(std::log(-lambda.real()), std::numbers::pi);
  } else {
    e.sbar = std::log(lambda);
  }
  e.rho_bar = -e.sbar.real();
  e.omega_bar = e.sbar.imag();
  return e;
}

EffectivePole log_pole_unwrapped(cplx lambda, double previous_omega_bar) {
  EffectivePole e = log_pole(lambda);
  const double two_pi = 2.0 * std::numbers::pi;
  const double k = std::round((previous_omega_bar - e.omega_bar) / two_pi);
  if (k != 0.0) {
    e.omega_bar += k * two_pi;
    e.sbar = cplx(e.sbar.real(), e.omega_bar);
    e.unwrapped = true;
  }
  return e;
}

Eigen::Matrix2d phi_matrix(const Pole& pole, const GapDistribution& gaps, Method method, std::size_t n_samples,
                           std::uint64_t seed) {
  const cplx lam = effective_multiplier(pole, gaps, method, n_samples, seed).lambda;
  Eigen::Matrix2d P;
  P << lam.real(), -lam.imag(), lam.imag(), lam.real();
  return P;
}

cplx taylor_approx(const Pole& pole, double mean_gap, double var_gap) {
  require(mean_gap > 0.0, Errc::validation, "mean gap must be positive");
  require(var_gap >= 0.0, Errc::validation, "gap variance must be nonnegative");
  const cplx s = pole.s();
  return s * mean_gap + 0.5 * s * s * var_gap;
}

namespace {

// E[exp(-rho Δ)] and E[exp((-rho + i omega) Δ)] from the same sample stream.
std::pair<double, cplx> mc_decay_and_lambda(const Pole& pole, const GapDistribution& gaps, std::size_t n,
                                            std::uint64_t seed) {
  const std::size_t parts = std::min(kPartitions, n);
  std::vector<std::pair<double, cplx>> acc(parts);
  parallel_for(parts, [&](std::size_t p) {
    const std::size_t lo = n * p / parts, hi = n * (p + 1) / parts;
    Rng rng(seed, "renewal.tilt", p);
    double w = 0;
    cplx l = 0;
    for (std::size_t i = lo; i < hi; ++i) {
      const double d = gaps.draw(rng);
      const double e = std::exp(-pole.rho * d);
      w += e;
      l += e * cplx(std::cos(pole.omega * d), std::sin(pole.omega * d));
    }
    acc[p] = {w, l};
  });
  double w = 0;
  cplx l = 0;
  for (auto& a : acc) {
    w += a.first;
    l += a.second;
  }
  return {w / static_cast<double>(n), l / static_cast<double>(n)};
}

}  // namespace

JensenReport jensen_audit(const Pole& pole, const GapDistribution& gaps, std::size_t n_samples, std::uint64_t seed) {
  modal::validate(pole);
  validate(gaps);
  JensenReport r;
  if (gaps.has_closed_form()) {
    r.abs_lambda = std::abs(mgf_closed_form(gaps, pole.s()));
    r.mean_decay = mgf_closed_form(gaps, cplx(-pole.rho, 0.0)).real();
  } else {
    auto [w, l] = mc_decay_and_lambda(pole, gaps, n_samples, seed);
    r.abs_lambda = std::abs(l);
    r.mean_decay = w;
  }
  constexpr double tol = 1e-12;
  r.pass = r.abs_lambda <= r.mean_decay + tol && r.mean_decay <= 1.0 + tol;
  if (gaps.has_positive_mass()) r.pass = r.pass && r.abs_lambda < 1.0;
  return r;
}

double tilt_attenuation(const Pole& pole, const GapDistribution& gaps, std::size_t n_samples, std::uint64_t seed) {
  validate(gaps);
  switch (gaps.kind) {
    case GapKind::deterministic: return 1.0;
    case GapKind::exponential: {
      const double a = gaps.p1 + pole.rho;
      return a / std::hypot(a, pole.omega);
    }
    case GapKind::gamma: {
      const double b = gaps.p2 + pole.rho;
      return std::pow(b / std::hypot(b, pole.omega), gaps.p1);
    }
    default: {
      auto [w, l] = mc_decay_and_lambda(pole, gaps, n_samples, seed);
      return std::abs(l) / w;
    }
  }
}

}  // namespace lld::renewal
