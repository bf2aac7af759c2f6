#pragma once

#include <complex>
#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "common/rng.hpp"
#include "modal/modal.hpp"

namespace lld::renewal {

using modal::cplx;
using modal::Pole;

enum class GapKind { deterministic, exponential, gamma, lognormal, empirical };

struct GapDistribution {
  GapKind kind = GapKind::exponential;
  double p1 = 1.0;  // delta | rate | shape | log-mean
  double p2 = 0.0;  // -     | -    | rate  | log-std
  std::vector<double> samples;  // empirical support (resampled with replacement)

  static GapDistribution deterministic(double delta);
  static GapDistribution exponential(double rate);
  static GapDistribution gamma(double shape, double rate);
  static GapDistribution lognormal(double log_mean, double log_std);
  static GapDistribution empirical(std::vector<double> samples);

  double draw(Rng& rng) const;
  double mean() const;
  double variance() const;
  bool has_closed_form() const;
  // Scale every gap by c (Δ -> cΔ).
  GapDistribution scaled(double c) const;
  // P(Δ > 0) > 0
  bool has_positive_mass() const;
};

void validate(const GapDistribution& g);
const char* kind_name(GapKind k);

enum class Method { closed_form, monte_carlo };

constexpr std::size_t kDefaultSamples = 1'000'000;

struct Multiplier {
  cplx lambda;
  // Standard errors of the real and imaginary parts (zero for closed forms).
  double se_re = 0.0;
  double se_im = 0.0;
  double se() const { return std::hypot(se_re, se_im); }
};

// E[exp(s Δ)] for complex s. Closed form where available.
cplx mgf_closed_form(const GapDistribution& g, cplx s);

Multiplier effective_multiplier(const Pole& pole, const GapDistribution& gaps, Method method,
                                std::size_t n_samples = kDefaultSamples, std::uint64_t seed = 0);

// Monte Carlo E[f(Δ)] over derived-seed partitions; returns (mean, standard error) of Re and Im.
Multiplier mc_expectation(const GapDistribution& gaps, cplx s, std::size_t n_samples, std::uint64_t seed);

struct EffectivePole {
  cplx lambda;
  cplx sbar;
  double rho_bar = 0.0;
  double omega_bar = 0.0;
  bool unwrapped = false;
  bool branch_cut_warning = false;
};

EffectivePole log_pole(cplx lambda);
// Continuity unwrap: pick the branch whose phase is closest to previous_omega_bar.
EffectivePole log_pole_unwrapped(cplx lambda, double previous_omega_bar);

Eigen::Matrix2d phi_matrix(const Pole& pole, const GapDistribution& gaps, Method method,
                           std::size_t n_samples = kDefaultSamples, std::uint64_t seed = 0);

cplx taylor_approx(const Pole& pole, double mean_gap, double var_gap);

struct JensenReport {
  double abs_lambda = 0.0;
  double mean_decay = 0.0;  // E[exp(-rho Δ)]
  bool pass = false;
};

JensenReport jensen_audit(const Pole& pole, const GapDistribution& gaps, std::size_t n_samples = kDefaultSamples,
                          std::uint64_t seed = 0);

double tilt_attenuation(const Pole& pole, const GapDistribution& gaps, std::size_t n_samples = kDefaultSamples,
                        std::uint64_t seed = 0);

}  // namespace lld::renewal
