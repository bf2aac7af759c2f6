#include "datagen/synthetic.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "common/error.hpp"
#include "common/rng.hpp"

namespace lld::datagen {

using modal::cplx;

void validate(const SyntheticSpec& s) {
  modal::validate(s.true_modes);
  renewal::validate(s.gap_dist);
  require(s.readout.cols() == s.d_z() && s.readout.rows() >= 1, Errc::shape, "readout must be d_y x d_z");
  require(s.keep_prob > 0.0 && s.keep_prob <= 1.0, Errc::validation, "keep-prob must lie in (0, 1]");
  require(s.obs_noise_std >= 0.0, Errc::validation, "noise std must be nonnegative");
  require(s.n_entities >= 1 && s.T_total >= 2, Errc::validation, "need at least one entity and two events");
  require(s.kick_rate >= 0.0 && s.kick_scale >= 0.0, Errc::validation, "kick parameters must be nonnegative");
  if (s.regime_shift) {
    require(s.regime_shift->freq_factor > 0.0 && s.regime_shift->decay_factor > 0.0, Errc::validation,
            "regime shift factors must be positive");
    require(s.regime_shift->shift_time >= 0.0, Errc::validation, "shift time must be nonnegative");
  }
}

SyntheticSpec default_benchmark(std::uint64_t seed, int d_y) {
  SyntheticSpec s;
  Rng rng(seed, "datagen.benchmark");
  const int d_z = 4;
  s.true_modes.d_z = d_z;
  for (auto [rho, om] : {std::pair{0.05, 0.6}, std::pair{0.08, 1.4}}) {
    modal::Mode m;
    m.pole = {rho, om};
    m.c = VectorXd(d_z);
    m.b = VectorXd(d_z);
    for (int i = 0; i < d_z; ++i) {
      m.c[i] = rng.normal();
      m.b[i] = rng.normal();
    }
    s.true_modes.modes.push_back(m);
  }
  s.readout = MatrixXd(d_y, d_z);
  for (int i = 0; i < d_y; ++i)
    for (int j = 0; j < d_z; ++j) s.readout(i, j) = rng.normal() / std::sqrt(static_cast<double>(d_z));
  return s;
}

namespace {

cplx pole_s(const SyntheticSpec& spec, int k, double t) {
  modal::Pole p = spec.true_modes.modes[k].pole;
  if (spec.regime_shift && t >= spec.regime_shift->shift_time) {
    p.rho *= spec.regime_shift->decay_factor;
    p.omega *= spec.regime_shift->freq_factor;
  }
  return p.s();
}

void advance(const SyntheticSpec& spec, std::vector<cplx>& zeta, double from, double to) {
  if (to <= from) return;
  const int K = spec.true_modes.K();
  if (spec.regime_shift && from < spec.regime_shift->shift_time && to > spec.regime_shift->shift_time) {
    advance(spec, zeta, from, spec.regime_shift->shift_time);
    advance(spec, zeta, spec.regime_shift->shift_time, to);
    return;
  }
  for (int k = 0; k < K; ++k) zeta[k] *= std::exp(pole_s(spec, k, from) * (to - from));
}

}  // namespace

SeriesData generate_series(const SyntheticSpec& spec, std::uint64_t seed) {
  validate(spec);
  const int K = spec.true_modes.K(), d_z = spec.d_z(), d_y = spec.d_y(), N = spec.n_entities, T = spec.T_total;
  Rng gap_rng(seed, "datagen.gaps"), kick_rng(seed, "datagen.kicks"), noise_rng(seed, "datagen.noise"),
      miss_rng(seed, "datagen.missing"), ent_rng(seed, "datagen.entities");

  SeriesData out;
  out.entity_cos.resize(N);
  out.entity_sin.resize(N);
  for (int n = 0; n < N; ++n) {
    out.entity_cos[n] = MatrixXd(K, d_z);
    out.entity_sin[n] = MatrixXd(K, d_z);
    for (int k = 0; k < K; ++k)
      for (int i = 0; i < d_z; ++i) {
        out.entity_cos[n](k, i) = spec.true_modes.modes[k].c[i] + spec.entity_perturbation * ent_rng.normal();
        out.entity_sin[n](k, i) = spec.true_modes.modes[k].b[i] + spec.entity_perturbation * ent_rng.normal();
      }
  }

  out.times = VectorXd(T);
  double t = 0.0;
  for (int j = 0; j < T; ++j) {
    if (j > 0) t += spec.gap_dist.draw(gap_rng);
    out.times[j] = t;
  }

  std::vector<cplx> zeta(K, cplx(1.0, 0.0));
  auto next_kick = [&](double from) {
    if (spec.kick_rate <= 0.0) return std::numeric_limits<double>::infinity();
    return from + std::exponential_distribution<double>(spec.kick_rate)(kick_rng.engine());
  };
  double cur = 0.0, nk = next_kick(0.0);
  out.latent.assign(N, MatrixXd(T, d_z));
  out.clean.assign(N, MatrixXd(T, d_y));
  out.observations.assign(N, MatrixXd(T, d_y));
  for (int j = 0; j < T; ++j) {
    while (nk <= out.times[j]) {
      advance(spec, zeta, cur, nk);
      cur = nk;
      for (int k = 0; k < K; ++k) {
        const double re = kick_rng.normal(), im = kick_rng.normal();
        zeta[k] += spec.kick_scale * cplx(re, im) / std::sqrt(2.0);
      }
      nk = next_kick(cur);
    }
    advance(spec, zeta, cur, out.times[j]);
    cur = out.times[j];
    for (int n = 0; n < N; ++n) {
      // Re[(c - i b) zeta] = c Re(zeta) + b Im(zeta)
      Eigen::RowVectorXd z = Eigen::RowVectorXd::Zero(d_z);
      for (int k = 0; k < K; ++k)
        z += zeta[k].real() * out.entity_cos[n].row(k) + zeta[k].imag() * out.entity_sin[n].row(k);
      out.latent[n].row(j) = z;
      out.clean[n].row(j) = (spec.readout * z.transpose()).transpose();
    }
  }
  for (int n = 0; n < N; ++n)
    for (int j = 0; j < T; ++j)
      for (int c = 0; c < d_y; ++c) {
        const double noisy = out.clean[n](j, c) + spec.obs_noise_std * noise_rng.normal();
        const bool keep = miss_rng.uniform() < spec.keep_prob;
        out.observations[n](j, c) = keep ? noisy : std::numeric_limits<double>::quiet_NaN();
      }
  return out;
}

std::uint64_t spec_hash(const SyntheticSpec& s) {
  std::ostringstream os;
  os.precision(17);
  for (const auto& m : s.true_modes.modes) {
    os << m.pole.rho << ',' << m.pole.omega << ';';
    for (int i = 0; i < m.c.size(); ++i) os << m.c[i] << ',' << m.b[i] << ',';
  }
  for (Eigen::Index i = 0; i < s.readout.size(); ++i) os << s.readout.data()[i] << ',';
  os << s.obs_noise_std << '|' << renewal::kind_name(s.gap_dist.kind) << s.gap_dist.p1 << ',' << s.gap_dist.p2 << '|'
     << s.n_entities << '|' << s.T_total << '|' << s.keep_prob << '|' << s.entity_perturbation << '|' << s.kick_rate
     << '|' << s.kick_scale;
  if (s.regime_shift)
    os << "|shift" << s.regime_shift->shift_time << ',' << s.regime_shift->freq_factor << ','
       << s.regime_shift->decay_factor;
  return fnv1a64(os.str());
}

}  // namespace lld::datagen
