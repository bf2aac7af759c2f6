#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "modal/modal.hpp"
#include "renewal/renewal.hpp"

namespace lld::datagen {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct RegimeShift {
  double shift_time = 0.0;
  double freq_factor = 1.0;
  double decay_factor = 1.0;
};

// Ground truth: K* modes drive complex modal coordinates zeta_k(t) shared by
// all entities. zeta_k starts at 1, rotates/decays with exp(s_k t) and
// receives complex Gaussian kicks at Poisson times (rate kick_rate) so that
// long series stay excited. Entity n sees
//   z_n(t) = sum_k Re[(c_kn - i b_kn) zeta_k(t)],
// which reduces to modal synthesis with residues (c_kn, b_kn) when no kick
// has occurred. Observations are readout * z_n plus Gaussian noise, masked
// per channel with probability 1 - keep_prob.
struct SyntheticSpec {
  modal::ModalSystem true_modes;
  MatrixXd readout;  // d_y x d_z
  double obs_noise_std = 0.05;
  renewal::GapDistribution gap_dist = renewal::GapDistribution::exponential(1.0);
  int n_entities = 8;
  int T_total = 3000;  // number of renewal events
  double keep_prob = 0.7;
  double entity_perturbation = 0.3;
  double kick_rate = 0.02;
  double kick_scale = 1.0;
  std::optional<RegimeShift> regime_shift;

  int d_y() const { return static_cast<int>(readout.rows()); }
  int d_z() const { return true_modes.d_z; }
};

void validate(const SyntheticSpec& spec);

// Default benchmark: (rho, omega) = (0.05, 0.6) and (0.08, 1.4), d_z = 4,
// N = 8, exponential gaps with rate 1, keep-prob 0.7, noise 0.05.
SyntheticSpec default_benchmark(std::uint64_t seed, int d_y = 4);

struct SeriesData {
  VectorXd times;                      // event times, strictly increasing
  std::vector<MatrixXd> latent;        // per entity: T x d_z
  std::vector<MatrixXd> clean;         // per entity: T x d_y (noise-free)
  std::vector<MatrixXd> observations;  // per entity: T x d_y, NaN where missing
  std::vector<MatrixXd> entity_cos;    // per entity: K x d_z cosine residues
  std::vector<MatrixXd> entity_sin;    // per entity: K x d_z sine residues
};

SeriesData generate_series(const SyntheticSpec& spec, std::uint64_t seed);

std::uint64_t spec_hash(const SyntheticSpec& spec);

}  // namespace lld::datagen
