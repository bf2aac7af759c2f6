#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "ad/nn.hpp"
#include "denoiser/denoiser.hpp"

namespace lld::diffusion {

using ad::Mat;

struct NoiseSchedule {
  int T = 0;
  std::vector<double> alpha_bar;  // T + 1 entries, alpha_bar[0] = 1

  double sigma(int tau) const;  // sqrt((1 - abar) / abar)
  double snr(int tau) const;    // abar / (1 - abar)
};

NoiseSchedule cosine_schedule(int T, double offset = 0.008, double max_beta = 0.999);

Mat forward_diffuse(const Mat& z0, int tau, const Mat& noise, const NoiseSchedule& s);

// min(SNR, gamma) / SNR: equals 1 whenever the cap is inactive.
double min_snr_weight(double snr, double gamma);

std::vector<int> select_steps_karras(int n_steps, const NoiseSchedule& s, double rho = 7.5);

Mat ddim_step(const Mat& z_tau, const Mat& z0_hat, int tau, int tau_prev, const NoiseSchedule& s);

// w*c + (1-w)*u, which is u + w(c - u) and returns c exactly at w = 1.
Mat cfg_combine(const Mat& cond, const Mat& uncond, double w);

// Linear-interpolation quantile of the given values (0 <= p <= 1).
double quantile(std::vector<double> v, double p);

// Clamps every entry to [-s, s] with s = max(quantile_p(|z|), max_val).
Mat dynamic_threshold(const Mat& z0, double p, double max_val);

// Frozen per-window inputs for diffusion training.
struct TrainingSet {
  std::vector<Mat> z0;                     // h x d_z, already divided by the latent scale
  std::vector<Mat> E;                      // S x d_ctx
  std::vector<std::vector<double>> times;  // relative query times
  std::vector<double> anchor;

  std::size_t size() const { return z0.size(); }
};

struct DiffusionTrainConfig {
  int max_epochs = 600;
  int windows_per_epoch = 0;  // 0 = every training window
  int batch = 32;
  double gamma = 5.0;
  double p_uncond = 0.18;
  double ema = 0.999;
  ad::OptimizerConfig opt;  // max_steps is filled in by the trainer
  int patience = 50;
  int min_epochs = 1;
  int val_every = 1;
  double time_budget_s = 900.0;
  std::uint64_t seed = 0;
};

struct StepOutcome {
  double loss = 0.0;
  bool applied = false;
  int dropped = 0;  // windows trained on the null branch
  std::string diagnostics;
};

StepOutcome training_step(denoiser::Denoiser& den, const TrainingSet& data, const std::vector<std::size_t>& batch,
                          const NoiseSchedule& s, const DiffusionTrainConfig& cfg, Rng& rng, long step);

// Weighted x0 loss on a fixed set of (tau, noise) draws, conditional branch.
double validation_loss(const denoiser::Denoiser& den, const TrainingSet& data, const NoiseSchedule& s, double gamma,
                       std::uint64_t seed);

struct DiffusionTrainReport {
  int epochs = 0;
  long steps = 0;
  long rejected = 0;
  long dropped = 0, seen = 0;
  double best_val = 0.0;
  int best_epoch = -1;
  double seconds = 0.0;
  bool stopped_early = false, hit_time_budget = false;
  std::vector<std::array<double, 3>> history;  // epoch, train loss, val loss
};

// Trains with AdamW and EMA; on return the live weights hold the best EMA weights.
DiffusionTrainReport train_diffusion(denoiser::Denoiser& den, const TrainingSet& train, const TrainingSet& val,
                                     const NoiseSchedule& s, DiffusionTrainConfig cfg);

struct SampleConfig {
  int n_steps = 64;
  double eta = 0.0;
  double guidance_w = 1.0;
  double karras_rho = 7.5;
  double threshold_p = 0.995;
  double threshold_max = 1.0;
  bool threshold = true;
  int n_samples = 25;
  std::uint64_t seed = 0;
  // Uses the base poles with no history-conditioned perturbation.
  bool fixed_poles = false;
  // Checks the decay envelope at every step instead of only the final one.
  bool audit_every_step = false;
};

struct SampleResult {
  std::vector<Mat> z0;            // m trajectories, h x d_z (diffusion scale)
  std::vector<int> steps;
  long denoiser_calls = 0;
  double min_rho = 0.0;           // over every denoiser call
  long envelope_checks = 0, envelope_violations = 0;
  Mat cond_rho, cond_omega;       // poles of the conditional branch at the final step, m x K
};

// Runs m deterministic DDIM chains for one window. E is S x d_ctx.
SampleResult sample(const denoiser::Denoiser& den, const Mat& E, const std::vector<double>& times, double anchor,
                    const NoiseSchedule& s, const SampleConfig& cfg);

}  // namespace lld::diffusion
