#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "ad/nn.hpp"
#include "datagen/cache.hpp"

namespace lld::codec {

using ad::Mat;
using ad::Tensor;

// Batches stack windows vertically: row ((b*h + r)*N + n) holds entity n at
// query r of window b. Latents use row (b*h + r).
struct VaeConfig {
  int d_y = 4;
  int N = 8;
  int d_z = 8;
  int d_model = 32;
  int ffn = 64;
  int layers = 2;
  int heads = 4;
  double dropout = 0.1;
  int h_max = 256;  // size of the window-relative positional table
};

nlohmann::json to_json(const VaeConfig& c);
VaeConfig vae_config_from_json(const nlohmann::json& j);

struct Posterior {
  Tensor mu, log_sigma;  // (B*h) x d_z
};

struct ElboTerms {
  Tensor loss;
  double recon = 0.0;
  double kl = 0.0;
};

// beta schedule: zero during warmup, linear ramp over `anneal` epochs, flat after.
double kl_anneal(double epoch, double warmup = 5.0, double anneal = 25.0, double beta_max = 1e-3);

// KL(q || N(0, I)) summed over latent dims, averaged over rows.
Tensor kl_divergence(const Posterior& q);

class Vae {
 public:
  Vae(const VaeConfig& cfg, std::uint64_t seed);

  const VaeConfig& config() const { return cfg_; }
  ad::ParameterStore& store() { return store_; }
  const ad::ParameterStore& store() const { return store_; }

  // Y, M: (B*h*N) x d_y. A non-null rng enables dropout.
  Posterior encode(const Mat& Y, const Mat& M, int B, int h, Rng* train_rng = nullptr) const;
  // z: (B*h) x d_z -> (B*h*N) x d_y
  Tensor decode(const Tensor& z, int B, int h, Rng* train_rng = nullptr) const;

  // Posterior mean for a batch, without recording a graph.
  Mat encode_mean(const Mat& Y, const Mat& M, int B, int h) const;
  Mat decode_values(const Mat& z, int B, int h) const;

 private:
  VaeConfig cfg_;
  ad::ParameterStore store_;
  ad::Linear enc_in_, enc_head_, dec_in_, dec_head_;
  std::vector<ad::TransformerLayer> enc_layers_, dec_layers_;
  ad::LayerNorm enc_ln_, dec_ln_;
  Tensor pos_, entity_;
};

// sample_rng == nullptr decodes the posterior mean; otherwise one
// reparameterized draw per latent entry.
ElboTerms elbo_loss(const Vae& vae, const Mat& Y, const Mat& M, int B, int h, const Posterior& q, double beta,
                    Rng* sample_rng, Rng* dropout_rng = nullptr);

inline ad::OptimizerConfig pretrain_optimizer(double lr, double wd) {
  ad::OptimizerConfig o;
  o.lr = lr;
  o.min_lr = 0.0;
  o.weight_decay = wd;
  o.schedule = ad::Schedule::constant;
  return o;
}

struct VaeTrainConfig {
  int max_epochs = 600;
  int windows_per_epoch = 256;  // 0 = every training window
  int batch = 16;
  ad::OptimizerConfig opt = pretrain_optimizer(1e-4, 1e-4);
  double kl_warmup = 5, kl_anneal_epochs = 25, beta = 1e-3;
  int min_epochs = 40;
  int patience = 20;
  int val_windows = 64;
  double time_budget_s = 300.0;
  std::uint64_t seed = 0;
};

struct VaeTrainReport {
  int epochs = 0;
  double init_val_recon = 0.0;
  double best_val_recon = 0.0;
  int best_epoch = -1;
  double seconds = 0.0;
  bool stopped_early = false;
  bool hit_time_budget = false;
  std::vector<std::array<double, 4>> history;  // epoch, train loss, val recon, beta
};

// Stacks the targets of the given windows for a batch.
void stack_targets(const datagen::RatioIndexCache& cache, const std::vector<datagen::WindowRef>& refs, Mat& Y,
                   Mat& M);

double masked_recon(const Vae& vae, const datagen::RatioIndexCache& cache, const std::vector<datagen::WindowRef>& refs,
                    int batch);

VaeTrainReport pretrain_vae(Vae& vae, const datagen::RatioIndexCache& cache, const VaeTrainConfig& cfg);

}  // namespace lld::codec
