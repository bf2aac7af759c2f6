#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "ad/nn.hpp"

namespace lld::denoiser {

using ad::Mat;
using ad::Tensor;

struct DenoiserConfig {
  int d_z = 8;
  int d_ctx = 32;
  int S = 8;
  int K = 16;
  int d_model = 32;
  int L = 2;
  int heads = 4;
  int ffn = 64;
  int time_features = 8;  // sinusoid pairs for query-time and anchor embeddings
  int T = 1000;           // diffusion steps, used to normalize the step embedding
  double rho_min = 1e-6;
  double omega_max = 3.141592653589793;
  double tanh_scale_rho = 0.5;
  double tanh_scale_omega = 0.5;
  double rho_init_lo = 0.01, rho_init_hi = 0.2;
  double omega_init_lo = 0.01;  // base frequencies are log-spaced up to 0.95 * omega_max
};

nlohmann::json to_json(const DenoiserConfig& c);
DenoiserConfig denoiser_config_from_json(const nlohmann::json& j);

// One forward call covers B windows (or chains). Latents use rows b*h + r;
// summary tokens rows b*S + s; modal rows b*2K + k with cosine rows first.
struct DenoiseInput {
  Mat z_tau;                               // (B*h) x d_z
  std::vector<int> tau;                    // B diffusion steps
  std::vector<std::vector<double>> times;  // B x h, relative to the first query
  std::vector<double> anchor;              // B offsets: first query time minus context end
  Tensor context;                          // (B*S) x d_ctx, summaries or null tokens
  bool fixed_poles = false;                // skip the conditioned pole perturbation
};

struct Poles {
  Tensor rho, omega;  // B x K
};

struct DenoiseOutput {
  Tensor z0;                 // (B*h) x d_z
  Poles poles;
  Tensor residues_init;      // (B*2K) x d_z
  Tensor residues;           // after refinement
};

class Denoiser {
 public:
  Denoiser(const DenoiserConfig& cfg, std::uint64_t seed);

  const DenoiserConfig& config() const { return cfg_; }
  ad::ParameterStore& store() { return store_; }
  const ad::ParameterStore& store() const { return store_; }
  const Tensor& null_tokens() const { return null_; }

  // Selects per window either the given summary (rows b*S...) or the null tokens.
  Tensor context(const Mat& summaries, const std::vector<bool>& drop) const;
  Tensor null_context(int B) const;

  // Conditioning vector (step embedding plus anchor embedding), B x d_model.
  Tensor conditioning(const std::vector<int>& tau, const std::vector<double>& anchor) const;
  Poles predict_poles(const Tensor& cond, const Tensor& context, int B, bool fixed = false) const;
  Tensor init_residues(const Tensor& z_tau, const std::vector<std::vector<double>>& times, const Poles& p) const;
  Tensor refine_block(int l, const Tensor& residues, const Tensor& context, const Tensor& cond, int B) const;
  Tensor refine_residues(const Tensor& residues, const Tensor& context, const Tensor& cond, int B) const;
  // Closed-form synthesis plus the pointwise residual correction.
  Tensor synthesize(const Poles& p, const Tensor& residues, const std::vector<std::vector<double>>& times) const;
  // Basis times residues only.
  Tensor modal_synthesis(const Poles& p, const Tensor& residues, const std::vector<std::vector<double>>& times) const;

  DenoiseOutput denoise(const DenoiseInput& in) const;

  long calls() const { return calls_; }
  void reset_calls() { calls_ = 0; }

 private:
  DenoiserConfig cfg_;
  ad::ParameterStore store_;
  ad::MLP step_mlp_, anchor_mlp_, pole_mlp_, mode_query_, residual_;
  Tensor rho_base_, phi_base_, role_, null_;
  ad::Linear res_query_, time_key_, value_, res_out_;
  struct Block {
    ad::Linear in, out;
    Tensor pos;
    ad::LayerNorm ln_c, ln_s, ln_f;
    ad::MultiHeadAttention cross, self;
    ad::MLP ffn;
  };
  std::vector<Block> blocks_;
  mutable long calls_ = 0;
};

// Fixed sinusoidal features: [sin(f_i x), cos(f_i x)] with log-spaced f_i.
Mat fourier_features(const std::vector<double>& x, int pairs, double f_lo, double f_hi);
Mat step_features(const std::vector<int>& tau, int dim, int T);

}  // namespace lld::denoiser
