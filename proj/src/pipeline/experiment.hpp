#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "codec/vae.hpp"
#include "datagen/cache.hpp"
#include "datagen/synthetic.hpp"
#include "denoiser/denoiser.hpp"
#include "diffusion/diffusion.hpp"
#include "metrics/metrics.hpp"
#include "pipeline/config.hpp"
#include "summarizer/summarizer.hpp"

namespace lld::pipeline {

using Mat = Eigen::MatrixXd;

// Ground truth recorded next to a generated cache so oracle baselines can be
// recomputed later.
struct Truth {
  std::vector<modal::Pole> poles;          // pre-shift poles
  std::vector<modal::Pole> shifted_poles;  // equal to poles when no shift
  double shift_time = -1.0;
  std::uint64_t spec_hash = 0;
};

nlohmann::json to_json(const Truth& t);
Truth truth_from_json(const nlohmann::json& j);

datagen::SyntheticSpec synthetic_spec(const RunConfig& cfg, std::uint64_t seed);
datagen::CacheLayout cache_layout(const RunConfig& cfg);

struct Dataset {
  datagen::SyntheticSpec spec;
  datagen::RatioIndexCache cache;
  Truth truth;
};

// Generates the series, resolves a relative shift position to a time,
// builds the cache and applies the coverage threshold.
Dataset make_dataset(const RunConfig& cfg, std::uint64_t seed);

codec::VaeConfig vae_config(const RunConfig& cfg, int N, int d_y);
codec::VaeTrainConfig vae_train_config(const RunConfig& cfg, std::uint64_t seed);
summarizer::SummarizerConfig summarizer_config(const RunConfig& cfg, int N, int d_x, int ell);
summarizer::SummarizerTrainConfig summarizer_train_config(const RunConfig& cfg, std::uint64_t seed);
denoiser::DenoiserConfig denoiser_config(const RunConfig& cfg, int d_z, int d_ctx, int S);
diffusion::DiffusionTrainConfig diffusion_train_config(const RunConfig& cfg, std::uint64_t seed);
diffusion::SampleConfig sample_config(const RunConfig& cfg, std::uint64_t seed);

struct WindowForecast {
  metrics::ForecastBundle bundle;
  diffusion::SampleResult result;
  datagen::WindowSlice window;
};

struct EvalReport {
  int windows = 0;
  double crps = 0.0, mae = 0.0, mse = 0.0;
  double oracle_crps = 0.0;
  double min_rho = 0.0;
  long envelope_checks = 0, envelope_violations = 0;
  long denoiser_calls = 0;
  std::vector<double> window_crps, window_oracle;
  std::vector<int> window_start;
  nlohmann::json to_json() const;
};

// Pretrained codec, summarizer and denoiser together with the latent scale.
class Models {
 public:
  std::unique_ptr<codec::Vae> vae;
  std::unique_ptr<summarizer::Summarizer> summarizer;
  std::unique_ptr<denoiser::Denoiser> denoiser;
  double latent_scale = 1.0;
  diffusion::NoiseSchedule schedule;

  // Builds untrained components from the configuration.
  static Models fresh(const RunConfig& cfg, int N, int d_y, int ell, std::uint64_t seed);

  codec::VaeTrainReport pretrain_vae(const RunConfig& cfg, const datagen::RatioIndexCache& cache, std::uint64_t seed);
  summarizer::SummarizerTrainReport pretrain_summarizer(const RunConfig& cfg, const datagen::RatioIndexCache& cache,
                                                        std::uint64_t seed);
  // Freezes the codec and summarizer, precomputes latents and summaries, and
  // trains the denoiser.
  diffusion::DiffusionTrainReport train_diffusion(const RunConfig& cfg, const datagen::RatioIndexCache& cache,
                                                  std::uint64_t seed);

  diffusion::TrainingSet training_set(const datagen::RatioIndexCache& cache,
                                      const std::vector<datagen::WindowRef>& refs) const;

  Mat summary(const datagen::WindowSlice& w) const;

  WindowForecast forecast(const datagen::WindowSlice& w, const diffusion::SampleConfig& sc) const;
  // Queries at arbitrary times (relative to context end via anchor) from a
  // window's history; used by imputation.
  std::vector<Mat> sample_values(const Mat& E, const std::vector<double>& query_times, double context_end,
                                 const diffusion::SampleConfig& sc, diffusion::SampleResult* out = nullptr) const;

  EvalReport evaluate(const datagen::RatioIndexCache& cache, const std::vector<datagen::WindowRef>& refs,
                      const diffusion::SampleConfig& sc, const std::vector<modal::Pole>* oracle_poles) const;

  void save_vae(const std::string& path, const RunConfig& cfg, const nlohmann::json& extra = {}) const;
  void save_summarizer(const std::string& path, const RunConfig& cfg, const nlohmann::json& extra = {}) const;
  void save_diffusion(const std::string& path, const RunConfig& cfg, const nlohmann::json& extra = {}) const;
  void load_vae(const std::string& path);
  void load_summarizer(const std::string& path);
  void load_diffusion(const std::string& path);
};

// Evenly spaced subset; n <= 0 keeps everything.
std::vector<datagen::WindowRef> evenly_spaced(const std::vector<datagen::WindowRef>& v, int n);

// Median over windows and true frequencies of the distance to the nearest
// conditional pole frequency.
double median_nearest_pole_error(const std::vector<Mat>& cond_omegas, const std::vector<double>& true_omegas);

}  // namespace lld::pipeline
