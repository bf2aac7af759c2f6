#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "ad/nn.hpp"
#include "datagen/cache.hpp"

namespace lld::summarizer {

using ad::Mat;
using ad::Tensor;

struct SummarizerConfig {
  int d_x = 4;
  int N = 8;
  int ell = 48;       // history length the reconstruction heads are sized for
  int ell_max = 256;  // positional table size
  int d_mix = 16;
  int d_t = 9;
  int layers = 2;
  int heads = 4;
  int ffn = 64;
  int proxy_hidden = 32;
  int d_ctx = 32;
  int S = 8;  // summary tokens
  double dropout = 0.0;
  double time_scale = 48.0;  // divisor of the relative-time reconstruction target
  std::array<double, 5> weights{1.0, 0.1, 0.1, 0.05, 0.05};

  int d_enc() const { return d_mix + 3 + d_t; }
};

nlohmann::json to_json(const SummarizerConfig& c);
SummarizerConfig summarizer_config_from_json(const nlohmann::json& j);

// Histories of B windows stacked time-major: row ((b*ell + j)*N + n).
struct HistoryBatch {
  int B = 0, ell = 0, N = 0, d = 0;
  Mat X, M;                  // (B*ell*N) x d
  std::vector<double> t_rel;  // B*ell, t_j - t_1 per window
};

HistoryBatch make_history_batch(const std::vector<datagen::WindowSlice>& windows);
HistoryBatch make_history_batch(const datagen::RatioIndexCache& cache, const std::vector<datagen::WindowRef>& refs);

// Entity-major rows ((b*N + n)*ell + j), one column each.
struct ProxySignals {
  Tensor V, T;
};

struct PretrainTerms {
  Tensor total;
  std::array<double, 5> parts{};  // X, V, T, dt, mask
};

class Summarizer {
 public:
  Summarizer(const SummarizerConfig& cfg, std::uint64_t seed);

  const SummarizerConfig& config() const { return cfg_; }
  ad::ParameterStore& store() { return store_; }
  const ad::ParameterStore& store() const { return store_; }

  ProxySignals proxy_signals(const HistoryBatch& hb) const;
  // t: column of relative times -> rows x d_t
  Tensor time2vec(const Mat& t) const;
  // Entity-major fused tokens, (B*N*ell) x d_enc.
  Tensor fuse_tokens(const HistoryBatch& hb, const ProxySignals& p) const;
  // Summary tokens E, (B*S) x d_ctx.
  Tensor summarize(const HistoryBatch& hb, Rng* train_rng = nullptr) const;
  Tensor summarize(const HistoryBatch& hb, const ProxySignals& p, Rng* train_rng) const;
  Mat summarize_values(const HistoryBatch& hb) const;

  PretrainTerms pretrain_loss(const HistoryBatch& hb, const Tensor& E, const ProxySignals& p) const;

 private:
  SummarizerConfig cfg_;
  ad::ParameterStore store_;
  ad::MLP proxy_v_, proxy_t_;
  Tensor t2v_a_, t2v_b_;
  ad::Linear conv_;
  Tensor pos_;
  std::vector<ad::TransformerLayer> layers_;
  ad::LayerNorm ln_;
  ad::Linear proj_;
  Tensor queries_;
  ad::MultiHeadAttention pool_;
  ad::MLP head_x_;
  ad::Linear head_v_, head_t_, head_dt_, head_mask_;
};

// Entity-major view of a time-major stacked matrix.
std::vector<int> entity_major_index(int B, int ell, int N);

struct SummarizerTrainConfig {
  int max_epochs = 200;
  int windows_per_epoch = 256;
  int batch = 16;
  ad::OptimizerConfig opt;
  int min_epochs = 1;
  int patience = 10;
  int val_windows = 64;
  double time_budget_s = 300.0;
  std::uint64_t seed = 0;
  SummarizerTrainConfig();
};

struct SummarizerTrainReport {
  int epochs = 0;
  double init_val = 0.0, best_val = 0.0;
  int best_epoch = -1;
  double seconds = 0.0;
  bool stopped_early = false, hit_time_budget = false;
  std::vector<std::array<double, 7>> history;  // epoch, train total, val X, V, T, dt, mask
};

std::array<double, 6> evaluate_pretrain(const Summarizer& s, const datagen::RatioIndexCache& cache,
                                        const std::vector<datagen::WindowRef>& refs, int batch);

SummarizerTrainReport pretrain_summarizer(Summarizer& s, const datagen::RatioIndexCache& cache,
                                          const SummarizerTrainConfig& cfg);

}  // namespace lld::summarizer
