#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "ad/ops.hpp"
#include "ad/tensor.hpp"
#include "common/rng.hpp"

namespace lld::ad {

class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor param;
    Mat m, v;     // AdamW moments
    Mat shadow;   // EMA copy
  };

  Tensor create(const std::string& name, Mat init);
  Tensor get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t numel() const;

  void zero_grad();
  double grad_norm() const;
  void clip_grad_norm(double max_norm);

  // Swaps live and shadow values (EMA evaluation).
  void swap_shadow();
  void copy_live_to_shadow();

  long step = 0;  // optimizer steps applied

  // Named copies of the live values (or shadows) for checkpointing.
  std::map<std::string, Mat> snapshot(bool shadow = false) const;
  void load(const std::map<std::string, Mat>& values, bool also_shadow = true);

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

enum class Schedule { constant, warmup_constant };

struct OptimizerConfig {
  double lr = 1.5e-4;
  double min_lr = 3e-6;
  double weight_decay = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip = 1.0;
  double warmup_fraction = 0.095;
  long max_steps = 1000;
  Schedule schedule = Schedule::warmup_constant;
};

double learning_rate(const OptimizerConfig& cfg, long global_step);

struct StepReport {
  bool applied = false;
  double grad_norm = 0.0;
  double lr = 0.0;
  std::string diagnostics;
};

// Reads gradients from the store's parameter nodes, clips to cfg.clip, and
// applies one decoupled-weight-decay Adam update. Non-finite gradients
// reject the step and leave parameters untouched.
StepReport adamw_step(ParameterStore& store, const OptimizerConfig& cfg, long global_step);

void ema_update(ParameterStore& store, double decay);

// ---- layers -------------------------------------------------------------

enum class Init { lecun_uniform, zeros };

Mat init_matrix(Init init, Eigen::Index rows, Eigen::Index cols, Rng& rng);

struct Linear {
  Tensor W, b;
  Linear() = default;
  Linear(ParameterStore& s, const std::string& name, int in, int out, Rng& rng, Init init = Init::lecun_uniform,
         bool bias = true);
  Tensor operator()(const Tensor& x) const;
};

struct LayerNorm {
  Tensor gamma, beta;
  LayerNorm() = default;
  LayerNorm(ParameterStore& s, const std::string& name, int dim);
  Tensor operator()(const Tensor& x) const;
};

// in -> hidden (GELU) -> out
struct MLP {
  Linear l1, l2;
  MLP() = default;
  MLP(ParameterStore& s, const std::string& name, int in, int hidden, int out, Rng& rng,
      Init out_init = Init::lecun_uniform);
  Tensor operator()(const Tensor& x) const;
};

// Multi-head attention projections. The output projection is zero-initialized
// when it feeds a residual branch.
struct MultiHeadAttention {
  Linear wq, wk, wv, wo;
  int heads = 1;
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore& s, const std::string& name, int d_model, int d_kv, int heads, Rng& rng,
                     bool zero_out = true);
  Tensor operator()(const Tensor& xq, const Tensor& xkv, Eigen::Index groups,
                    const std::vector<bool>& key_mask = {}) const;
};

// Pre-norm transformer layer with grouped self-attention.
struct TransformerLayer {
  LayerNorm ln1, ln2;
  MultiHeadAttention attn;
  MLP ffn;
  double dropout = 0.0;
  TransformerLayer() = default;
  TransformerLayer(ParameterStore& s, const std::string& name, int d_model, int heads, int ffn_dim, double dropout,
                   Rng& rng);
  Tensor operator()(const Tensor& x, Eigen::Index groups, const std::vector<bool>& key_mask, Rng* train_rng) const;
};

}  // namespace lld::ad
