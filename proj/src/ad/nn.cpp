#include "ad/nn.hpp"

#include <cmath>

#include "common/error.hpp"

namespace lld::ad {

Tensor ParameterStore::create(const std::string& name, Mat init) {
  require(!contains(name), Errc::validation, "duplicate parameter name " + name);
  Entry e;
  e.name = name;
  e.m = Mat::Zero(init.rows(), init.cols());
  e.v = Mat::Zero(init.rows(), init.cols());
  e.shadow = init;
  e.param = Tensor(std::move(init), true);
  index_[name] = entries_.size();
  entries_.push_back(std::move(e));
  return entries_.back().param;
}

Tensor ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  require(it != index_.end(), Errc::validation, "unknown parameter " + name);
  return entries_[it->second].param;
}

std::size_t ParameterStore::numel() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::size_t>(e.param.value().size());
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& e : entries_) e.param.zero_grad();
}

double ParameterStore::grad_norm() const {
  double s = 0;
  for (const auto& e : entries_)
    if (e.param.has_grad()) s += e.param.grad().squaredNorm();
  return std::sqrt(s);
}

void ParameterStore::clip_grad_norm(double max_norm) {
  const double n = grad_norm();
  if (n > max_norm && n > 0.0) {
    const double f = max_norm / n;
    for (auto& e : entries_)
      if (e.param.has_grad()) e.param.node()->grad *= f;
  }
}

void ParameterStore::swap_shadow() {
  for (auto& e : entries_) std::swap(e.param.mutable_value(), e.shadow);
}

void ParameterStore::copy_live_to_shadow() {
  for (auto& e : entries_) e.shadow = e.param.value();
}

std::map<std::string, Mat> ParameterStore::snapshot(bool shadow) const {
  std::map<std::string, Mat> out;
  for (const auto& e : entries_) out[e.name] = shadow ? e.shadow : e.param.value();
  return out;
}

void ParameterStore::load(const std::map<std::string, Mat>& values, bool also_shadow) {
  for (auto& e : entries_) {
    auto it = values.find(e.name);
    require(it != values.end(), Errc::validation, "checkpoint is missing parameter " + e.name);
    require(it->second.rows() == e.param.rows() && it->second.cols() == e.param.cols(), Errc::validation,
            "checkpoint shape mismatch for " + e.name);
    e.param.mutable_value() = it->second;
    if (also_shadow) e.shadow = it->second;
  }
}

double learning_rate(const OptimizerConfig& cfg, long global_step) {
  double lr = cfg.lr;
  if (cfg.schedule == Schedule::warmup_constant) {
    const double warm = std::max(1.0, std::round(cfg.warmup_fraction * static_cast<double>(cfg.max_steps)));
    lr = cfg.lr * std::min(1.0, static_cast<double>(global_step + 1) / warm);
  }
  return std::max(lr, cfg.min_lr);
}

StepReport adamw_step(ParameterStore& store, const OptimizerConfig& cfg, long global_step) {
  StepReport rep;
  rep.grad_norm = store.grad_norm();
  rep.lr = learning_rate(cfg, global_step);
  if (!std::isfinite(rep.grad_norm)) {
    for (const auto& e : store.entries())
      if (e.param.has_grad() && !e.param.grad().allFinite()) {
        rep.diagnostics = "non-finite gradient in " + e.name;
        break;
      }
    return rep;
  }
  if (cfg.clip > 0.0) store.clip_grad_norm(cfg.clip);
  const long t = store.step + 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (auto& e : store.entries()) {
    Mat& p = e.param.mutable_value();
    if (cfg.weight_decay != 0.0) p *= (1.0 - rep.lr * cfg.weight_decay);
    if (!e.param.has_grad()) continue;
    const Mat& g = e.param.grad();
    e.m = cfg.beta1 * e.m + (1.0 - cfg.beta1) * g;
    e.v = cfg.beta2 * e.v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    p.array() -= rep.lr * (e.m.array() / bc1) / ((e.v.array() / bc2).sqrt() + cfg.eps);
  }
  store.step = t;
  rep.applied = true;
  return rep;
}

void ema_update(ParameterStore& store, double decay) {
  require(decay >= 0.0 && decay < 1.0, Errc::validation, "EMA decay must lie in [0, 1)");
  for (auto& e : store.entries()) e.shadow = decay * e.shadow + (1.0 - decay) * e.param.value();
}

Mat init_matrix(Init init, Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  if (init == Init::zeros) return Mat::Zero(rows, cols);
  const double lim = std::sqrt(3.0 / static_cast<double>(rows));
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-lim, lim);
  return m;
}

Linear::Linear(ParameterStore& s, const std::string& name, int in, int out, Rng& rng, Init init, bool bias) {
  W = s.create(name + ".W", init_matrix(init, in, out, rng));
  if (bias) b = s.create(name + ".b", Mat::Zero(1, out));
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = matmul(x, W);
  return b.defined() ? add(y, b) : y;
}

LayerNorm::LayerNorm(ParameterStore& s, const std::string& name, int dim) {
  gamma = s.create(name + ".gamma", Mat::Ones(1, dim));
  beta = s.create(name + ".beta", Mat::Zero(1, dim));
}

Tensor LayerNorm::operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }

MLP::MLP(ParameterStore& s, const std::string& name, int in, int hidden, int out, Rng& rng, Init out_init)
    : l1(s, name + ".l1", in, hidden, rng), l2(s, name + ".l2", hidden, out, rng, out_init) {}

Tensor MLP::operator()(const Tensor& x) const { return l2(gelu(l1(x))); }

MultiHeadAttention::MultiHeadAttention(ParameterStore& s, const std::string& name, int d_model, int d_kv, int h,
                                       Rng& rng, bool zero_out)
    : wq(s, name + ".wq", d_model, d_model, rng),
      wk(s, name + ".wk", d_kv, d_model, rng),
      wv(s, name + ".wv", d_kv, d_model, rng),
      wo(s, name + ".wo", d_model, d_model, rng, zero_out ? Init::zeros : Init::lecun_uniform),
      heads(h) {}

Tensor MultiHeadAttention::operator()(const Tensor& xq, const Tensor& xkv, Eigen::Index groups,
                                      const std::vector<bool>& key_mask) const {
  return wo(attention(wq(xq), wk(xkv), wv(xkv), groups, heads, key_mask));
}

TransformerLayer::TransformerLayer(ParameterStore& s, const std::string& name, int d_model, int heads, int ffn_dim,
                                   double drop, Rng& rng)
    : ln1(s, name + ".ln1", d_model),
      ln2(s, name + ".ln2", d_model),
      attn(s, name + ".attn", d_model, d_model, heads, rng, true),
      ffn(s, name + ".ffn", d_model, ffn_dim, d_model, rng, Init::zeros),
      dropout(drop) {}

Tensor TransformerLayer::operator()(const Tensor& x, Eigen::Index groups, const std::vector<bool>& key_mask,
                                    Rng* train_rng) const {
  Tensor h = ln1(x);
  Tensor a = attn(h, h, groups, key_mask);
  if (train_rng) a = ad::dropout(a, dropout, *train_rng);
  Tensor y = add(x, a);
  Tensor f = ffn(ln2(y));
  if (train_rng) f = ad::dropout(f, dropout, *train_rng);
  return add(y, f);
}

}  // namespace lld::ad
