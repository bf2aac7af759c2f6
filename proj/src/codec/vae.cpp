#include "codec/vae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ad/training.hpp"
#include "common/error.hpp"

namespace lld::codec {

using namespace lld::ad;

nlohmann::json to_json(const VaeConfig& c) {
  return {{"d_y", c.d_y},       {"N", c.N},         {"d_z", c.d_z},         {"d_model", c.d_model},
          {"ffn", c.ffn},       {"layers", c.layers}, {"heads", c.heads},   {"dropout", c.dropout},
          {"h_max", c.h_max}};
}

VaeConfig vae_config_from_json(const nlohmann::json& j) {
  VaeConfig c;
  c.d_y = j.at("d_y");
  c.N = j.at("N");
  c.d_z = j.at("d_z");
  c.d_model = j.at("d_model");
  c.ffn = j.at("ffn");
  c.layers = j.at("layers");
  c.heads = j.at("heads");
  c.dropout = j.at("dropout");
  c.h_max = j.at("h_max");
  return c;
}

double kl_anneal(double epoch, double warmup, double anneal, double beta_max) {
  require(epoch >= 0.0, Errc::validation, "epoch must be nonnegative");
  if (epoch < warmup) return 0.0;
  if (anneal <= 0.0 || epoch >= warmup + anneal) return beta_max;
  return beta_max * (epoch - warmup) / anneal;
}

Tensor kl_divergence(const Posterior& q) {
  // 0.5 * (mu^2 + sigma^2 - 1 - 2 log sigma)
  Tensor two_ls = scale(q.log_sigma, 2.0);
  Tensor t = add(square(q.mu), exp(two_ls));
  t = sub(add_scalar(t, -1.0), two_ls);
  return scale(sum(t), 0.5 / static_cast<double>(q.mu.rows()));
}

namespace {

Mat small_uniform(Eigen::Index r, Eigen::Index c, double lim, Rng& rng) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-lim, lim);
  return m;
}

}  // namespace

Vae::Vae(const VaeConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  require(cfg.d_y >= 1 && cfg.N >= 1 && cfg.d_z >= 1 && cfg.d_model >= 1 && cfg.layers >= 0 && cfg.heads >= 1,
          Errc::config, "invalid VAE dimensions");
  require(cfg.d_model % cfg.heads == 0, Errc::config, "VAE width must be divisible by the head count");
  Rng rng(seed, "codec.init");
  enc_in_ = Linear(store_, "enc.in", 2 * cfg.d_y, cfg.d_model, rng);
  for (int l = 0; l < cfg.layers; ++l)
    enc_layers_.emplace_back(store_, "enc.layer" + std::to_string(l), cfg.d_model, cfg.heads, cfg.ffn, cfg.dropout,
                             rng);
  enc_ln_ = LayerNorm(store_, "enc.ln", cfg.d_model);
  enc_head_ = Linear(store_, "enc.head", cfg.d_model, 2 * cfg.d_z, rng);
  dec_in_ = Linear(store_, "dec.in", cfg.d_z, cfg.d_model, rng);
  pos_ = store_.create("dec.pos", small_uniform(cfg.h_max, cfg.d_model, 0.1, rng));
  entity_ = store_.create("dec.entity", small_uniform(cfg.N, cfg.d_model, 0.1, rng));
  for (int l = 0; l < cfg.layers; ++l)
    dec_layers_.emplace_back(store_, "dec.layer" + std::to_string(l), cfg.d_model, cfg.heads, cfg.ffn, cfg.dropout,
                             rng);
  dec_ln_ = LayerNorm(store_, "dec.ln", cfg.d_model);
  dec_head_ = Linear(store_, "dec.head", cfg.d_model, cfg.d_y, rng);
}

Posterior Vae::encode(const Mat& Y, const Mat& M, int B, int h, Rng* train_rng) const {
  require(B >= 1 && h >= 1, Errc::shape, "encode needs at least one window and one query");
  const Eigen::Index rows = static_cast<Eigen::Index>(B) * h * cfg_.N;
  require(Y.rows() == rows && M.rows() == rows && Y.cols() == cfg_.d_y && M.cols() == cfg_.d_y, Errc::shape,
          "encode input does not match (B*h*N) x d_y");
  Mat tok(rows, 2 * cfg_.d_y);
  tok.leftCols(cfg_.d_y) = Y.cwiseProduct(M);
  tok.rightCols(cfg_.d_y) = M;
  Tensor x = enc_in_(constant(std::move(tok)));
  const Eigen::Index groups = static_cast<Eigen::Index>(B) * h;
  for (const auto& layer : enc_layers_) x = layer(x, groups, {}, train_rng);
  x = group_mean(enc_ln_(x), cfg_.N);
  Tensor out = enc_head_(x);
  return {slice_cols(out, 0, cfg_.d_z), slice_cols(out, cfg_.d_z, cfg_.d_z)};
}

Tensor Vae::decode(const Tensor& z, int B, int h, Rng* train_rng) const {
  require(h >= 1 && h <= cfg_.h_max, Errc::shape, "decode horizon exceeds the positional table");
  require(z.rows() == static_cast<Eigen::Index>(B) * h && z.cols() == cfg_.d_z, Errc::shape,
          "decode expects (B*h) x d_z latents");
  const int groups = B * h;
  std::vector<int> pos_idx(groups), bcast(static_cast<std::size_t>(groups) * cfg_.N),
      ent_idx(static_cast<std::size_t>(groups) * cfg_.N);
  for (int g = 0; g < groups; ++g) {
    pos_idx[g] = g % h;
    for (int n = 0; n < cfg_.N; ++n) {
      bcast[static_cast<std::size_t>(g) * cfg_.N + n] = g;
      ent_idx[static_cast<std::size_t>(g) * cfg_.N + n] = n;
    }
  }
  Tensor x = add(dec_in_(z), gather_rows(pos_, pos_idx));
  x = add(gather_rows(x, bcast), gather_rows(entity_, ent_idx));
  for (const auto& layer : dec_layers_) x = layer(x, groups, {}, train_rng);
  return dec_head_(dec_ln_(x));
}

Mat Vae::encode_mean(const Mat& Y, const Mat& M, int B, int h) const {
  NoGradGuard ng;
  return encode(Y, M, B, h).mu.value();
}

Mat Vae::decode_values(const Mat& z, int B, int h) const {
  NoGradGuard ng;
  return decode(constant(z), B, h).value();
}

ElboTerms elbo_loss(const Vae& vae, const Mat& Y, const Mat& M, int B, int h, const Posterior& q, double beta,
                    Rng* sample_rng, Rng* dropout_rng) {
  require(beta >= 0.0, Errc::validation, "beta must be nonnegative");
  Tensor z = q.mu;
  if (sample_rng) {
    Mat eps(q.mu.rows(), q.mu.cols());
    for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = sample_rng->normal();
    z = add(q.mu, mul(exp(q.log_sigma), constant(eps)));
  }
  Tensor recon = masked_mse(vae.decode(z, B, h, dropout_rng), Y, M);
  Tensor kl = kl_divergence(q);
  ElboTerms t;
  t.recon = recon.item();
  t.kl = kl.item();
  t.loss = beta > 0.0 ? add(recon, scale(kl, beta)) : recon;
  return t;
}

void stack_targets(const datagen::RatioIndexCache& cache, const std::vector<datagen::WindowRef>& refs, Mat& Y,
                   Mat& M) {
  const Eigen::Index per = static_cast<Eigen::Index>(cache.layout.h) * cache.N;
  Y.resize(per * static_cast<Eigen::Index>(refs.size()), cache.d);
  M.resize(Y.rows(), Y.cols());
  for (std::size_t b = 0; b < refs.size(); ++b) {
    const auto w = datagen::slice(cache, refs[b]);
    Y.middleRows(static_cast<Eigen::Index>(b) * per, per) = w.y;
    M.middleRows(static_cast<Eigen::Index>(b) * per, per) = w.y_mask;
  }
}

double masked_recon(const Vae& vae, const datagen::RatioIndexCache& cache, const std::vector<datagen::WindowRef>& refs,
                    int batch) {
  NoGradGuard ng;
  double se = 0.0, cnt = 0.0;
  const int h = cache.layout.h;
  for (std::size_t s = 0; s < refs.size(); s += static_cast<std::size_t>(batch)) {
    std::vector<datagen::WindowRef> part(refs.begin() + static_cast<long>(s),
                                         refs.begin() + static_cast<long>(std::min(refs.size(), s + batch)));
    Mat Y, M;
    stack_targets(cache, part, Y, M);
    const int B = static_cast<int>(part.size());
    const Mat mu = vae.encode(Y, M, B, h).mu.value();
    const Mat rec = vae.decode(constant(mu), B, h).value();
    se += (rec - Y).cwiseProduct(M).squaredNorm();
    cnt += M.sum();
  }
  require(cnt > 0.0, Errc::validation, "validation windows have no observed targets");
  return se / cnt;
}

namespace {

std::vector<datagen::WindowRef> evenly_spaced(const std::vector<datagen::WindowRef>& v, int n) {
  if (n <= 0 || static_cast<int>(v.size()) <= n) return v;
  std::vector<datagen::WindowRef> out;
  for (int i = 0; i < n; ++i) out.push_back(v[static_cast<std::size_t>(i) * v.size() / n]);
  return out;
}

}  // namespace

VaeTrainReport pretrain_vae(Vae& vae, const datagen::RatioIndexCache& cache, const VaeTrainConfig& cfg) {
  require(cache.N == vae.config().N && cache.d == vae.config().d_y, Errc::config,
          "cache shape does not match the VAE configuration");
  require(cfg.batch >= 1 && cfg.max_epochs >= 1, Errc::config, "VAE training needs batch and epochs >= 1");
  const auto train = cache.windows_in(datagen::Split::train);
  const auto val = evenly_spaced(cache.windows_in(datagen::Split::val), cfg.val_windows);
  require(!train.empty() && !val.empty(), Errc::validation, "VAE training needs train and val windows");
  const int h = cache.layout.h;

  Rng order_rng(cfg.seed, "codec.order"), sample_rng(cfg.seed, "codec.reparam"), drop_rng(cfg.seed, "codec.dropout");
  VaeTrainReport rep;
  rep.init_val_recon = masked_recon(vae, cache, val, cfg.batch);
  EarlyStopper stopper(cfg.patience, cfg.min_epochs);
  Stopwatch clock;
  std::vector<std::size_t> idx(train.size());
  long step = 0;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double beta = kl_anneal(epoch, cfg.kl_warmup, cfg.kl_anneal_epochs, cfg.beta);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), order_rng.engine());
    const std::size_t take =
        cfg.windows_per_epoch > 0 ? std::min<std::size_t>(idx.size(), cfg.windows_per_epoch) : idx.size();
    double loss_sum = 0.0;
    int nb = 0;
    for (std::size_t s = 0; s < take; s += static_cast<std::size_t>(cfg.batch)) {
      std::vector<datagen::WindowRef> part;
      for (std::size_t i = s; i < std::min(take, s + cfg.batch); ++i) part.push_back(train[idx[i]]);
      Mat Y, M;
      stack_targets(cache, part, Y, M);
      if (M.sum() == 0.0) continue;
      const int B = static_cast<int>(part.size());
      const Posterior q = vae.encode(Y, M, B, h, &drop_rng);
      ElboTerms t = elbo_loss(vae, Y, M, B, h, q, beta, &sample_rng, &drop_rng);
      backward(t.loss);
      const StepReport sr = adamw_step(vae.store(), cfg.opt, step);
      vae.store().zero_grad();
      if (!sr.applied) fail(Errc::nonfinite, "VAE step rejected: " + sr.diagnostics);
      ++step;
      loss_sum += t.loss.item();
      ++nb;
    }
    const double v = masked_recon(vae, cache, val, cfg.batch);
    rep.history.push_back({static_cast<double>(epoch), nb ? loss_sum / nb : 0.0, v, beta});
    rep.epochs = epoch + 1;
    if (stopper.update(epoch, v, vae.store())) {
      rep.stopped_early = true;
      break;
    }
    if (clock.seconds() > cfg.time_budget_s) {
      rep.hit_time_budget = true;
      break;
    }
  }
  if (stopper.has_best()) vae.store().load(stopper.best_params());
  rep.best_val_recon = stopper.best();
  rep.best_epoch = stopper.best_epoch();
  rep.seconds = clock.seconds();
  return rep;
}

}  // namespace lld::codec
