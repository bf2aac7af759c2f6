#include "summarizer/summarizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ad/training.hpp"
#include "codec/vae.hpp"
#include "common/error.hpp"

namespace lld::summarizer {

using namespace lld::ad;

nlohmann::json to_json(const SummarizerConfig& c) {
  return {{"d_x", c.d_x},       {"N", c.N},           {"ell", c.ell},
          {"ell_max", c.ell_max}, {"d_mix", c.d_mix},   {"d_t", c.d_t},
          {"layers", c.layers}, {"heads", c.heads},   {"ffn", c.ffn},
          {"proxy_hidden", c.proxy_hidden}, {"d_ctx", c.d_ctx}, {"S", c.S},
          {"dropout", c.dropout}, {"time_scale", c.time_scale}, {"weights", c.weights},
          {"dt_target", "window-relative time divided by time_scale"}};
}

SummarizerConfig summarizer_config_from_json(const nlohmann::json& j) {
  SummarizerConfig c;
  c.d_x = j.at("d_x");
  c.N = j.at("N");
  c.ell = j.at("ell");
  c.ell_max = j.at("ell_max");
  c.d_mix = j.at("d_mix");
  c.d_t = j.at("d_t");
  c.layers = j.at("layers");
  c.heads = j.at("heads");
  c.ffn = j.at("ffn");
  c.proxy_hidden = j.at("proxy_hidden");
  c.d_ctx = j.at("d_ctx");
  c.S = j.at("S");
  c.dropout = j.at("dropout");
  c.time_scale = j.at("time_scale");
  c.weights = j.at("weights").get<std::array<double, 5>>();
  return c;
}

HistoryBatch make_history_batch(const std::vector<datagen::WindowSlice>& windows) {
  require(!windows.empty(), Errc::shape, "empty history batch");
  HistoryBatch hb;
  hb.B = static_cast<int>(windows.size());
  hb.ell = static_cast<int>(windows[0].hist_times.size());
  hb.N = windows[0].N;
  hb.d = windows[0].d;
  require(hb.ell >= 2, Errc::validation, "history needs at least two timestamps");
  const Eigen::Index per = static_cast<Eigen::Index>(hb.ell) * hb.N;
  hb.X.resize(per * hb.B, hb.d);
  hb.M.resize(per * hb.B, hb.d);
  for (int b = 0; b < hb.B; ++b) {
    const auto& w = windows[b];
    require(static_cast<int>(w.hist_times.size()) == hb.ell && w.N == hb.N && w.d == hb.d, Errc::shape,
            "history windows in a batch must share shape");
    hb.X.middleRows(b * per, per) = w.hist_x.cwiseProduct(w.hist_mask);
    hb.M.middleRows(b * per, per) = w.hist_mask;
    for (int j = 0; j < hb.ell; ++j) {
      if (j > 0) require(w.hist_times[j] >= w.hist_times[j - 1], Errc::validation, "history times must not decrease");
      hb.t_rel.push_back(w.hist_times[j] - w.hist_times[0]);
    }
  }
  return hb;
}

HistoryBatch make_history_batch(const datagen::RatioIndexCache& cache, const std::vector<datagen::WindowRef>& refs) {
  std::vector<datagen::WindowSlice> ws;
  ws.reserve(refs.size());
  for (const auto& r : refs) ws.push_back(datagen::slice(cache, r));
  return make_history_batch(ws);
}

std::vector<int> entity_major_index(int B, int ell, int N) {
  std::vector<int> idx(static_cast<std::size_t>(B) * ell * N);
  std::size_t o = 0;
  for (int b = 0; b < B; ++b)
    for (int n = 0; n < N; ++n)
      for (int j = 0; j < ell; ++j) idx[o++] = (b * ell + j) * N + n;
  return idx;
}

namespace {

std::vector<int> time_major_index(int B, int ell, int N) {
  std::vector<int> idx(static_cast<std::size_t>(B) * ell * N);
  std::size_t o = 0;
  for (int b = 0; b < B; ++b)
    for (int j = 0; j < ell; ++j)
      for (int n = 0; n < N; ++n) idx[o++] = (b * N + n) * ell + j;
  return idx;
}

Mat take_rows(const Mat& a, const std::vector<int>& idx) {
  Mat out(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = a.row(idx[i]);
  return out;
}

Tensor mse(const Tensor& pred, const Mat& target) {
  return mean(square(sub(pred, constant(target))));
}

}  // namespace

Summarizer::Summarizer(const SummarizerConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  require(cfg.d_x >= 1 && cfg.N >= 1 && cfg.ell >= 2 && cfg.ell_max >= cfg.ell && cfg.S >= 1 && cfg.d_t >= 1,
          Errc::config, "invalid summarizer dimensions");
  require(cfg.d_enc() % cfg.heads == 0 && cfg.d_ctx % cfg.heads == 0, Errc::config,
          "summarizer widths must be divisible by the head count");
  Rng rng(seed, "summarizer.init");
  proxy_v_ = MLP(store_, "proxy.v", cfg.d_x, cfg.proxy_hidden, 1, rng);
  proxy_t_ = MLP(store_, "proxy.t", cfg.d_x, cfg.proxy_hidden, 1, rng);
  Mat a(1, cfg.d_t);
  a(0, 0) = 1.0 / cfg.time_scale;
  for (int i = 1; i < cfg.d_t; ++i) a(0, i) = rng.uniform(0.02, 2.0);
  t2v_a_ = store_.create("t2v.a", a);
  t2v_b_ = store_.create("t2v.b", Mat::Zero(1, cfg.d_t));
  conv_ = Linear(store_, "mix.conv", 3 * cfg.d_x, cfg.d_mix, rng);
  Mat pos(cfg.ell_max, cfg.d_enc());
  for (Eigen::Index i = 0; i < pos.size(); ++i) pos.data()[i] = rng.uniform(-0.1, 0.1);
  pos_ = store_.create("pos", pos);
  for (int l = 0; l < cfg.layers; ++l)
    layers_.emplace_back(store_, "layer" + std::to_string(l), cfg.d_enc(), cfg.heads, cfg.ffn, cfg.dropout, rng);
  ln_ = LayerNorm(store_, "ln", cfg.d_enc());
  proj_ = Linear(store_, "proj", cfg.d_enc(), cfg.d_ctx, rng);
  Mat q(cfg.S, cfg.d_ctx);
  for (Eigen::Index i = 0; i < q.size(); ++i) q.data()[i] = rng.uniform(-0.5, 0.5);
  queries_ = store_.create("queries", q);
  pool_ = MultiHeadAttention(store_, "pool", cfg.d_ctx, cfg.d_ctx, cfg.heads, rng, false);
  const int cells = cfg.ell * cfg.N;
  head_x_ = MLP(store_, "head.x", cfg.d_ctx, 2 * cfg.d_ctx, cells * cfg.d_x, rng);
  head_v_ = Linear(store_, "head.v", cfg.d_ctx, cells, rng);
  head_t_ = Linear(store_, "head.t", cfg.d_ctx, cells, rng);
  head_dt_ = Linear(store_, "head.dt", cfg.d_ctx, cfg.ell, rng);
  head_mask_ = Linear(store_, "head.mask", cfg.d_ctx, cells * cfg.d_x, rng);
}

ProxySignals Summarizer::proxy_signals(const HistoryBatch& hb) const {
  const auto em = entity_major_index(hb.B, hb.ell, hb.N);
  const Mat X = take_rows(hb.X.cwiseProduct(hb.M), em);
  const Mat M = take_rows(hb.M, em);
  Mat dX = Mat::Zero(X.rows(), X.cols());
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    if (r % hb.ell == 0) continue;  // first step of each timeline: zero difference
    dX.row(r) = (X.row(r) - X.row(r - 1)).cwiseProduct(M.row(r)).cwiseProduct(M.row(r - 1));
  }
  return {proxy_v_(constant(X)), proxy_t_(constant(dX))};
}

Tensor Summarizer::time2vec(const Mat& t) const {
  Tensor lin = add(matmul(constant(t), t2v_a_), t2v_b_);
  if (cfg_.d_t == 1) return lin;
  return concat_cols({slice_cols(lin, 0, 1), sin(slice_cols(lin, 1, cfg_.d_t - 1))});
}

Tensor Summarizer::fuse_tokens(const HistoryBatch& hb, const ProxySignals& p) const {
  require(hb.d == cfg_.d_x && hb.N == cfg_.N, Errc::shape, "history batch does not match summarizer shape");
  const auto em = entity_major_index(hb.B, hb.ell, hb.N);
  const Mat X = take_rows(hb.X.cwiseProduct(hb.M), em);
  const Mat M = take_rows(hb.M, em);
  Tensor mixed = conv_(shift_stack3(constant(X), hb.ell));
  Mat miss = M.rowwise().mean();
  Mat t(X.rows(), 1);
  for (int b = 0; b < hb.B; ++b)
    for (int n = 0; n < hb.N; ++n)
      for (int j = 0; j < hb.ell; ++j) t((b * hb.N + n) * hb.ell + j, 0) = hb.t_rel[b * hb.ell + j];
  return concat_cols({mixed, p.V, p.T, constant(miss), time2vec(t)});
}

Tensor Summarizer::summarize(const HistoryBatch& hb, Rng* train_rng) const {
  return summarize(hb, proxy_signals(hb), train_rng);
}

Tensor Summarizer::summarize(const HistoryBatch& hb, const ProxySignals& p, Rng* train_rng) const {
  require(hb.ell <= cfg_.ell_max, Errc::shape, "history longer than the positional table");
  std::vector<double> valid(static_cast<std::size_t>(hb.B) * hb.N, 0.0);
  for (int b = 0; b < hb.B; ++b) {
    bool any = false;
    for (int n = 0; n < hb.N; ++n) {
      double s = 0.0;
      for (int j = 0; j < hb.ell; ++j) s += hb.M.row((b * hb.ell + j) * hb.N + n).sum();
      valid[static_cast<std::size_t>(b) * hb.N + n] = s > 0.0 ? 1.0 : 0.0;
      any = any || s > 0.0;
    }
    require(any, Errc::validation, "history window has no observed entity");
  }
  std::vector<int> pos_idx(static_cast<std::size_t>(hb.B) * hb.N * hb.ell);
  for (std::size_t i = 0; i < pos_idx.size(); ++i) pos_idx[i] = static_cast<int>(i % hb.ell);
  Tensor x = add(fuse_tokens(hb, p), gather_rows(pos_, pos_idx));
  for (const auto& layer : layers_) x = layer(x, static_cast<Eigen::Index>(hb.B) * hb.N, {}, train_rng);
  x = ln_(x);
  // Regroup as (b, j) groups of N entities and pool over valid ones.
  std::vector<double> w(static_cast<std::size_t>(hb.B) * hb.ell * hb.N);
  for (int b = 0; b < hb.B; ++b)
    for (int j = 0; j < hb.ell; ++j)
      for (int n = 0; n < hb.N; ++n)
        w[(static_cast<std::size_t>(b) * hb.ell + j) * hb.N + n] = valid[static_cast<std::size_t>(b) * hb.N + n];
  Tensor pooled = group_mean(gather_rows(x, time_major_index(hb.B, hb.ell, hb.N)), hb.N, w);
  Tensor kv = proj_(pooled);
  std::vector<int> qi(static_cast<std::size_t>(hb.B) * cfg_.S);
  for (std::size_t i = 0; i < qi.size(); ++i) qi[i] = static_cast<int>(i % cfg_.S);
  Tensor q = gather_rows(queries_, qi);
  return add(q, pool_(q, kv, hb.B));
}

Mat Summarizer::summarize_values(const HistoryBatch& hb) const {
  NoGradGuard ng;
  return summarize(hb).value();
}

PretrainTerms Summarizer::pretrain_loss(const HistoryBatch& hb, const Tensor& E, const ProxySignals& p) const {
  require(hb.ell == cfg_.ell, Errc::shape, "reconstruction heads are sized for a different history length");
  const Tensor pooled = group_mean(E, cfg_.S);
  const int cells = hb.ell * hb.N;
  const Eigen::Index rows = static_cast<Eigen::Index>(hb.B) * cells;
  Tensor xh = reshape(head_x_(pooled), rows, hb.d);
  Tensor lx = masked_mse(xh, hb.X, hb.M);
  const auto tm = time_major_index(hb.B, hb.ell, hb.N);
  const Mat v_target = take_rows(p.V.value(), tm);
  const Mat t_target = take_rows(p.T.value(), tm);
  Tensor lv = mse(reshape(head_v_(pooled), rows, 1), v_target);
  Tensor lt = mse(reshape(head_t_(pooled), rows, 1), t_target);
  Mat dt(static_cast<Eigen::Index>(hb.B) * hb.ell, 1);
  for (Eigen::Index i = 0; i < dt.rows(); ++i) dt(i, 0) = hb.t_rel[static_cast<std::size_t>(i)] / cfg_.time_scale;
  Tensor ld = mse(reshape(head_dt_(pooled), dt.rows(), 1), dt);
  Tensor lm = mse(reshape(head_mask_(pooled), rows, hb.d), hb.M);
  const auto& w = cfg_.weights;
  PretrainTerms t;
  t.parts = {lx.item(), lv.item(), lt.item(), ld.item(), lm.item()};
  t.total = add(add(add(add(scale(lx, w[0]), scale(lv, w[1])), scale(lt, w[2])), scale(ld, w[3])), scale(lm, w[4]));
  return t;
}

SummarizerTrainConfig::SummarizerTrainConfig() : opt(codec::pretrain_optimizer(5e-4, 1e-4)) {}

std::array<double, 6> evaluate_pretrain(const Summarizer& s, const datagen::RatioIndexCache& cache,
                                        const std::vector<datagen::WindowRef>& refs, int batch) {
  NoGradGuard ng;
  std::array<double, 6> acc{};
  double nb = 0;
  for (std::size_t i = 0; i < refs.size(); i += static_cast<std::size_t>(batch)) {
    std::vector<datagen::WindowRef> part(refs.begin() + static_cast<long>(i),
                                         refs.begin() + static_cast<long>(std::min(refs.size(), i + batch)));
    const HistoryBatch hb = make_history_batch(cache, part);
    const ProxySignals p = s.proxy_signals(hb);
    const PretrainTerms t = s.pretrain_loss(hb, s.summarize(hb, p, nullptr), p);
    acc[0] += t.total.item();
    for (int k = 0; k < 5; ++k) acc[k + 1] += t.parts[k];
    nb += 1;
  }
  for (auto& a : acc) a /= std::max(nb, 1.0);
  return acc;
}

SummarizerTrainReport pretrain_summarizer(Summarizer& s, const datagen::RatioIndexCache& cache,
                                          const SummarizerTrainConfig& cfg) {
  require(cache.N == s.config().N && cache.d == s.config().d_x && cache.layout.ell == s.config().ell, Errc::config,
          "cache shape does not match the summarizer configuration");
  const auto train = cache.windows_in(datagen::Split::train);
  auto val_all = cache.windows_in(datagen::Split::val);
  require(!train.empty() && !val_all.empty(), Errc::validation, "summarizer training needs train and val windows");
  std::vector<datagen::WindowRef> val;
  const int nv = std::min<int>(cfg.val_windows, static_cast<int>(val_all.size()));
  for (int i = 0; i < nv; ++i) val.push_back(val_all[static_cast<std::size_t>(i) * val_all.size() / nv]);

  Rng order_rng(cfg.seed, "summarizer.order"), drop_rng(cfg.seed, "summarizer.dropout");
  SummarizerTrainReport rep;
  rep.init_val = evaluate_pretrain(s, cache, val, cfg.batch)[0];
  EarlyStopper stopper(cfg.patience, cfg.min_epochs);
  Stopwatch clock;
  std::vector<std::size_t> idx(train.size());
  long step = 0;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), order_rng.engine());
    const std::size_t take =
        cfg.windows_per_epoch > 0 ? std::min<std::size_t>(idx.size(), cfg.windows_per_epoch) : idx.size();
    double tot = 0.0;
    int nb = 0;
    for (std::size_t i = 0; i < take; i += static_cast<std::size_t>(cfg.batch)) {
      std::vector<datagen::WindowRef> part;
      for (std::size_t k = i; k < std::min(take, i + cfg.batch); ++k) part.push_back(train[idx[k]]);
      const HistoryBatch hb = make_history_batch(cache, part);
      if (hb.M.sum() == 0.0) continue;
      const ProxySignals p = s.proxy_signals(hb);
      const Tensor E = s.summarize(hb, p, s.config().dropout > 0.0 ? &drop_rng : nullptr);
      PretrainTerms t = s.pretrain_loss(hb, E, p);
      backward(t.total);
      const StepReport sr = adamw_step(s.store(), cfg.opt, step);
      s.store().zero_grad();
      if (!sr.applied) fail(Errc::nonfinite, "summarizer step rejected: " + sr.diagnostics);
      ++step;
      tot += t.total.item();
      ++nb;
    }
    const auto v = evaluate_pretrain(s, cache, val, cfg.batch);
    rep.history.push_back({static_cast<double>(epoch), nb ? tot / nb : 0.0, v[1], v[2], v[3], v[4], v[5]});
    rep.epochs = epoch + 1;
    if (stopper.update(epoch, v[0], s.store())) {
      rep.stopped_early = true;
      break;
    }
    if (clock.seconds() > cfg.time_budget_s) {
      rep.hit_time_budget = true;
      break;
    }
  }
  if (stopper.has_best()) s.store().load(stopper.best_params());
  rep.best_val = stopper.best();
  rep.best_epoch = stopper.best_epoch();
  rep.seconds = clock.seconds();
  return rep;
}

}  // namespace lld::summarizer
