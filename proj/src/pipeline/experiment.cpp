#include "pipeline/experiment.hpp"

#include <algorithm>
#include <cmath>

#include "common/checkpoint.hpp"
#include "common/error.hpp"
#include "common/rng.hpp"
#include "datagen/oracle.hpp"

namespace lld::pipeline {

namespace {

constexpr int kFormatVersion = 1;

nlohmann::json poles_json(const std::vector<modal::Pole>& p) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& x : p) a.push_back({x.rho, x.omega});
  return a;
}

std::vector<modal::Pole> poles_from(const nlohmann::json& a) {
  std::vector<modal::Pole> p;
  for (const auto& x : a) p.push_back({x.at(0).get<double>(), x.at(1).get<double>()});
  return p;
}

Mat stack(const std::vector<Mat>& parts) {
  Eigen::Index rows = 0;
  for (const auto& p : parts) rows += p.rows();
  Mat out(rows, parts.at(0).cols());
  Eigen::Index o = 0;
  for (const auto& p : parts) {
    out.middleRows(o, p.rows()) = p;
    o += p.rows();
  }
  return out;
}

nlohmann::json base_meta(const char* kind, const RunConfig& cfg) {
  return {{"kind", kind}, {"format_version", kFormatVersion}, {"config_hash", cfg.hash_hex()},
          {"preset", cfg.preset_name()}};
}

Checkpoint read_kind(const std::string& path, const char* kind) {
  Checkpoint ck = load_checkpoint(path);
  require(ck.meta.value("kind", "") == kind, Errc::config, path + " is not a " + kind + " checkpoint");
  return ck;
}

}  // namespace

nlohmann::json to_json(const Truth& t) {
  return {{"poles", poles_json(t.poles)},
          {"shifted_poles", poles_json(t.shifted_poles)},
          {"shift_time", t.shift_time},
          {"spec_hash", t.spec_hash}};
}

Truth truth_from_json(const nlohmann::json& j) {
  Truth t;
  t.poles = poles_from(j.at("poles"));
  t.shifted_poles = poles_from(j.at("shifted_poles"));
  t.shift_time = j.at("shift_time");
  t.spec_hash = j.at("spec_hash");
  return t;
}

datagen::SyntheticSpec synthetic_spec(const RunConfig& cfg, std::uint64_t seed) {
  auto s = datagen::default_benchmark(seed, static_cast<int>(cfg.get_int("data.d_y")));
  s.n_entities = static_cast<int>(cfg.get_int("data.n_entities"));
  s.T_total = static_cast<int>(cfg.get_int("data.T_total"));
  s.keep_prob = cfg.get_real("data.keep_prob");
  s.obs_noise_std = cfg.get_real("data.noise_std");
  s.gap_dist = renewal::GapDistribution::exponential(cfg.get_real("data.gap_rate"));
  s.kick_rate = cfg.get_real("data.kick_rate");
  s.kick_scale = cfg.get_real("data.kick_scale");
  s.entity_perturbation = cfg.get_real("data.entity_perturbation");
  return s;
}

datagen::CacheLayout cache_layout(const RunConfig& cfg) {
  datagen::CacheLayout l;
  l.ell = static_cast<int>(cfg.get_int("data.ell"));
  l.h = static_cast<int>(cfg.get_int("data.h"));
  l.resolution = cfg.get_real("data.resolution");
  const double tr = cfg.get_real("data.split_train"), va = cfg.get_real("data.split_val");
  require(tr > 0 && va > 0 && tr + va < 1.0, Errc::config, "split fractions must leave a nonempty test split");
  l.ratios = {tr, va, 1.0 - tr - va};
  return l;
}

Dataset make_dataset(const RunConfig& cfg, std::uint64_t seed) {
  Dataset ds;
  ds.spec = synthetic_spec(cfg, seed);
  const double at = cfg.get_real("data.shift_at");
  if (at >= 0.0) {
    require(at < 1.0, Errc::config, "data.shift_at must lie in [0, 1)");
    // Event times do not depend on the shift, so a first pass locates it.
    const auto probe = datagen::generate_series(ds.spec, seed);
    datagen::RegimeShift rs;
    rs.shift_time = probe.times[static_cast<Eigen::Index>(std::floor(at * (ds.spec.T_total - 1)))];
    rs.freq_factor = cfg.get_real("data.shift_freq_factor");
    rs.decay_factor = cfg.get_real("data.shift_decay_factor");
    ds.spec.regime_shift = rs;
  }
  const auto series = datagen::generate_series(ds.spec, seed);
  ds.cache = datagen::build_cache(series, ds.spec, cache_layout(cfg));
  const double cov = cfg.get_real("data.min_coverage");
  if (cov > 0.0) ds.cache = datagen::induce_missingness(ds.cache, cov);
  ds.truth.poles = ds.spec.true_modes.poles();
  ds.truth.shifted_poles = ds.truth.poles;
  if (ds.spec.regime_shift) {
    ds.truth.shift_time = ds.spec.regime_shift->shift_time;
    for (auto& p : ds.truth.shifted_poles) {
      p.rho *= ds.spec.regime_shift->decay_factor;
      p.omega *= ds.spec.regime_shift->freq_factor;
    }
  }
  ds.truth.spec_hash = datagen::spec_hash(ds.spec);
  return ds;
}

codec::VaeConfig vae_config(const RunConfig& cfg, int N, int d_y) {
  codec::VaeConfig c;
  c.d_y = d_y;
  c.N = N;
  c.d_z = static_cast<int>(cfg.get_int("vae.d_z"));
  c.d_model = static_cast<int>(cfg.get_int("vae.d_model"));
  c.ffn = static_cast<int>(cfg.get_int("vae.ffn"));
  c.layers = static_cast<int>(cfg.get_int("vae.layers"));
  c.heads = static_cast<int>(cfg.get_int("vae.heads"));
  c.dropout = cfg.get_real("vae.dropout");
  c.h_max = static_cast<int>(cfg.get_int("vae.h_max"));
  return c;
}

codec::VaeTrainConfig vae_train_config(const RunConfig& cfg, std::uint64_t seed) {
  codec::VaeTrainConfig t;
  t.opt = codec::pretrain_optimizer(cfg.get_real("vae.lr"), cfg.get_real("vae.weight_decay"));
  t.opt.clip = cfg.get_real("vae.clip");
  t.beta = cfg.get_real("vae.beta");
  t.kl_warmup = cfg.get_real("vae.kl_warmup");
  t.kl_anneal_epochs = cfg.get_real("vae.kl_anneal");
  t.min_epochs = static_cast<int>(cfg.get_int("vae.min_epochs"));
  t.patience = static_cast<int>(cfg.get_int("vae.patience"));
  t.max_epochs = static_cast<int>(cfg.get_int("vae.max_epochs"));
  t.batch = static_cast<int>(cfg.get_int("vae.batch"));
  t.windows_per_epoch = static_cast<int>(cfg.get_int("vae.windows_per_epoch"));
  t.time_budget_s = cfg.get_real("vae.time_budget_s");
  t.seed = seed;
  return t;
}

summarizer::SummarizerConfig summarizer_config(const RunConfig& cfg, int N, int d_x, int ell) {
  summarizer::SummarizerConfig c;
  c.d_x = d_x;
  c.N = N;
  c.ell = ell;
  c.ell_max = std::max(ell, 256);
  c.d_mix = static_cast<int>(cfg.get_int("sum.d_mix"));
  c.d_t = static_cast<int>(cfg.get_int("sum.d_t"));
  c.layers = static_cast<int>(cfg.get_int("sum.layers"));
  c.heads = static_cast<int>(cfg.get_int("sum.heads"));
  c.ffn = static_cast<int>(cfg.get_int("sum.ffn"));
  c.proxy_hidden = static_cast<int>(cfg.get_int("sum.proxy_hidden"));
  c.d_ctx = static_cast<int>(cfg.get_int("sum.d_ctx"));
  c.S = static_cast<int>(cfg.get_int("sum.S"));
  c.dropout = cfg.get_real("sum.dropout");
  const double ts = cfg.get_real("sum.time_scale");
  c.time_scale = ts > 0.0 ? ts : static_cast<double>(ell);
  const auto w = cfg.get_list("sum.loss_weights");
  require(w.size() == 5, Errc::config, "sum.loss_weights needs five entries");
  std::copy(w.begin(), w.end(), c.weights.begin());
  return c;
}

summarizer::SummarizerTrainConfig summarizer_train_config(const RunConfig& cfg, std::uint64_t seed) {
  summarizer::SummarizerTrainConfig t;
  t.opt = codec::pretrain_optimizer(cfg.get_real("sum.lr"), cfg.get_real("sum.weight_decay"));
  t.opt.clip = cfg.get_real("sum.clip");
  t.max_epochs = static_cast<int>(cfg.get_int("sum.max_epochs"));
  t.patience = static_cast<int>(cfg.get_int("sum.patience"));
  t.batch = static_cast<int>(cfg.get_int("sum.batch"));
  t.windows_per_epoch = static_cast<int>(cfg.get_int("sum.windows_per_epoch"));
  t.time_budget_s = cfg.get_real("sum.time_budget_s");
  t.seed = seed;
  return t;
}

denoiser::DenoiserConfig denoiser_config(const RunConfig& cfg, int d_z, int d_ctx, int S) {
  require(cfg.get("diff.prediction") == "x0", Errc::unsupported_method, "only x0 prediction is implemented");
  require(cfg.get("diff.schedule") == "cosine", Errc::unsupported_method, "only the cosine schedule is implemented");
  require(cfg.get("diff.loss_weighting") == "weighted_min_snr", Errc::unsupported_method,
          "only weighted_min_snr loss weighting is implemented");
  denoiser::DenoiserConfig c;
  c.d_z = d_z;
  c.d_ctx = d_ctx;
  c.S = S;
  c.K = static_cast<int>(cfg.get_int("diff.K"));
  c.d_model = static_cast<int>(cfg.get_int("diff.d_model"));
  c.L = static_cast<int>(cfg.get_int("diff.L"));
  c.heads = static_cast<int>(cfg.get_int("diff.heads"));
  c.ffn = static_cast<int>(cfg.get_int("diff.ffn"));
  c.time_features = static_cast<int>(cfg.get_int("diff.time_features"));
  c.T = static_cast<int>(cfg.get_int("diff.T"));
  c.rho_min = cfg.get_real("diff.rho_min");
  c.omega_max = cfg.get_real("diff.omega_max");
  c.tanh_scale_rho = cfg.get_real("diff.tanh_scale_rho");
  c.tanh_scale_omega = cfg.get_real("diff.tanh_scale_omega");
  return c;
}

diffusion::DiffusionTrainConfig diffusion_train_config(const RunConfig& cfg, std::uint64_t seed) {
  diffusion::DiffusionTrainConfig t;
  t.max_epochs = static_cast<int>(cfg.get_int("diff.max_epochs"));
  t.windows_per_epoch = static_cast<int>(cfg.get_int("diff.windows_per_epoch"));
  t.batch = static_cast<int>(cfg.get_int("diff.batch"));
  t.gamma = cfg.get_real("diff.gamma");
  t.p_uncond = cfg.get_real("diff.p_uncond");
  t.ema = cfg.get_real("diff.ema");
  t.patience = static_cast<int>(cfg.get_int("diff.patience"));
  t.time_budget_s = cfg.get_real("diff.time_budget_s");
  t.opt.lr = cfg.get_real("diff.lr");
  t.opt.min_lr = cfg.get_real("diff.min_lr");
  t.opt.warmup_fraction = cfg.get_real("diff.warmup");
  t.opt.weight_decay = cfg.get_real("diff.weight_decay");
  t.opt.clip = cfg.get_real("diff.clip");
  const auto& sched = cfg.get("diff.lr_schedule");
  require(sched == "warmup_constant" || sched == "constant", Errc::config, "unknown learning-rate schedule " + sched);
  t.opt.schedule = sched == "constant" ? ad::Schedule::constant : ad::Schedule::warmup_constant;
  t.seed = seed;
  return t;
}

diffusion::SampleConfig sample_config(const RunConfig& cfg, std::uint64_t seed) {
  require(cfg.get("sample.sampler") == "ddim", Errc::unsupported_method, "only the DDIM sampler is implemented");
  require(cfg.get("sample.step_schedule") == "karras", Errc::unsupported_method,
          "only the karras step schedule is implemented");
  diffusion::SampleConfig s;
  s.n_steps = static_cast<int>(cfg.get_int("sample.steps"));
  s.eta = cfg.get_real("sample.eta");
  s.guidance_w = cfg.get_real("sample.guidance");
  s.karras_rho = cfg.get_real("sample.karras_rho");
  s.threshold = cfg.get_bool("sample.threshold");
  s.threshold_p = cfg.get_real("sample.threshold_p");
  s.threshold_max = cfg.get_real("sample.threshold_max");
  s.n_samples = static_cast<int>(cfg.get_int("sample.n_samples"));
  s.fixed_poles = cfg.get_bool("sample.fixed_poles");
  s.audit_every_step = cfg.get_bool("sample.audit_every_step");
  s.seed = seed;
  return s;
}

nlohmann::json EvalReport::to_json() const {
  return {{"windows", windows},
          {"crps", crps},
          {"mae", mae},
          {"mse", mse},
          {"oracle_crps", oracle_crps},
          {"min_rho", min_rho},
          {"envelope_checks", envelope_checks},
          {"envelope_violations", envelope_violations},
          {"denoiser_calls", denoiser_calls},
          {"crps_estimator", "(1/m) sum|x_i - y| - (1/(2 m^2)) sum_ij |x_i - x_j|, unnormalized, standardized units"},
          {"aggregation", "mean over windows of per-window observed-entry means"}};
}

Models Models::fresh(const RunConfig& cfg, int N, int d_y, int ell, std::uint64_t seed) {
  Models m;
  m.vae = std::make_unique<codec::Vae>(vae_config(cfg, N, d_y), derive_seed(seed, "model.vae"));
  m.summarizer = std::make_unique<summarizer::Summarizer>(summarizer_config(cfg, N, d_y, ell),
                                                          derive_seed(seed, "model.summarizer"));
  const auto& sc = m.summarizer->config();
  m.denoiser = std::make_unique<denoiser::Denoiser>(denoiser_config(cfg, m.vae->config().d_z, sc.d_ctx, sc.S),
                                                    derive_seed(seed, "model.denoiser"));
  m.schedule = diffusion::cosine_schedule(m.denoiser->config().T);
  return m;
}

codec::VaeTrainReport Models::pretrain_vae(const RunConfig& cfg, const datagen::RatioIndexCache& cache,
                                           std::uint64_t seed) {
  return codec::pretrain_vae(*vae, cache, vae_train_config(cfg, derive_seed(seed, "train.vae")));
}

summarizer::SummarizerTrainReport Models::pretrain_summarizer(const RunConfig& cfg,
                                                              const datagen::RatioIndexCache& cache,
                                                              std::uint64_t seed) {
  return summarizer::pretrain_summarizer(*summarizer, cache,
                                         summarizer_train_config(cfg, derive_seed(seed, "train.summarizer")));
}

diffusion::TrainingSet Models::training_set(const datagen::RatioIndexCache& cache,
                                            const std::vector<datagen::WindowRef>& refs) const {
  diffusion::TrainingSet ts;
  const int h = cache.layout.h;
  const std::size_t chunk = 32;
  for (std::size_t s = 0; s < refs.size(); s += chunk) {
    std::vector<datagen::WindowSlice> ws;
    for (std::size_t i = s; i < std::min(refs.size(), s + chunk); ++i) ws.push_back(datagen::slice(cache, refs[i]));
    const int B = static_cast<int>(ws.size());
    std::vector<Mat> ys, ms;
    for (const auto& w : ws) {
      ys.push_back(w.y);
      ms.push_back(w.y_mask);
    }
    const Mat mu = vae->encode_mean(stack(ys), stack(ms), B, h) / latent_scale;
    const Mat E = summarizer->summarize_values(summarizer::make_history_batch(ws));
    const int S = summarizer->config().S;
    for (int b = 0; b < B; ++b) {
      const auto& w = ws[static_cast<std::size_t>(b)];
      ts.z0.push_back(mu.middleRows(static_cast<Eigen::Index>(b) * h, h));
      ts.E.push_back(E.middleRows(static_cast<Eigen::Index>(b) * S, S));
      std::vector<double> t(w.query_times.size());
      for (std::size_t r = 0; r < t.size(); ++r) t[r] = w.query_times[r] - w.query_times[0];
      ts.times.push_back(std::move(t));
      ts.anchor.push_back(w.query_times[0] - w.context_end());
    }
  }
  return ts;
}

diffusion::DiffusionTrainReport Models::train_diffusion(const RunConfig& cfg, const datagen::RatioIndexCache& cache,
                                                        std::uint64_t seed) {
  const auto train_refs = cache.windows_in(datagen::Split::train);
  const auto val_refs = evenly_spaced(cache.windows_in(datagen::Split::val), 64);
  require(!train_refs.empty() && !val_refs.empty(), Errc::validation, "diffusion training needs train and val windows");
  latent_scale = 1.0;
  diffusion::TrainingSet train = training_set(cache, train_refs);
  // One global scale puts the frozen latents near unit variance.
  double ss = 0.0, cnt = 0.0;
  for (const auto& z : train.z0) {
    ss += z.squaredNorm();
    cnt += static_cast<double>(z.size());
  }
  latent_scale = std::sqrt(ss / std::max(cnt, 1.0));
  require(latent_scale > 0.0 && std::isfinite(latent_scale), Errc::nonfinite, "degenerate latent scale");
  for (auto& z : train.z0) z /= latent_scale;
  const diffusion::TrainingSet val = training_set(cache, val_refs);
  return diffusion::train_diffusion(*denoiser, train, val, schedule,
                                    diffusion_train_config(cfg, derive_seed(seed, "train.diffusion")));
}

Mat Models::summary(const datagen::WindowSlice& w) const {
  return summarizer->summarize_values(summarizer::make_history_batch(std::vector<datagen::WindowSlice>{w}));
}

std::vector<Mat> Models::sample_values(const Mat& E, const std::vector<double>& query_times, double context_end,
                                       const diffusion::SampleConfig& sc, diffusion::SampleResult* out) const {
  require(!query_times.empty(), Errc::validation, "no query times");
  std::vector<double> t(query_times.size());
  for (std::size_t r = 0; r < t.size(); ++r) t[r] = query_times[r] - query_times[0];
  auto res = diffusion::sample(*denoiser, E, t, query_times[0] - context_end, schedule, sc);
  const int m = static_cast<int>(res.z0.size()), h = static_cast<int>(t.size());
  const Mat dec = vae->decode_values(stack(res.z0) * latent_scale, m, h);
  const Eigen::Index per = static_cast<Eigen::Index>(h) * vae->config().N;
  std::vector<Mat> vals;
  for (int j = 0; j < m; ++j) vals.push_back(dec.middleRows(static_cast<Eigen::Index>(j) * per, per));
  if (out) *out = std::move(res);
  return vals;
}

WindowForecast Models::forecast(const datagen::WindowSlice& w, const diffusion::SampleConfig& sc) const {
  WindowForecast f;
  f.window = w;
  f.bundle.samples = sample_values(summary(w), w.query_times, w.context_end(), sc, &f.result);
  f.bundle.target = w.y;
  f.bundle.mask = w.y_mask;
  return f;
}

EvalReport Models::evaluate(const datagen::RatioIndexCache& cache, const std::vector<datagen::WindowRef>& refs,
                            const diffusion::SampleConfig& sc, const std::vector<modal::Pole>* oracle_poles) const {
  require(!refs.empty(), Errc::validation, "no windows to evaluate");
  EvalReport rep;
  rep.min_rho = std::numeric_limits<double>::infinity();
  for (const auto& ref : refs) {
    const auto w = datagen::slice(cache, ref);
    const auto f = forecast(w, sc);
    const double c = metrics::bundle_crps(f.bundle);
    const auto pm = metrics::masked_point_metrics(f.bundle);
    rep.crps += c;
    rep.mae += pm.mae;
    rep.mse += pm.mse;
    rep.window_crps.push_back(c);
    rep.window_start.push_back(ref.start_idx);
    rep.min_rho = std::min(rep.min_rho, f.result.min_rho);
    rep.envelope_checks += f.result.envelope_checks;
    rep.envelope_violations += f.result.envelope_violations;
    rep.denoiser_calls += f.result.denoiser_calls;
    if (oracle_poles) {
      const double o = datagen::oracle_forecast(w, *oracle_poles, cache.mean, cache.std).crps_floor;
      rep.oracle_crps += o;
      rep.window_oracle.push_back(o);
    }
    ++rep.windows;
  }
  const double n = static_cast<double>(rep.windows);
  rep.crps /= n;
  rep.mae /= n;
  rep.mse /= n;
  rep.oracle_crps /= n;
  return rep;
}

void Models::save_vae(const std::string& path, const RunConfig& cfg, const nlohmann::json& extra) const {
  Checkpoint ck;
  ck.meta = base_meta("vae", cfg);
  ck.meta["config"] = codec::to_json(vae->config());
  ck.meta["ema"] = false;
  ck.meta["recon_normalization"] = "per batch over all observed entries";
  ck.meta["extra"] = extra;
  ck.arrays = vae->store().snapshot();
  save_checkpoint(path, ck);
}

void Models::save_summarizer(const std::string& path, const RunConfig& cfg, const nlohmann::json& extra) const {
  Checkpoint ck;
  ck.meta = base_meta("summarizer", cfg);
  ck.meta["config"] = summarizer::to_json(summarizer->config());
  ck.meta["ema"] = false;
  ck.meta["extra"] = extra;
  ck.arrays = summarizer->store().snapshot();
  save_checkpoint(path, ck);
}

void Models::save_diffusion(const std::string& path, const RunConfig& cfg, const nlohmann::json& extra) const {
  Checkpoint ck;
  ck.meta = base_meta("diffusion", cfg);
  ck.meta["config"] = denoiser::to_json(denoiser->config());
  ck.meta["latent_scale"] = latent_scale;
  ck.meta["ema"] = true;
  ck.meta["loss_weight"] = "min(SNR, gamma) / SNR on x0 error";
  ck.meta["guidance_power"] = cfg.get_real("sample.guidance_power");
  ck.meta["extra"] = extra;
  ck.arrays = denoiser->store().snapshot();
  save_checkpoint(path, ck);
}

void Models::load_vae(const std::string& path) {
  const Checkpoint ck = read_kind(path, "vae");
  vae = std::make_unique<codec::Vae>(codec::vae_config_from_json(ck.meta.at("config")), 0);
  vae->store().load(ck.arrays);
}

void Models::load_summarizer(const std::string& path) {
  const Checkpoint ck = read_kind(path, "summarizer");
  summarizer = std::make_unique<summarizer::Summarizer>(
      summarizer::summarizer_config_from_json(ck.meta.at("config")), 0);
  summarizer->store().load(ck.arrays);
}

void Models::load_diffusion(const std::string& path) {
  const Checkpoint ck = read_kind(path, "diffusion");
  const auto dc = denoiser::denoiser_config_from_json(ck.meta.at("config"));
  if (vae) require(dc.d_z == vae->config().d_z, Errc::config, "denoiser latent width differs from the VAE");
  if (summarizer)
    require(dc.d_ctx == summarizer->config().d_ctx && dc.S == summarizer->config().S, Errc::config,
            "denoiser context shape differs from the summarizer");
  denoiser = std::make_unique<denoiser::Denoiser>(dc, 0);
  denoiser->store().load(ck.arrays);
  latent_scale = ck.meta.at("latent_scale");
  schedule = diffusion::cosine_schedule(dc.T);
}

std::vector<datagen::WindowRef> evenly_spaced(const std::vector<datagen::WindowRef>& v, int n) {
  if (n <= 0 || static_cast<int>(v.size()) <= n) return v;
  std::vector<datagen::WindowRef> out;
  for (int i = 0; i < n; ++i) out.push_back(v[static_cast<std::size_t>(i) * v.size() / static_cast<std::size_t>(n)]);
  return out;
}

double median_nearest_pole_error(const std::vector<Mat>& cond_omegas, const std::vector<double>& true_omegas) {
  std::vector<double> errs;
  for (const auto& om : cond_omegas)
    for (Eigen::Index r = 0; r < om.rows(); ++r)
      for (double w : true_omegas) errs.push_back((om.row(r).array() - w).abs().minCoeff());
  return metrics::median(errs);
}

}  // namespace lld::pipeline
