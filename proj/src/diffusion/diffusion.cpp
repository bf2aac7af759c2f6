#include "diffusion/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ad/training.hpp"
#include "common/error.hpp"

namespace lld::diffusion {

using namespace lld::ad;

double NoiseSchedule::sigma(int tau) const {
  const double a = alpha_bar.at(static_cast<std::size_t>(tau));
  return std::sqrt((1.0 - a) / a);
}

double NoiseSchedule::snr(int tau) const {
  const double a = alpha_bar.at(static_cast<std::size_t>(tau));
  return a / (1.0 - a);
}

NoiseSchedule cosine_schedule(int T, double offset, double max_beta) {
  require(T >= 1, Errc::validation, "schedule needs T >= 1");
  auto f = [&](double t) {
    const double c = std::cos(((t / T + offset) / (1.0 + offset)) * M_PI / 2.0);
    return c * c;
  };
  NoiseSchedule s;
  s.T = T;
  s.alpha_bar.resize(static_cast<std::size_t>(T) + 1);
  s.alpha_bar[0] = 1.0;
  const double f0 = f(0.0);
  double prev_raw = 1.0;
  for (int t = 1; t <= T; ++t) {
    const double raw = f(t) / f0;
    const double beta = std::min(1.0 - raw / prev_raw, max_beta);
    s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - beta);
    prev_raw = raw;
  }
  return s;
}

Mat forward_diffuse(const Mat& z0, int tau, const Mat& noise, const NoiseSchedule& s) {
  require(tau >= 0 && tau <= s.T, Errc::validation, "diffusion step out of range");
  require(noise.rows() == z0.rows() && noise.cols() == z0.cols(), Errc::shape, "noise shape differs from z0");
  if (tau == 0) return z0;
  const double a = s.alpha_bar[tau];
  return std::sqrt(a) * z0 + std::sqrt(1.0 - a) * noise;
}

double min_snr_weight(double snr, double gamma) {
  require(snr > 0.0 && gamma > 0.0, Errc::validation, "SNR and gamma must be positive");
  return std::min(snr, gamma) / snr;
}

std::vector<int> select_steps_karras(int n_steps, const NoiseSchedule& s, double rho) {
  require(n_steps >= 1 && n_steps <= s.T, Errc::validation, "step count must lie in [1, T]");
  if (n_steps == 1) return {s.T};
  std::vector<double> logsig(static_cast<std::size_t>(s.T) + 1);
  for (int t = 1; t <= s.T; ++t) logsig[t] = std::log(s.sigma(t));
  const double smax = s.sigma(s.T), smin = s.sigma(1);
  const double a = std::pow(smax, 1.0 / rho), b = std::pow(smin, 1.0 / rho);
  std::vector<int> out{s.T};
  for (int i = 1; i < n_steps; ++i) {
    const double sig = std::pow(a + (static_cast<double>(i) / (n_steps - 1)) * (b - a), rho);
    const double ls = std::log(sig);
    int best = s.T;
    double bd = std::abs(logsig[s.T] - ls);
    for (int t = s.T - 1; t >= 1; --t) {
      const double d = std::abs(logsig[t] - ls);
      if (d < bd) {  // strict: ties keep the larger step
        bd = d;
        best = t;
      }
    }
    if (best < out.back()) out.push_back(best);
  }
  return out;
}

Mat ddim_step(const Mat& z_tau, const Mat& z0_hat, int tau, int tau_prev, const NoiseSchedule& s) {
  require(tau >= 1 && tau <= s.T && tau_prev >= 0 && tau_prev < tau, Errc::validation,
          "DDIM step needs 0 <= tau_prev < tau <= T");
  const double a = s.alpha_bar[tau], ap = s.alpha_bar[tau_prev];
  const Mat eps = (z_tau - std::sqrt(a) * z0_hat) / std::sqrt(1.0 - a);
  if (tau_prev == 0) return z0_hat;
  return std::sqrt(ap) * z0_hat + std::sqrt(1.0 - ap) * eps;
}

Mat cfg_combine(const Mat& cond, const Mat& uncond, double w) {
  require(cond.rows() == uncond.rows() && cond.cols() == uncond.cols(), Errc::shape, "guidance branches differ in shape");
  if (w == 1.0) return cond;
  if (w == 0.0) return uncond;
  return w * cond + (1.0 - w) * uncond;
}

double quantile(std::vector<double> v, double p) {
  require(!v.empty() && p >= 0.0 && p <= 1.0, Errc::validation, "quantile needs data and p in [0, 1]");
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

Mat dynamic_threshold(const Mat& z0, double p, double max_val) {
  require(p > 0.0 && p <= 1.0, Errc::validation, "threshold quantile must lie in (0, 1]");
  std::vector<double> a(static_cast<std::size_t>(z0.size()));
  for (Eigen::Index i = 0; i < z0.size(); ++i) a[static_cast<std::size_t>(i)] = std::abs(z0.data()[i]);
  const double s = std::max(quantile(std::move(a), p), max_val);
  return z0.cwiseMax(-s).cwiseMin(s);
}

namespace {

Mat stack_rows(const std::vector<Mat>& parts) {
  Eigen::Index rows = 0;
  for (const auto& p : parts) rows += p.rows();
  Mat out(rows, parts.empty() ? 0 : parts[0].cols());
  Eigen::Index o = 0;
  for (const auto& p : parts) {
    out.middleRows(o, p.rows()) = p;
    o += p.rows();
  }
  return out;
}

Mat normal_mat(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

Tensor weighted_x0_loss(const Tensor& pred, const Mat& target, const std::vector<double>& row_w, double denom) {
  Mat w(static_cast<Eigen::Index>(row_w.size()), 1);
  for (std::size_t i = 0; i < row_w.size(); ++i) w(static_cast<Eigen::Index>(i), 0) = row_w[i];
  return scale(sum(mul(square(sub(pred, constant(target))), constant(w))), 1.0 / denom);
}

}  // namespace

StepOutcome training_step(denoiser::Denoiser& den, const TrainingSet& data, const std::vector<std::size_t>& batch,
                          const NoiseSchedule& s, const DiffusionTrainConfig& cfg, Rng& rng, long step) {
  require(cfg.gamma > 0.0 && cfg.p_uncond >= 0.0 && cfg.p_uncond <= 1.0, Errc::config,
          "invalid min-SNR cap or drop probability");
  const int B = static_cast<int>(batch.size());
  require(B >= 1, Errc::validation, "empty diffusion batch");
  denoiser::DenoiseInput in;
  std::vector<Mat> zt, z0, E;
  std::vector<bool> drop(static_cast<std::size_t>(B));
  std::vector<double> row_w;
  StepOutcome out;
  for (int b = 0; b < B; ++b) {
    const std::size_t i = batch[static_cast<std::size_t>(b)];
    const int tau = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(s.T)));
    const Mat eps = normal_mat(data.z0[i].rows(), data.z0[i].cols(), rng);
    drop[static_cast<std::size_t>(b)] = rng.bernoulli(cfg.p_uncond);
    out.dropped += drop[static_cast<std::size_t>(b)] ? 1 : 0;
    zt.push_back(forward_diffuse(data.z0[i], tau, eps, s));
    z0.push_back(data.z0[i]);
    E.push_back(data.E[i]);
    in.tau.push_back(tau);
    in.times.push_back(data.times[i]);
    in.anchor.push_back(data.anchor[i]);
    const double w = min_snr_weight(s.snr(tau), cfg.gamma);
    for (Eigen::Index r = 0; r < data.z0[i].rows(); ++r) row_w.push_back(w);
  }
  in.z_tau = stack_rows(zt);
  in.context = den.context(stack_rows(E), drop);
  const Mat target = stack_rows(z0);
  const auto res = den.denoise(in);
  Tensor loss = weighted_x0_loss(res.z0, target, row_w, static_cast<double>(target.size()));
  out.loss = loss.item();
  if (!std::isfinite(out.loss)) {
    out.diagnostics = "non-finite diffusion loss";
    return out;
  }
  backward(loss);
  const StepReport sr = adamw_step(den.store(), cfg.opt, step);
  den.store().zero_grad();
  out.applied = sr.applied;
  out.diagnostics = sr.diagnostics;
  if (sr.applied) ema_update(den.store(), cfg.ema);
  return out;
}

double validation_loss(const denoiser::Denoiser& den, const TrainingSet& data, const NoiseSchedule& s, double gamma,
                       std::uint64_t seed) {
  NoGradGuard ng;
  Rng rng(seed, "diffusion.val");
  double tot = 0.0;
  const std::size_t chunk = 32;
  for (std::size_t st = 0; st < data.size(); st += chunk) {
    denoiser::DenoiseInput in;
    std::vector<Mat> zt, z0, E;
    std::vector<double> row_w;
    const std::size_t en = std::min(data.size(), st + chunk);
    for (std::size_t i = st; i < en; ++i) {
      const int tau = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(s.T)));
      const Mat eps = normal_mat(data.z0[i].rows(), data.z0[i].cols(), rng);
      zt.push_back(forward_diffuse(data.z0[i], tau, eps, s));
      z0.push_back(data.z0[i]);
      E.push_back(data.E[i]);
      in.tau.push_back(tau);
      in.times.push_back(data.times[i]);
      in.anchor.push_back(data.anchor[i]);
      const double w = min_snr_weight(s.snr(tau), gamma);
      for (Eigen::Index r = 0; r < data.z0[i].rows(); ++r) row_w.push_back(w);
    }
    in.z_tau = stack_rows(zt);
    in.context = den.context(stack_rows(E), std::vector<bool>(en - st, false));
    const Mat target = stack_rows(z0);
    const auto res = den.denoise(in);
    tot += weighted_x0_loss(res.z0, target, row_w, static_cast<double>(target.size())).item() *
           static_cast<double>(en - st);
  }
  return tot / static_cast<double>(std::max<std::size_t>(data.size(), 1));
}

DiffusionTrainReport train_diffusion(denoiser::Denoiser& den, const TrainingSet& train, const TrainingSet& val,
                                     const NoiseSchedule& s, DiffusionTrainConfig cfg) {
  require(train.size() > 0 && val.size() > 0, Errc::validation, "diffusion training needs train and val windows");
  require(cfg.batch >= 1 && cfg.max_epochs >= 1, Errc::config, "diffusion training needs batch and epochs >= 1");
  const std::size_t per_epoch = cfg.windows_per_epoch > 0
                                    ? std::min<std::size_t>(train.size(), static_cast<std::size_t>(cfg.windows_per_epoch))
                                    : train.size();
  const long batches = static_cast<long>((per_epoch + cfg.batch - 1) / cfg.batch);
  cfg.opt.max_steps = std::max<long>(1, batches * cfg.max_epochs);
  den.store().copy_live_to_shadow();

  Rng order_rng(cfg.seed, "diffusion.order"), step_rng(cfg.seed, "diffusion.train");
  DiffusionTrainReport rep;
  EarlyStopper stopper(cfg.patience, cfg.min_epochs);
  Stopwatch clock;
  std::vector<std::size_t> idx(train.size());
  long consecutive_rejects = 0;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), order_rng.engine());
    double tot = 0.0;
    long nb = 0;
    for (std::size_t st = 0; st < per_epoch; st += static_cast<std::size_t>(cfg.batch)) {
      std::vector<std::size_t> part(idx.begin() + static_cast<long>(st),
                                    idx.begin() + static_cast<long>(std::min(per_epoch, st + cfg.batch)));
      const StepOutcome o = training_step(den, train, part, s, cfg, step_rng, rep.steps);
      rep.seen += static_cast<long>(part.size());
      rep.dropped += o.dropped;
      if (!o.applied) {
        ++rep.rejected;
        if (++consecutive_rejects > 20) fail(Errc::divergence, "diffusion training diverged: " + o.diagnostics);
        continue;
      }
      consecutive_rejects = 0;
      ++rep.steps;
      tot += o.loss;
      ++nb;
    }
    rep.epochs = epoch + 1;
    const bool last = clock.seconds() > cfg.time_budget_s || epoch + 1 == cfg.max_epochs;
    double v = std::numeric_limits<double>::quiet_NaN();
    if ((epoch + 1) % std::max(cfg.val_every, 1) == 0 || last) {
      den.store().swap_shadow();
      v = validation_loss(den, val, s, cfg.gamma, cfg.seed);
      const bool stop = stopper.update(epoch, v, den.store());
      den.store().swap_shadow();
      rep.history.push_back({static_cast<double>(epoch), nb ? tot / static_cast<double>(nb) : 0.0, v});
      if (stop) {
        rep.stopped_early = true;
        break;
      }
    }
    if (clock.seconds() > cfg.time_budget_s) {
      rep.hit_time_budget = true;
      break;
    }
  }
  if (stopper.has_best())
    den.store().load(stopper.best_params());
  else
    den.store().swap_shadow();
  rep.best_val = stopper.best();
  rep.best_epoch = stopper.best_epoch();
  rep.seconds = clock.seconds();
  return rep;
}

SampleResult sample(const denoiser::Denoiser& den, const Mat& E, const std::vector<double>& times, double anchor,
                    const NoiseSchedule& s, const SampleConfig& cfg) {
  require(cfg.eta == 0.0, Errc::unsupported_method, "only deterministic sampling (eta = 0) is implemented");
  require(cfg.n_samples >= 1, Errc::validation, "need at least one sample");
  require(!times.empty(), Errc::validation, "need at least one query time");
  const auto& dc = den.config();
  require(E.rows() == dc.S && E.cols() == dc.d_ctx, Errc::config, "summary shape does not match the denoiser");
  NoGradGuard ng;
  const int m = cfg.n_samples, h = static_cast<int>(times.size());
  SampleResult res;
  res.steps = select_steps_karras(cfg.n_steps, s, cfg.karras_rho);
  Mat z(static_cast<Eigen::Index>(m) * h, dc.d_z);
  for (int j = 0; j < m; ++j) {
    Rng rng(cfg.seed, "diffusion.sample", static_cast<std::uint64_t>(j));
    z.middleRows(static_cast<Eigen::Index>(j) * h, h) = normal_mat(h, dc.d_z, rng);
  }
  Mat Etile(static_cast<Eigen::Index>(m) * dc.S, dc.d_ctx);
  for (int j = 0; j < m; ++j) Etile.middleRows(static_cast<Eigen::Index>(j) * dc.S, dc.S) = E;
  const Tensor cond_ctx = den.context(Etile, std::vector<bool>(static_cast<std::size_t>(m), false));
  const Tensor null_ctx = den.null_context(m);
  denoiser::DenoiseInput in;
  in.times.assign(static_cast<std::size_t>(m), times);
  in.anchor.assign(static_cast<std::size_t>(m), anchor);
  in.fixed_poles = cfg.fixed_poles;
  res.min_rho = std::numeric_limits<double>::infinity();
  const long calls0 = den.calls();

  auto audit = [&](const denoiser::DenoiseOutput& o) {
    const Mat& R = o.residues.value();
    const Mat& rho = o.poles.rho.value();
    const Mat& om = o.poles.omega.value();
    const int K = dc.K;
    for (int j = 0; j < m; ++j)
      for (int k = 0; k < K; ++k) {
        const double r = rho(j, k);
        for (int c = 0; c < dc.d_z; ++c) {
          const double a = R(j * 2 * K + k, c), b = R(j * 2 * K + K + k, c);
          const double amp = std::hypot(a, b);
          for (int t = 0; t < h; ++t) {
            const double tt = times[static_cast<std::size_t>(t)];
            const double env = std::exp(-r * tt);
            const double comp = env * (a * std::cos(om(j, k) * tt) + b * std::sin(om(j, k) * tt));
            ++res.envelope_checks;
            if (!(r > 0.0) || std::abs(comp) > env * amp * (1.0 + 1e-12) + 1e-300) ++res.envelope_violations;
          }
        }
      }
  };

  for (std::size_t i = 0; i < res.steps.size(); ++i) {
    const int tau = res.steps[i];
    const int tau_prev = i + 1 < res.steps.size() ? res.steps[i + 1] : 0;
    in.z_tau = z;
    in.tau.assign(static_cast<std::size_t>(m), tau);
    in.context = cond_ctx;
    const auto oc = den.denoise(in);
    in.context = null_ctx;
    const auto ou = den.denoise(in);
    res.min_rho = std::min({res.min_rho, oc.poles.rho.value().minCoeff(), ou.poles.rho.value().minCoeff()});
    if (cfg.audit_every_step || i + 1 == res.steps.size()) {
      audit(oc);
      audit(ou);
    }
    Mat z0 = cfg_combine(oc.z0.value(), ou.z0.value(), cfg.guidance_w);
    if (cfg.threshold)
      for (int j = 0; j < m; ++j) {
        auto blk = z0.middleRows(static_cast<Eigen::Index>(j) * h, h);
        blk = dynamic_threshold(blk, cfg.threshold_p, cfg.threshold_max);
      }
    z = ddim_step(z, z0, tau, tau_prev, s);
    if (i + 1 == res.steps.size()) {
      res.cond_rho = oc.poles.rho.value();
      res.cond_omega = oc.poles.omega.value();
    }
  }
  res.denoiser_calls = den.calls() - calls0;
  for (int j = 0; j < m; ++j) res.z0.push_back(z.middleRows(static_cast<Eigen::Index>(j) * h, h));
  return res;
}

}  // namespace lld::diffusion
