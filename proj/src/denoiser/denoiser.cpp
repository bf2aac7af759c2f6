#include "denoiser/denoiser.hpp"

#include <cmath>

#include "common/error.hpp"

namespace lld::denoiser {

using namespace lld::ad;

nlohmann::json to_json(const DenoiserConfig& c) {
  return {{"d_z", c.d_z},
          {"d_ctx", c.d_ctx},
          {"S", c.S},
          {"K", c.K},
          {"d_model", c.d_model},
          {"L", c.L},
          {"heads", c.heads},
          {"ffn", c.ffn},
          {"time_features", c.time_features},
          {"T", c.T},
          {"rho_min", c.rho_min},
          {"omega_max", c.omega_max},
          {"tanh_scale_rho", c.tanh_scale_rho},
          {"tanh_scale_omega", c.tanh_scale_omega},
          {"rho_init_lo", c.rho_init_lo},
          {"rho_init_hi", c.rho_init_hi},
          {"omega_init_lo", c.omega_init_lo}};
}

DenoiserConfig denoiser_config_from_json(const nlohmann::json& j) {
  DenoiserConfig c;
  c.d_z = j.at("d_z");
  c.d_ctx = j.at("d_ctx");
  c.S = j.at("S");
  c.K = j.at("K");
  c.d_model = j.at("d_model");
  c.L = j.at("L");
  c.heads = j.at("heads");
  c.ffn = j.at("ffn");
  c.time_features = j.at("time_features");
  c.T = j.at("T");
  c.rho_min = j.at("rho_min");
  c.omega_max = j.at("omega_max");
  c.tanh_scale_rho = j.at("tanh_scale_rho");
  c.tanh_scale_omega = j.at("tanh_scale_omega");
  c.rho_init_lo = j.at("rho_init_lo");
  c.rho_init_hi = j.at("rho_init_hi");
  c.omega_init_lo = j.at("omega_init_lo");
  return c;
}

Mat fourier_features(const std::vector<double>& x, int pairs, double f_lo, double f_hi) {
  Mat out(static_cast<Eigen::Index>(x.size()), 2 * pairs);
  for (int i = 0; i < pairs; ++i) {
    const double f = pairs == 1 ? f_lo : f_lo * std::pow(f_hi / f_lo, static_cast<double>(i) / (pairs - 1));
    for (std::size_t r = 0; r < x.size(); ++r) {
      out(static_cast<Eigen::Index>(r), i) = std::sin(f * x[r]);
      out(static_cast<Eigen::Index>(r), pairs + i) = std::cos(f * x[r]);
    }
  }
  return out;
}

Mat step_features(const std::vector<int>& tau, int dim, int T) {
  const int half = dim / 2;
  Mat out = Mat::Zero(static_cast<Eigen::Index>(tau.size()), dim);
  for (std::size_t r = 0; r < tau.size(); ++r) {
    const double t = 1000.0 * static_cast<double>(tau[r]) / static_cast<double>(T);
    for (int i = 0; i < half; ++i) {
      const double f = std::exp(-std::log(10000.0) * i / std::max(half, 1));
      out(static_cast<Eigen::Index>(r), i) = std::sin(f * t);
      out(static_cast<Eigen::Index>(r), half + i) = std::cos(f * t);
    }
  }
  return out;
}

namespace {

constexpr double kTimeFreqLo = 0.02, kTimeFreqHi = 3.0;

Mat uniform_mat(Eigen::Index r, Eigen::Index c, double lim, Rng& rng) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-lim, lim);
  return m;
}

std::vector<int> repeat_each(int B, int n) {
  std::vector<int> idx(static_cast<std::size_t>(B) * n);
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(b) * n + i] = b;
  return idx;
}

std::vector<int> tile(int B, int n) {
  std::vector<int> idx(static_cast<std::size_t>(B) * n);
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(b) * n + i] = i;
  return idx;
}

}  // namespace

Denoiser::Denoiser(const DenoiserConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  require(cfg.K >= 1 && cfg.d_z >= 1 && cfg.d_model >= 2 && cfg.S >= 1 && cfg.L >= 0, Errc::config,
          "invalid denoiser dimensions");
  require(cfg.d_model % cfg.heads == 0, Errc::config, "denoiser width must be divisible by the head count");
  require(cfg.rho_min > 0.0 && cfg.omega_max > 0.0, Errc::config, "pole bounds must be positive");
  require(cfg.rho_init_lo > 0.0 && cfg.rho_init_hi >= cfg.rho_init_lo, Errc::config, "invalid decay init range");
  Rng rng(seed, "denoiser.init");
  const int D = cfg.d_model, F = cfg.time_features;
  step_mlp_ = MLP(store_, "step", D, D, D, rng);
  anchor_mlp_ = MLP(store_, "anchor", 2 * F, D, D, rng);

  Mat rb(1, cfg.K), pb(1, cfg.K);
  const double lo = std::log(cfg.omega_init_lo), hi = std::log(0.95 * cfg.omega_max);
  for (int k = 0; k < cfg.K; ++k) {
    const double sp = rng.uniform(cfg.rho_init_lo, cfg.rho_init_hi);
    rb(0, k) = std::log(std::expm1(sp));
    const double om = std::exp(lo + (hi - lo) * (k + 0.5) / cfg.K);
    const double u = om / cfg.omega_max;
    pb(0, k) = std::log(u / (1.0 - u));
  }
  rho_base_ = store_.create("poles.rho_base", rb);
  phi_base_ = store_.create("poles.phi_base", pb);
  pole_mlp_ = MLP(store_, "poles.mlp", D + cfg.d_ctx, D, 2 * cfg.K, rng, Init::zeros);

  mode_query_ = MLP(store_, "res.mode", 2, D, D, rng);
  role_ = store_.create("res.role", uniform_mat(2, D, 0.5, rng));
  res_query_ = Linear(store_, "res.q", D, D, rng);
  time_key_ = Linear(store_, "res.k", 2 * F, D, rng);
  value_ = Linear(store_, "res.v", cfg.d_z, D, rng);
  res_out_ = Linear(store_, "res.out", D, cfg.d_z, rng);

  for (int l = 0; l < cfg.L; ++l) {
    const std::string p = "refine" + std::to_string(l);
    Block b;
    b.in = Linear(store_, p + ".in", cfg.d_z, D, rng);
    b.pos = store_.create(p + ".pos", uniform_mat(2 * cfg.K, D, 0.1, rng));
    b.ln_c = LayerNorm(store_, p + ".ln_c", D);
    b.cross = MultiHeadAttention(store_, p + ".cross", D, cfg.d_ctx, cfg.heads, rng, false);
    b.ln_s = LayerNorm(store_, p + ".ln_s", D);
    b.self = MultiHeadAttention(store_, p + ".self", D, D, cfg.heads, rng, false);
    b.ln_f = LayerNorm(store_, p + ".ln_f", D);
    b.ffn = MLP(store_, p + ".ffn", D, cfg.ffn, D, rng);
    b.out = Linear(store_, p + ".out", D, cfg.d_z, rng, Init::zeros);
    blocks_.push_back(std::move(b));
  }
  residual_ = MLP(store_, "residual", cfg.d_z, D, cfg.d_z, rng, Init::zeros);
  null_ = store_.create("null_tokens", uniform_mat(cfg.S, cfg.d_ctx, 0.5, rng));
}

Tensor Denoiser::context(const Mat& summaries, const std::vector<bool>& drop) const {
  const int B = static_cast<int>(drop.size());
  require(summaries.rows() == static_cast<Eigen::Index>(B) * cfg_.S && summaries.cols() == cfg_.d_ctx, Errc::shape,
          "summary tokens do not match (B*S) x d_ctx");
  std::vector<int> idx(static_cast<std::size_t>(B) * cfg_.S);
  for (int b = 0; b < B; ++b)
    for (int s = 0; s < cfg_.S; ++s) idx[static_cast<std::size_t>(b) * cfg_.S + s] = drop[b] ? B * cfg_.S + s : b * cfg_.S + s;
  return gather_rows(concat_rows({constant(summaries), null_}), idx);
}

Tensor Denoiser::null_context(int B) const { return gather_rows(null_, tile(B, cfg_.S)); }

Tensor Denoiser::conditioning(const std::vector<int>& tau, const std::vector<double>& anchor) const {
  require(tau.size() == anchor.size() && !tau.empty(), Errc::shape, "step and anchor counts differ");
  for (int t : tau) require(t >= 0 && t <= cfg_.T, Errc::validation, "diffusion step out of range");
  Tensor e = step_mlp_(constant(step_features(tau, cfg_.d_model, cfg_.T)));
  Tensor a = anchor_mlp_(constant(fourier_features(anchor, cfg_.time_features, kTimeFreqLo, kTimeFreqHi)));
  return add(e, a);
}

Poles Denoiser::predict_poles(const Tensor& cond, const Tensor& context, int B, bool fixed) const {
  if (fixed) {
    std::vector<int> rows(static_cast<std::size_t>(B), 0);
    Poles p;
    p.rho = gather_rows(add_scalar(softplus(rho_base_), cfg_.rho_min), rows);
    p.omega = gather_rows(scale(sigmoid(phi_base_), cfg_.omega_max), rows);
    return p;
  }
  Tensor pooled = group_mean(context, cfg_.S);
  Tensor delta = tanh(pole_mlp_(concat_cols({cond, pooled})));
  Tensor dr = scale(slice_cols(delta, 0, cfg_.K), cfg_.tanh_scale_rho);
  Tensor dw = scale(slice_cols(delta, cfg_.K, cfg_.K), cfg_.tanh_scale_omega);
  Poles p;
  p.rho = add_scalar(softplus(add(rho_base_, dr)), cfg_.rho_min);
  p.omega = scale(sigmoid(add(phi_base_, dw)), cfg_.omega_max);
  return p;
}

Tensor Denoiser::init_residues(const Tensor& z_tau, const std::vector<std::vector<double>>& times,
                               const Poles& p) const {
  const int B = static_cast<int>(times.size()), K = cfg_.K;
  require(B >= 1 && !times[0].empty(), Errc::shape, "init_residues needs at least one query time");
  const int h = static_cast<int>(times[0].size());
  bool shared = true;
  for (const auto& t : times) {
    require(static_cast<int>(t.size()) == h, Errc::shape, "all windows in a call need the same horizon");
    shared = shared && t == times[0];
  }
  std::vector<double> flat;
  if (shared) {
    flat = times[0];
  } else {
    flat.reserve(static_cast<std::size_t>(B) * h);
    for (const auto& t : times) flat.insert(flat.end(), t.begin(), t.end());
  }
  Tensor pk = concat_cols({reshape(p.rho, static_cast<Eigen::Index>(B) * K, 1),
                           reshape(p.omega, static_cast<Eigen::Index>(B) * K, 1)});
  Tensor mq = mode_query_(pk);  // rows b*K + k
  std::vector<int> qi(static_cast<std::size_t>(B) * 2 * K), ri(qi.size());
  for (int b = 0; b < B; ++b)
    for (int role = 0; role < 2; ++role)
      for (int k = 0; k < K; ++k) {
        const std::size_t o = (static_cast<std::size_t>(b) * 2 + role) * K + k;
        qi[o] = b * K + k;
        ri[o] = role;
      }
  Tensor q = res_query_(add(gather_rows(mq, qi), gather_rows(role_, ri)));
  Tensor k = time_key_(constant(fourier_features(flat, cfg_.time_features, kTimeFreqLo, kTimeFreqHi)));
  if (shared && B > 1) k = gather_rows(k, tile(B, h));
  Tensor v = value_(z_tau);
  return res_out_(attention(q, k, v, B, cfg_.heads));
}

Tensor Denoiser::refine_block(int l, const Tensor& residues, const Tensor& context, const Tensor& cond, int B) const {
  const Block& bl = blocks_.at(static_cast<std::size_t>(l));
  const int M = 2 * cfg_.K;
  Tensor tok = add(add(bl.in(residues), gather_rows(cond, repeat_each(B, M))), gather_rows(bl.pos, tile(B, M)));
  tok = add(tok, bl.cross(bl.ln_c(tok), context, B));
  tok = add(tok, bl.self(bl.ln_s(tok), bl.ln_s(tok), B));
  tok = add(tok, bl.ffn(bl.ln_f(tok)));
  return add(residues, bl.out(tok));
}

Tensor Denoiser::refine_residues(const Tensor& residues, const Tensor& context, const Tensor& cond, int B) const {
  Tensor r = residues;
  for (int l = 0; l < cfg_.L; ++l) r = refine_block(l, r, context, cond, B);
  return r;
}

Tensor Denoiser::modal_synthesis(const Poles& p, const Tensor& residues,
                                 const std::vector<std::vector<double>>& times) const {
  const int B = static_cast<int>(times.size()), M = 2 * cfg_.K;
  std::vector<Tensor> parts;
  parts.reserve(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) {
    Tensor basis = damped_basis(slice_rows(p.rho, b, 1), slice_rows(p.omega, b, 1), times[b]);
    parts.push_back(matmul(basis, slice_rows(residues, static_cast<Eigen::Index>(b) * M, M)));
  }
  return B == 1 ? parts[0] : concat_rows(parts);
}

Tensor Denoiser::synthesize(const Poles& p, const Tensor& residues,
                            const std::vector<std::vector<double>>& times) const {
  Tensor z = modal_synthesis(p, residues, times);
  return add(z, residual_(z));
}

DenoiseOutput Denoiser::denoise(const DenoiseInput& in) const {
  const int B = static_cast<int>(in.tau.size());
  require(B >= 1 && static_cast<int>(in.times.size()) == B && static_cast<int>(in.anchor.size()) == B, Errc::shape,
          "denoise input counts disagree");
  const int h = static_cast<int>(in.times[0].size());
  require(in.z_tau.rows() == static_cast<Eigen::Index>(B) * h && in.z_tau.cols() == cfg_.d_z, Errc::shape,
          "z_tau must be (B*h) x d_z");
  require(in.context.rows() == static_cast<Eigen::Index>(B) * cfg_.S && in.context.cols() == cfg_.d_ctx,
          Errc::shape, "context must be (B*S) x d_ctx");
  ++calls_;
  DenoiseOutput out;
  const Tensor z = constant(in.z_tau);
  const Tensor cond = conditioning(in.tau, in.anchor);
  out.poles = predict_poles(cond, in.context, B, in.fixed_poles);
  out.residues_init = init_residues(z, in.times, out.poles);
  out.residues = refine_residues(out.residues_init, in.context, cond, B);
  out.z0 = synthesize(out.poles, out.residues, in.times);
  return out;
}

}  // namespace lld::denoiser
