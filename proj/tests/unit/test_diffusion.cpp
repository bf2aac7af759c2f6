#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "common/error.hpp"
#include "diffusion/diffusion.hpp"
#include "support/oracles.hpp"

using namespace lld;
using namespace lld::diffusion;

namespace {

Mat randn(Eigen::Index r, Eigen::Index c, std::mt19937_64& g) {
  std::normal_distribution<double> n;
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(g);
  return m;
}

denoiser::DenoiserConfig tiny() {
  denoiser::DenoiserConfig c;
  c.d_z = 3;
  c.d_ctx = 4;
  c.S = 2;
  c.K = 3;
  c.d_model = 8;
  c.L = 1;
  c.heads = 2;
  c.ffn = 8;
  c.time_features = 2;
  c.T = 200;
  return c;
}

void scramble(ad::ParameterStore& s, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::normal_distribution<double> n(0.0, 0.2);
  for (auto& e : s.entries())
    for (Eigen::Index i = 0; i < e.param.value().size(); ++i) e.param.mutable_value().data()[i] += n(g);
}

TrainingSet toy_set(const denoiser::DenoiserConfig& c, int n, int h, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  TrainingSet t;
  for (int i = 0; i < n; ++i) {
    t.z0.push_back(randn(h, c.d_z, g));
    t.E.push_back(randn(c.S, c.d_ctx, g));
    std::vector<double> tt;
    for (int r = 0; r < h; ++r) tt.push_back(r);
    t.times.push_back(tt);
    t.anchor.push_back(1.0);
  }
  return t;
}

}  // namespace

TEST_CASE("cosine schedule") {
  const auto s = cosine_schedule(1000);
  const auto ref = oracle::cosine_alpha_bar(1000);
  CHECK(s.alpha_bar.size() == 1001);
  CHECK(s.alpha_bar[0] == 1.0);
  for (int t = 1; t <= 1000; ++t) {
    CHECK(s.alpha_bar[static_cast<std::size_t>(t)] < s.alpha_bar[static_cast<std::size_t>(t - 1)]);
    CHECK(s.alpha_bar[static_cast<std::size_t>(t)] == doctest::Approx(ref[static_cast<std::size_t>(t)]).epsilon(1e-12));
    if (t > 1) CHECK(s.sigma(t) > s.sigma(t - 1));
  }
  CHECK(s.alpha_bar[1000] < 1e-3);
  CHECK(s.alpha_bar[1000] > 0.0);
}

TEST_CASE("forward diffusion moments") {
  const auto s = cosine_schedule(1000);
  std::mt19937_64 g(1);
  const Mat z0 = randn(2, 3, g);
  CHECK(forward_diffuse(z0, 0, randn(2, 3, g), s) == z0);
  CHECK_THROWS_AS(forward_diffuse(z0, 1001, randn(2, 3, g), s), Error);

  const int n = 100000, tau = 400;
  const double ab = s.alpha_bar[tau];
  Mat x0(1, 1);
  x0(0, 0) = 1.3;
  double sum = 0.0, sq = 0.0, cross = 0.0, xs = 0.0, xx = 0.0, zs = 0.0, zz = 0.0;
  std::normal_distribution<double> nd;
  for (int i = 0; i < n; ++i) {
    const double v = forward_diffuse(x0, tau, Mat::Constant(1, 1, nd(g)), s)(0, 0);
    sum += v;
    sq += v * v;
    // Correlation at the final step with a random clean value.
    const double c = nd(g);
    const double zT = forward_diffuse(Mat::Constant(1, 1, c), 1000, Mat::Constant(1, 1, nd(g)), s)(0, 0);
    cross += c * zT;
    xs += c;
    xx += c * c;
    zs += zT;
    zz += zT * zT;
  }
  const double mean = sum / n, var = sq / n - mean * mean;
  const double se_mean = std::sqrt((1 - ab) / n), se_var = (1 - ab) * std::sqrt(2.0 / n);
  CHECK(std::abs(mean - std::sqrt(ab) * 1.3) < 3 * se_mean);
  CHECK(std::abs(var - (1 - ab)) < 3 * se_var);
  const double cov = cross / n - (xs / n) * (zs / n);
  const double corr = cov / std::sqrt((xx / n - (xs / n) * (xs / n)) * (zz / n - (zs / n) * (zs / n)));
  CHECK(std::abs(corr) < 0.05);
}

TEST_CASE("min-SNR weight") {
  CHECK(min_snr_weight(1.0, std::numeric_limits<double>::infinity()) == 1.0);
  CHECK(min_snr_weight(1.0, 5.0) == 1.0);
  CHECK(min_snr_weight(10.0, 5.0) == doctest::Approx(0.5));
  CHECK(min_snr_weight(1e6, 5.0) <= 1.0);
}

TEST_CASE("Karras step selection") {
  const auto s = cosine_schedule(1000);
  CHECK(select_steps_karras(1, s) == std::vector<int>{1000});
  CHECK_THROWS_AS(select_steps_karras(0, s), Error);
  for (int n : {2, 8, 16, 64, 200}) {
    const auto st = select_steps_karras(n, s, 7.5);
    CHECK(st.front() == 1000);
    CHECK(static_cast<int>(st.size()) <= n);
    for (std::size_t i = 1; i < st.size(); ++i) CHECK(st[i] < st[i - 1]);
    CHECK(st.back() >= 1);
  }
  // The last step is the grid point nearest the smallest sigma of the schedule.
  const auto st = select_steps_karras(64, s, 7.5);
  CHECK(st.back() == 1);
  // Nearest-step deduplication leaves fewer distinct steps than requested (frozen values).
  CHECK(st.size() == 33);
  CHECK(select_steps_karras(16, s, 7.5).size() == 11);
}

TEST_CASE("DDIM step identities") {
  const auto s = cosine_schedule(1000);
  std::mt19937_64 g(2);
  const Mat z0 = randn(4, 3, g), eps = randn(4, 3, g);
  const Mat zt = forward_diffuse(z0, 600, eps, s);
  CHECK((ddim_step(zt, z0, 600, 0, s) - z0).cwiseAbs().maxCoeff() == 0.0);
  CHECK((ddim_step(zt, z0, 600, 250, s) - forward_diffuse(z0, 250, eps, s)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(ddim_step(zt, z0, 600, 600, s), Error);

  // A constant clean estimate makes two half-steps equal one combined step.
  const Mat a = ddim_step(ddim_step(zt, z0, 600, 400, s), z0, 400, 200, s);
  CHECK((a - ddim_step(zt, z0, 600, 200, s)).cwiseAbs().maxCoeff() < 1e-10);

  // Affine denoiser: each step scales z by a closed-form factor.
  const double k = 0.4;
  Mat z = zt;
  double factor = 1.0;
  const std::vector<int> path = {600, 420, 180, 30, 0};
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    const double ab = s.alpha_bar[static_cast<std::size_t>(path[i])];
    const double ap = s.alpha_bar[static_cast<std::size_t>(path[i + 1])];
    factor *= std::sqrt(ap) * k + std::sqrt(1 - ap) * (1 - std::sqrt(ab) * k) / std::sqrt(1 - ab);
    z = ddim_step(z, k * z, path[i], path[i + 1], s);
  }
  CHECK((z - factor * zt).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("guidance combination") {
  std::mt19937_64 g(3);
  const Mat c = randn(3, 2, g), u = randn(3, 2, g);
  CHECK(cfg_combine(c, u, 1.0) == c);
  CHECK(cfg_combine(c, u, 0.0) == u);
  CHECK((cfg_combine(c, u, 2.0) - (2 * c - u)).cwiseAbs().maxCoeff() < 1e-15);
  // Affine in w.
  const Mat m = cfg_combine(c, u, 1.5);
  CHECK((m - 0.5 * (cfg_combine(c, u, 1.0) + cfg_combine(c, u, 2.0))).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("dynamic thresholding") {
  std::mt19937_64 g(4);
  Mat small = randn(10, 4, g);
  small = small.cwiseMax(-1.0).cwiseMin(1.0);
  CHECK(dynamic_threshold(small, 0.995, 1.0) == small);
  const Mat big = 3.0 * randn(10, 4, g);
  CHECK(dynamic_threshold(big, 1.0, 1.0) == big);

  Mat spike(50, 20);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (Eigen::Index i = 0; i < spike.size(); ++i) spike.data()[i] = u(g);
  spike(7, 3) = 10.0;
  std::vector<double> mags(spike.data(), spike.data() + spike.size());
  for (double& v : mags) v = std::abs(v);
  const double q = quantile(mags, 0.995);
  CHECK(q < 1.6);
  const Mat out = dynamic_threshold(spike, 0.995, 1.0);
  CHECK(out(7, 3) == doctest::Approx(q));
  CHECK(out.cwiseAbs().maxCoeff() <= q + 1e-15);
  CHECK(quantile({1.0, 2.0, 3.0, 4.0}, 0.5) == doctest::Approx(2.5));
}

TEST_CASE("training steps: determinism, full unconditional dropout, non-finite rejection") {
  const auto c = tiny();
  const auto s = cosine_schedule(c.T);
  const auto data = toy_set(c, 8, 4, 5);
  DiffusionTrainConfig tc;
  tc.batch = 4;
  tc.opt.lr = 1e-3;
  tc.opt.max_steps = 100;
  auto run = [&](double p_uncond) {
    denoiser::Denoiser d(c, 6);
    auto cfg = tc;
    cfg.p_uncond = p_uncond;
    Rng rng(11);
    std::vector<double> losses;
    int dropped = 0;
    for (long st = 0; st < 5; ++st) {
      const auto o = training_step(d, data, {0, 2, 4, 6}, s, cfg, rng, st);
      CHECK(o.applied);
      losses.push_back(o.loss);
      dropped += o.dropped;
    }
    return std::make_pair(losses, dropped);
  };
  const auto a = run(0.18), b = run(0.18);
  CHECK(a.first == b.first);
  CHECK(run(1.0).second == 20);
  CHECK(run(0.0).second == 0);

  auto bad = data;
  bad.z0[2](0, 0) = std::numeric_limits<double>::quiet_NaN();
  denoiser::Denoiser d(c, 6);
  const auto before = d.store().snapshot();
  Rng rng(1);
  const auto o = training_step(d, bad, {0, 2}, s, tc, rng, 0);
  CHECK_FALSE(o.applied);
  CHECK_FALSE(o.diagnostics.empty());
  CHECK(d.store().snapshot() == before);
}

TEST_CASE("sampler contracts") {
  const auto c = tiny();
  const auto s = cosine_schedule(c.T);
  denoiser::Denoiser d(c, 7);
  scramble(d.store(), 7);
  std::mt19937_64 g(7);
  const Mat E = randn(c.S, c.d_ctx, g);
  SampleConfig sc;
  sc.n_steps = 12;
  sc.n_samples = 3;
  sc.seed = 99;
  const std::vector<double> times = {0.0, 1.0, 2.0, 3.5};
  const auto a = sample(d, E, times, 1.0, s, sc), b = sample(d, E, times, 1.0, s, sc);
  CHECK(a.z0.size() == 3);
  for (std::size_t j = 0; j < 3; ++j) CHECK(a.z0[j] == b.z0[j]);
  CHECK(a.z0[0] != a.z0[1]);
  CHECK(a.denoiser_calls == 2 * static_cast<long>(a.steps.size()));
  CHECK(a.min_rho >= c.rho_min);
  CHECK(a.envelope_violations == 0);

  // Guidance weight 1 ignores the unconditional branch entirely.
  denoiser::Denoiser d2(c, 7);
  d2.store().load(d.store().snapshot());
  for (auto& e : d2.store().entries())
    if (e.name == "null_tokens") e.param.mutable_value() = randn(c.S, c.d_ctx, g) * 5.0;
  const auto w1 = sample(d2, E, times, 1.0, s, sc);
  for (std::size_t j = 0; j < 3; ++j) CHECK(w1.z0[j] == a.z0[j]);
  sc.guidance_w = 2.0;
  CHECK(sample(d2, E, times, 1.0, s, sc).z0[0] != a.z0[0]);

  // Call count does not depend on the horizon.
  sc.guidance_w = 1.0;
  std::vector<double> longer;
  for (int i = 0; i < 40; ++i) longer.push_back(i);
  CHECK(sample(d, E, longer, 1.0, s, sc).denoiser_calls == a.denoiser_calls);

  sc.eta = 0.5;
  CHECK_THROWS_AS(sample(d, E, times, 1.0, s, sc), Error);
}
