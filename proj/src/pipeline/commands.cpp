#include "pipeline/commands.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "common/binary_array.hpp"
#include "common/error.hpp"
#include "common/parallel.hpp"
#include "common/rng.hpp"
#include "datagen/oracle.hpp"
#include "pipeline/experiment.hpp"
#include "renewal/renewal.hpp"
#include "sph/sph.hpp"

namespace lld::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kCodeVersion = "0.1.0";

using Handler = json (*)(const RunConfig&, const std::string& out, const std::string& run_dir, std::ostream& log);

std::uint64_t root_seed(const RunConfig& cfg) { return static_cast<std::uint64_t>(cfg.get_int("seed")); }

std::string timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y%m%dT%H%M%SZ");
  return os.str();
}

void ensure_dir(const std::string& d) {
  std::error_code ec;
  fs::create_directories(d, ec);
  require(!ec, Errc::io, "cannot create directory " + d + ": " + ec.message());
}

void write_json(const std::string& path, const json& j) {
  std::ofstream f(path);
  require(static_cast<bool>(f), Errc::io, "cannot write " + path);
  f << j.dump(2) << '\n';
  require(static_cast<bool>(f), Errc::io, "write failed for " + path);
}

json read_json(const std::string& path) {
  std::ifstream f(path);
  require(static_cast<bool>(f), Errc::io, "cannot read " + path);
  try {
    return json::parse(f);
  } catch (const std::exception& e) {
    fail(Errc::io, "malformed " + path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  require(static_cast<bool>(f), Errc::io, "cannot write " + path);
  f << text;
}

NdArray to_array(const Mat& m) {
  NdArray a;
  a.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  a.data.resize(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) a.data[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
  return a;
}

Mat from_array(const NdArray& a, const std::string& what) {
  require(a.dims.size() == 2, Errc::io, what + " must be a rank-2 array");
  Mat m(static_cast<Eigen::Index>(a.dims[0]), static_cast<Eigen::Index>(a.dims[1]));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = a.data[static_cast<std::size_t>(r * m.cols() + c)];
  return m;
}

NdArray stack_samples(const std::vector<Mat>& s) {
  NdArray a;
  a.dims = {s.size(), static_cast<std::uint64_t>(s.at(0).rows()), static_cast<std::uint64_t>(s.at(0).cols())};
  for (const auto& m : s) {
    const NdArray one = to_array(m);
    a.data.insert(a.data.end(), one.data.begin(), one.data.end());
  }
  return a;
}

std::vector<Mat> unstack_samples(const NdArray& a) {
  require(a.dims.size() == 3, Errc::io, "sample arrays must be rank 3");
  std::vector<Mat> out;
  const std::size_t per = static_cast<std::size_t>(a.dims[1] * a.dims[2]);
  for (std::uint64_t j = 0; j < a.dims[0]; ++j) {
    NdArray one;
    one.dims = {a.dims[1], a.dims[2]};
    one.data.assign(a.data.begin() + static_cast<std::ptrdiff_t>(j * per),
                    a.data.begin() + static_cast<std::ptrdiff_t>((j + 1) * per));
    out.push_back(from_array(one, "sample"));
  }
  return out;
}

NdArray vec_array(const std::vector<double>& v) {
  NdArray a;
  a.dims = {v.size()};
  a.data = v;
  return a;
}

// ---------------------------------------------------------------------------
// Shared loading

std::string data_hash(const RunConfig& cfg) {
  std::string s = "seed=" + cfg.get("seed") + "\n";
  for (const auto& [k, v] : cfg.values())
    if (k.rfind("data.", 0) == 0 && k != "data.min_coverage") s += k + "=" + v + "\n";
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(s);
  return os.str();
}

struct Loaded {
  datagen::RatioIndexCache cache;
  Truth truth;
};

Loaded load_data(const RunConfig& cfg, const std::string& out) {
  const std::string dir = out + "/cache";
  require(fs::exists(dir + "/manifest.json"), Errc::io, "no cache under " + dir + "; run gen-data first");
  Loaded l;
  l.cache = datagen::load_cache(dir);
  const json tj = read_json(dir + "/truth.json");
  l.truth = truth_from_json(tj);
  require(tj.value("data_hash", "") == data_hash(cfg), Errc::config,
          "cache was generated with different data settings or seed; rerun gen-data");
  const double cov = cfg.get_real("data.min_coverage");
  if (cov > l.cache.min_coverage) {
    l.cache = datagen::induce_missingness(l.cache, cov);
  } else {
    require(cov >= l.cache.min_coverage - 1e-12, Errc::config,
            "requested coverage threshold is below the one baked into the cache; rerun gen-data");
  }
  return l;
}

std::string ckpt(const std::string& out, const char* name) { return out + "/" + name + ".lldc"; }

void check_config(const json& have, const json& want, const std::string& what) {
  require(have == want, Errc::config,
          what + " checkpoint was trained with a different configuration; retrain or match its settings");
}

Models load_models(const RunConfig& cfg, const Loaded& d, const std::string& out, bool need_diffusion) {
  Models m;
  for (const char* n : {"vae", "summarizer"})
    require(fs::exists(ckpt(out, n)), Errc::io, std::string("missing ") + n + " checkpoint; run the pretraining stage");
  m.load_vae(ckpt(out, "vae"));
  check_config(codec::to_json(m.vae->config()), codec::to_json(vae_config(cfg, d.cache.N, d.cache.d)), "VAE");
  m.load_summarizer(ckpt(out, "summarizer"));
  check_config(summarizer::to_json(m.summarizer->config()),
               summarizer::to_json(summarizer_config(cfg, d.cache.N, d.cache.d, d.cache.layout.ell)), "summarizer");
  if (need_diffusion) {
    require(fs::exists(ckpt(out, "diffusion")), Errc::io, "missing diffusion checkpoint; run train");
    m.load_diffusion(ckpt(out, "diffusion"));
    const auto& sc = m.summarizer->config();
    check_config(denoiser::to_json(m.denoiser->config()),
                 denoiser::to_json(denoiser_config(cfg, m.vae->config().d_z, sc.d_ctx, sc.S)), "diffusion");
  }
  return m;
}

datagen::Split parse_split(const std::string& s) {
  if (s == "train") return datagen::Split::train;
  if (s == "val") return datagen::Split::val;
  require(s == "test", Errc::config, "sample.split must be train, val or test");
  return datagen::Split::test;
}

// Slice honouring a horizon override; returns false when the window does not
// fit the grid at that horizon.
bool slice_for(const datagen::RatioIndexCache& c, const datagen::WindowRef& ref, int horizon,
               datagen::WindowSlice& out) {
  if (horizon <= 0 || horizon == c.layout.h) {
    out = datagen::slice(c, ref);
    return true;
  }
  if (ref.start_idx + c.layout.ell + horizon > c.T()) return false;
  out = datagen::slice_at(c, ref.start_idx, c.layout.ell, horizon);
  out.ref = ref;
  return true;
}

json gate(const char* name, bool pass, const json& detail) { return {{"name", name}, {"pass", pass}, {"detail", detail}}; }

void enforce(const json& gates) {
  for (const auto& g : gates)
    if (!g.at("pass").get<bool>())
      fail(Errc::invariant, "invariant gate failed: " + g.at("name").get<std::string>() + " " + g.at("detail").dump());
}

json stability_gates(double min_rho, double rho_min, long checks, long violations) {
  return json::array({gate("decay_floor", min_rho >= rho_min, {{"min_rho", min_rho}, {"floor", rho_min}}),
                      gate("decay_envelope", violations == 0, {{"checks", checks}, {"violations", violations}})});
}

// ---------------------------------------------------------------------------
// Subcommands

json cmd_gen_data(const RunConfig& cfg, const std::string& out, const std::string&, std::ostream& log) {
  const Dataset ds = make_dataset(cfg, root_seed(cfg));
  const std::string dir = out + "/cache";
  ensure_dir(dir);
  datagen::save_cache(ds.cache, dir);
  json tj = to_json(ds.truth);
  tj["data_hash"] = data_hash(cfg);
  write_json(dir + "/truth.json", tj);
  json s = {{"cache_dir", dir},
            {"timestamps", ds.cache.T()},
            {"entities", ds.cache.N},
            {"channels", ds.cache.d},
            {"windows",
             {{"train", ds.cache.windows_in(datagen::Split::train).size()},
              {"val", ds.cache.windows_in(datagen::Split::val).size()},
              {"test", ds.cache.windows_in(datagen::Split::test).size()}}},
            {"truth", to_json(ds.truth)}};
  log << "gen-data: " << ds.cache.T() << " timestamps, " << ds.cache.windows.size() << " windows -> " << dir << '\n';
  return s;
}

json vae_stage(const RunConfig& cfg, const Loaded& d, const std::string& out, std::ostream& log) {
  Models m = Models::fresh(cfg, d.cache.N, d.cache.d, d.cache.layout.ell, root_seed(cfg));
  const auto r = m.pretrain_vae(cfg, d.cache, root_seed(cfg));
  json s = {{"epochs", r.epochs},         {"init_val_recon", r.init_val_recon}, {"best_val_recon", r.best_val_recon},
            {"best_epoch", r.best_epoch}, {"seconds", r.seconds},               {"stopped_early", r.stopped_early},
            {"hit_time_budget", r.hit_time_budget}};
  m.save_vae(ckpt(out, "vae"), cfg, s);
  log << "pretrain-vae: val recon " << r.init_val_recon << " -> " << r.best_val_recon << " in " << r.epochs
      << " epochs\n";
  return s;
}

json summarizer_stage(const RunConfig& cfg, const Loaded& d, const std::string& out, std::ostream& log) {
  Models m = Models::fresh(cfg, d.cache.N, d.cache.d, d.cache.layout.ell, root_seed(cfg));
  const auto r = m.pretrain_summarizer(cfg, d.cache, root_seed(cfg));
  json s = {{"epochs", r.epochs},         {"init_val", r.init_val}, {"best_val", r.best_val},
            {"best_epoch", r.best_epoch}, {"seconds", r.seconds},   {"stopped_early", r.stopped_early},
            {"hit_time_budget", r.hit_time_budget}};
  m.save_summarizer(ckpt(out, "summarizer"), cfg, s);
  log << "pretrain-summarizer: val loss " << r.init_val << " -> " << r.best_val << " in " << r.epochs << " epochs\n";
  return s;
}

json cmd_pretrain_vae(const RunConfig& cfg, const std::string& out, const std::string&, std::ostream& log) {
  return vae_stage(cfg, load_data(cfg, out), out, log);
}

json cmd_pretrain_summarizer(const RunConfig& cfg, const std::string& out, const std::string&, std::ostream& log) {
  return summarizer_stage(cfg, load_data(cfg, out), out, log);
}

json cmd_train(const RunConfig& cfg, const std::string& out, const std::string&, std::ostream& log) {
  const Loaded d = load_data(cfg, out);
  json s = json::object();
  if (!fs::exists(ckpt(out, "vae"))) s["pretrain_vae"] = vae_stage(cfg, d, out, log);
  if (!fs::exists(ckpt(out, "summarizer"))) s["pretrain_summarizer"] = summarizer_stage(cfg, d, out, log);
  Models m = load_models(cfg, d, out, false);
  const auto& sc = m.summarizer->config();
  m.denoiser = std::make_unique<denoiser::Denoiser>(denoiser_config(cfg, m.vae->config().d_z, sc.d_ctx, sc.S),
                                                    derive_seed(root_seed(cfg), "model.denoiser"));
  m.schedule = diffusion::cosine_schedule(m.denoiser->config().T);
  const auto r = m.train_diffusion(cfg, d.cache, root_seed(cfg));
  json h = json::array();
  for (const auto& row : r.history) h.push_back({{"epoch", row[0]}, {"train", row[1]}, {"val", row[2]}});
  s["diffusion"] = {{"epochs", r.epochs},
                    {"steps", r.steps},
                    {"rejected_steps", r.rejected},
                    {"best_val", r.best_val},
                    {"best_epoch", r.best_epoch},
                    {"seconds", r.seconds},
                    {"stopped_early", r.stopped_early},
                    {"hit_time_budget", r.hit_time_budget},
                    {"latent_scale", m.latent_scale},
                    {"history", h}};
  m.save_diffusion(ckpt(out, "diffusion"), cfg, s["diffusion"]);
  log << "train: best val " << r.best_val << " at epoch " << r.best_epoch << " of " << r.epochs << '\n';
  return s;
}

json cmd_sample(const RunConfig& cfg, const std::string& out, const std::string&, std::ostream& log) {
  const Loaded d = load_data(cfg, out);
  const Models m = load_models(cfg, d, out, true);
  const auto split = parse_split(cfg.get("sample.split"));
  const auto refs = evenly_spaced(d.cache.windows_in(split), static_cast<int>(cfg.get_int("sample.max_windows")));
  require(!refs.empty(), Errc::validation, "no windows in the requested split");
  const int horizon = static_cast<int>(cfg.get_int("sample.horizon"));
  const std::string dir = out + "/samples";
  if (fs::exists(dir)) fs::remove_all(dir);
  ensure_dir(dir);
  json windows = json::array();
  double min_rho = std::numeric_limits<double>::infinity();
  long checks = 0, viol = 0;
  int id = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    datagen::WindowSlice w;
    if (!slice_for(d.cache, refs[i], horizon, w)) continue;
    const std::uint64_t wseed = derive_seed(root_seed(cfg), "sample.window", i);
    const auto f = m.forecast(w, sample_config(cfg, wseed));
    char stem[64];
    std::snprintf(stem, sizeof stem, "window_%04d", id);
    const std::string base = dir + "/" + stem;
    save_array(base + "_samples.lldk", stack_samples(f.bundle.samples));
    save_array(base + "_target.lldk", to_array(f.bundle.target));
    save_array(base + "_mask.lldk", to_array(f.bundle.mask), DType::u8);
    save_array(base + "_times.lldk", vec_array(w.query_times));
    windows.push_back({{"id", id},
                       {"stem", stem},
                       {"entity_id", w.ref.entity_id},
                       {"start_idx", w.ref.start_idx},
                       {"context_end", w.context_end()},
                       {"horizon", static_cast<int>(w.query_times.size())},
                       {"m", f.bundle.samples.size()},
                       {"seed", wseed},
                       {"min_rho", f.result.min_rho}});
    min_rho = std::min(min_rho, f.result.min_rho);
    checks += f.result.envelope_checks;
    viol += f.result.envelope_violations;
    ++id;
  }
  require(id > 0, Errc::validation, "no window fits the requested horizon");
  json gates = stability_gates(min_rho, cfg.get_real("diff.rho_min"), checks, viol);
  write_json(dir + "/manifest.json", {{"config_hash", cfg.hash_hex()},
                                      {"split", cfg.get("sample.split")},
                                      {"entities", d.cache.N},
                                      {"channels", d.cache.d},
                                      {"row_layout", "time-major: row r*N + n is entity n at step r"},
                                      {"windows", windows}});
  log << "sample: " << id << " windows -> " << dir << '\n';
  json s = {{"samples_dir", dir}, {"windows", id}, {"min_rho", min_rho}, {"gates", gates}};
  enforce(gates);
  return s;
}

json cmd_eval(const RunConfig& cfg, const std::string& out, const std::string&, std::ostream& log) {
  const std::string dir = out + "/samples";
  const json man = read_json(dir + "/manifest.json");
  std::optional<Loaded> d;
  if (fs::exists(out + "/cache/manifest.json")) d = load_data(cfg, out);
  double crps = 0, mae = 0, mse = 0, oracle = 0;
  int n = 0, n_oracle = 0;
  json per = json::array();
  for (const auto& w : man.at("windows")) {
    const std::string base = dir + "/" + w.at("stem").get<std::string>();
    metrics::ForecastBundle b;
    b.samples = unstack_samples(load_array(base + "_samples.lldk"));
    b.target = from_array(load_array(base + "_target.lldk"), "target");
    b.mask = from_array(load_array(base + "_mask.lldk"), "mask");
    const double c = metrics::bundle_crps(b);
    const auto pm = metrics::masked_point_metrics(b);
    json row = {{"id", w.at("id")}, {"crps", c}, {"mae", pm.mae}, {"mse", pm.mse}};
    if (d) {
      datagen::WindowRef ref;
      ref.start_idx = w.at("start_idx");
      datagen::WindowSlice ws;
      if (slice_for(d->cache, ref, w.at("horizon"), ws)) {
        const double o = datagen::oracle_forecast(ws, d->truth.poles, d->cache.mean, d->cache.std).crps_floor;
        row["oracle_crps"] = o;
        oracle += o;
        ++n_oracle;
      }
    }
    per.push_back(row);
    crps += c;
    mae += pm.mae;
    mse += pm.mse;
    ++n;
  }
  require(n > 0, Errc::validation, "sample manifest lists no windows");
  json s = {{"windows", n},
            {"crps", crps / n},
            {"mae", mae / n},
            {"mse", mse / n},
            {"crps_units", "unnormalized, on standardized values"},
            {"per_window", per}};
  if (n_oracle) s["oracle_crps"] = oracle / n_oracle;
  log << "eval: CRPS " << crps / n << ", MAE " << mae / n << ", MSE " << mse / n;
  if (n_oracle) log << ", oracle CRPS " << oracle / n_oracle;
  log << '\n';
  return s;
}

json cmd_impute(const RunConfig& cfg, const std::string& out, const std::string& run_dir, std::ostream& log) {
  const Loaded d = load_data(cfg, out);
  const Models m = load_models(cfg, d, out, true);
  const int ell = d.cache.layout.ell, N = d.cache.N, dd = d.cache.d;
  const int Q = static_cast<int>(cfg.get_int("impute.queries"));
  require(Q >= 1 && Q <= ell, Errc::config, "impute.queries must lie in [1, data.ell]");
  const double hide = cfg.get_real("impute.hide_fraction");
  require(hide > 0.0 && hide <= 1.0, Errc::config, "impute.hide_fraction must lie in (0, 1]");
  const auto refs = evenly_spaced(d.cache.windows_in(parse_split(cfg.get("sample.split"))),
                                  static_cast<int>(cfg.get_int("impute.max_windows")));
  double crps = 0, mae = 0;
  double min_rho = std::numeric_limits<double>::infinity();
  long checks = 0, viol = 0;
  int n = 0;
  json per = json::array();
  for (std::size_t i = 0; i < refs.size(); ++i) {
    datagen::WindowSlice w = datagen::slice(d.cache, refs[i]);
    Rng rng(root_seed(cfg), "impute.hide", i);
    const Eigen::Index r0 = static_cast<Eigen::Index>(ell - Q) * N;
    Mat hidden = Mat::Zero(static_cast<Eigen::Index>(Q) * N, dd);
    for (Eigen::Index r = 0; r < hidden.rows(); ++r)
      for (Eigen::Index c = 0; c < dd; ++c)
        if (w.hist_mask(r0 + r, c) > 0.5 && rng.bernoulli(hide)) hidden(r, c) = 1.0;
    if (hidden.sum() == 0.0) continue;
    const Mat truth = w.hist_x.middleRows(r0, hidden.rows());
    for (Eigen::Index r = 0; r < hidden.rows(); ++r)
      for (Eigen::Index c = 0; c < dd; ++c)
        if (hidden(r, c) > 0.5) {
          w.hist_mask(r0 + r, c) = 0.0;
          w.hist_x(r0 + r, c) = 0.0;
        }
    const std::vector<double> qt(w.hist_times.end() - Q, w.hist_times.end());
    diffusion::SampleResult res;
    const auto vals =
        m.sample_values(m.summary(w), qt, w.context_end(), sample_config(cfg, derive_seed(root_seed(cfg), "impute", i)),
                        &res);
    metrics::ForecastBundle b{vals, truth, hidden};
    const double c = metrics::bundle_crps(b);
    const double a = metrics::masked_point_metrics(b).mae;
    char stem[64];
    std::snprintf(stem, sizeof stem, "/impute_%04d", n);
    save_array(run_dir + stem + "_samples.lldk", stack_samples(vals));
    save_array(run_dir + stem + "_truth.lldk", to_array(truth));
    save_array(run_dir + stem + "_hidden.lldk", to_array(hidden), DType::u8);
    save_array(run_dir + stem + "_times.lldk", vec_array(qt));
    per.push_back({{"id", n}, {"start_idx", refs[i].start_idx}, {"hidden_entries", hidden.sum()}, {"crps", c}, {"mae", a}});
    crps += c;
    mae += a;
    min_rho = std::min(min_rho, res.min_rho);
    checks += res.envelope_checks;
    viol += res.envelope_violations;
    ++n;
  }
  require(n > 0, Errc::validation, "no window had observed history entries to hide");
  json gates = stability_gates(min_rho, cfg.get_real("diff.rho_min"), checks, viol);
  json s = {{"windows", n}, {"crps", crps / n}, {"mae", mae / n}, {"per_window", per}, {"gates", gates}};
  log << "impute: " << n << " windows, CRPS " << crps / n << " on hidden history entries\n";
  enforce(gates);
  return s;
}

json branch_json(const metrics::BranchStats& b) {
  return {{"mu_omega", b.mu_omega}, {"sd_omega", b.sd_omega}, {"mu_rho", b.mu_rho}, {"sd_rho", b.sd_rho}};
}

json cmd_analyze_poles(const RunConfig& cfg, const std::string& out, const std::string& run_dir, std::ostream& log) {
  const Loaded d = load_data(cfg, out);
  const Models m = load_models(cfg, d, out, true);
  const auto refs = evenly_spaced(d.cache.windows_in(parse_split(cfg.get("sample.split"))),
                                  static_cast<int>(cfg.get_int("poles.max_windows")));
  std::vector<Mat> sums;
  std::vector<double> anchors;
  for (const auto& r : refs) {
    const auto w = datagen::slice(d.cache, r);
    sums.push_back(m.summary(w));
    anchors.push_back(w.query_times.front() - w.context_end());
  }
  const auto st = metrics::pole_stats(*m.denoiser, sums, anchors, static_cast<int>(cfg.get_int("poles.tau")));
  std::ostringstream csv;
  csv << "branch,omega,rho\n" << std::setprecision(10);
  for (const auto& [o, r] : st.cond.scatter) csv << "cond," << o << ',' << r << '\n';
  for (const auto& [o, r] : st.uncond.scatter) csv << "uncond," << o << ',' << r << '\n';
  write_text(run_dir + "/poles.csv", csv.str());
  // Nearest learned frequency to each true frequency, per window.
  std::vector<double> errs;
  const int K = m.denoiser->config().K;
  for (const auto& t : d.truth.poles)
    for (std::size_t w = 0; w < sums.size(); ++w) {
      double best = std::numeric_limits<double>::infinity();
      for (int k = 0; k < K; ++k) best = std::min(best, std::abs(st.cond.scatter[w * K + k].first - t.omega));
      errs.push_back(best);
    }
  json s = {{"windows", sums.size()},
            {"cond", branch_json(st.cond)},
            {"uncond", branch_json(st.uncond)},
            {"median_nearest_true_omega_error", metrics::median(errs)},
            {"scatter_csv", run_dir + "/poles.csv"}};
  log << "analyze-poles: cond sd(rho) " << st.cond.sd_rho << ", uncond sd(rho) " << st.uncond.sd_rho
      << ", median nearest-frequency error " << metrics::median(errs) << '\n';
  return s;
}

json cmd_renewal_report(const RunConfig& cfg, const std::string& out, const std::string& run_dir, std::ostream& log) {
  std::vector<modal::Pole> poles;
  if (fs::exists(out + "/cache/truth.json"))
    poles = truth_from_json(read_json(out + "/cache/truth.json")).poles;
  else
    poles = datagen::default_benchmark(root_seed(cfg)).true_modes.poles();
  const double rate = cfg.get_real("data.gap_rate"), shape = cfg.get_real("renewal.gamma_shape");
  const std::vector<renewal::GapDistribution> dists = {renewal::GapDistribution::deterministic(1.0 / rate),
                                                       renewal::GapDistribution::exponential(rate),
                                                       renewal::GapDistribution::gamma(shape, shape * rate)};
  const auto n = static_cast<std::size_t>(cfg.get_int("renewal.samples"));
  std::ostringstream tsv;
  tsv << std::setprecision(8);
  tsv << "rho\tomega\tdistribution\tlambda_re\tlambda_im\tabs_lambda\tmc_re\tmc_im\tmc_se\tz\tsbar_re\tsbar_im"
         "\ttaylor_error\tmean_decay\tjensen_margin\tpass\n";
  json rows = json::array();
  bool all = true;
  std::uint64_t idx = 0;
  for (const auto& p : poles)
    for (const auto& g : dists) {
      const std::uint64_t s = derive_seed(root_seed(cfg), "renewal.report", idx++);
      const auto cf = renewal::effective_multiplier(p, g, renewal::Method::closed_form);
      const auto mc = renewal::effective_multiplier(p, g, renewal::Method::monte_carlo, n, s);
      const double z = std::abs(cf.lambda - mc.lambda) / std::max(mc.se(), 1e-300);
      const auto ep = renewal::log_pole(cf.lambda);
      const double terr = std::abs(renewal::taylor_approx(p, g.mean(), g.variance()) - ep.sbar);
      const auto jr = renewal::jensen_audit(p, g, n, s);
      // A deterministic gap has zero Monte Carlo error; require exact agreement there.
      const bool mc_ok = mc.se() > 0 ? z <= 3.0 : std::abs(cf.lambda - mc.lambda) < 1e-12;
      const bool pass = mc_ok && jr.pass;
      all = all && pass;
      tsv << p.rho << '\t' << p.omega << '\t' << renewal::kind_name(g.kind) << '\t' << cf.lambda.real() << '\t'
          << cf.lambda.imag() << '\t' << std::abs(cf.lambda) << '\t' << mc.lambda.real() << '\t' << mc.lambda.imag()
          << '\t' << mc.se() << '\t' << z << '\t' << ep.sbar.real() << '\t' << ep.sbar.imag() << '\t' << terr << '\t'
          << jr.mean_decay << '\t' << jr.mean_decay - jr.abs_lambda << '\t' << (pass ? "yes" : "no") << '\n';
      rows.push_back({{"rho", p.rho},
                      {"omega", p.omega},
                      {"distribution", renewal::kind_name(g.kind)},
                      {"abs_lambda", std::abs(cf.lambda)},
                      {"z", z},
                      {"taylor_error", terr},
                      {"jensen_margin", jr.mean_decay - jr.abs_lambda},
                      {"branch_cut_warning", ep.branch_cut_warning},
                      {"pass", pass}});
    }
  write_text(run_dir + "/renewal.tsv", tsv.str());
  log << tsv.str();
  json gates = json::array({gate("renewal_consistency", all, {{"rows", rows.size()}})});
  json s = {{"rows", rows}, {"table", run_dir + "/renewal.tsv"}, {"gates", gates}};
  enforce(gates);
  return s;
}

json cmd_sph_audit(const RunConfig& cfg, const std::string&, const std::string& run_dir, std::ostream& log) {
  const int systems = static_cast<int>(cfg.get_int("sph.systems"));
  const int dim = static_cast<int>(cfg.get_int("sph.d")), du = static_cast<int>(cfg.get_int("sph.d_u"));
  json ledgers = json::array();
  bool all = true;
  std::ostringstream txt;
  txt << std::setprecision(6);
  for (int i = 0; i < systems; ++i) {
    const auto sys = sph::random_stable_system(derive_seed(root_seed(cfg), "sph.system", i), dim, du);
    sph::SimConfig sc;
    sc.dt = cfg.get_real("sph.dt");
    sc.t_end = cfg.get_real("sph.t_end");
    sc.n_paths = static_cast<int>(cfg.get_int("sph.paths"));
    sc.seed = derive_seed(root_seed(cfg), "sph.paths", i);
    sc.input = sph::InputSignal::constant(Eigen::VectorXd::Constant(du, cfg.get_real("sph.input")));
    const auto led = sph::energy_balance_audit(sys, sc, static_cast<int>(cfg.get_int("sph.intervals")));
    const auto cert = sph::lyapunov_certificate(sys.J, sys.R, sys.kappa);
    Rng xr(root_seed(cfg), "sph.x0", i);
    Eigen::VectorXd x0(dim);
    for (int k = 0; k < dim; ++k) x0[k] = xr.normal();
    const double rise = sph::max_energy_increase(sys, x0, led.dt, 1000);
    const bool ok = led.all_close && cert.identity_ok && cert.negdef && rise <= 1e-9;
    all = all && ok;
    txt << "system " << i << " dt " << led.dt << " paths " << led.n_paths << '\n';
    txt << "  t0 t1 measured dissipation input_power ito residual se closes\n";
    json ivs = json::array();
    for (const auto& iv : led.intervals) {
      txt << "  " << iv.t0 << ' ' << iv.t1 << ' ' << iv.measured.mean << ' ' << iv.dissipation.mean << ' '
          << iv.input_power.mean << ' ' << iv.ito.mean << ' ' << iv.residual.mean << ' ' << iv.residual.se << ' '
          << (iv.closes ? "yes" : "no") << '\n';
      ivs.push_back({{"t0", iv.t0},
                     {"t1", iv.t1},
                     {"measured", iv.measured.mean},
                     {"dissipation", iv.dissipation.mean},
                     {"input_power", iv.input_power.mean},
                     {"ito", iv.ito.mean},
                     {"residual", iv.residual.mean},
                     {"residual_se", iv.residual.se},
                     {"closes", iv.closes}});
    }
    txt << "  lyapunov identity error " << cert.identity_error << ", noiseless energy rise " << rise << ", "
        << (ok ? "PASS" : "FAIL") << '\n';
    ledgers.push_back({{"system", i},
                       {"dt", led.dt},
                       {"intervals", ivs},
                       {"lyapunov_identity_error", cert.identity_error},
                       {"max_noiseless_energy_rise", rise},
                       {"pass", ok}});
  }
  write_text(run_dir + "/ledger.txt", txt.str());
  log << txt.str();
  json gates = json::array({gate("energy_balance", all, {{"systems", systems}})});
  json s = {{"ledgers", ledgers}, {"gates", gates}};
  enforce(gates);
  return s;
}

std::vector<int> int_list(const RunConfig& cfg, const std::string& key) {
  std::vector<int> v;
  for (double x : cfg.get_list(key)) {
    require(x >= 1 && x == std::floor(x), Errc::config, key + " entries must be positive integers");
    v.push_back(static_cast<int>(x));
  }
  return v;
}

json cmd_bench(const RunConfig& cfg, const std::string& out, const std::string& run_dir, std::ostream& log) {
  const Loaded d = load_data(cfg, out);
  const Models m = load_models(cfg, d, out, true);
  const auto horizons = int_list(cfg, "bench.horizons"), steps = int_list(cfg, "bench.steps");
  const int ell = d.cache.layout.ell;
  const int hmax = *std::max_element(horizons.begin(), horizons.end());
  require(hmax <= m.vae->config().h_max, Errc::config, "bench horizon exceeds the codec positional table");
  const int start = std::max(0, d.cache.split_idx[1] - ell);
  require(start + ell + hmax <= d.cache.T(), Errc::config, "bench horizon does not fit the cache");
  const auto base = datagen::slice_at(d.cache, start, ell, hmax);
  const Mat E = m.summary(base);
  auto sc = sample_config(cfg, derive_seed(root_seed(cfg), "bench"));
  sc.n_samples = static_cast<int>(cfg.get_int("bench.n_samples"));
  const auto table = metrics::latency_bench(
      [&](int h, int n_steps) {
        auto s = sc;
        s.n_steps = n_steps;
        const std::vector<double> qt(base.query_times.begin(), base.query_times.begin() + h);
        m.sample_values(E, qt, base.context_end(), s);
      },
      horizons, steps, static_cast<int>(cfg.get_int("bench.repeats")));
  json cells = json::array();
  std::ostringstream tsv;
  tsv << "horizon\tsteps\tmedian_ms\n";
  for (const auto& c : table.cells) {
    cells.push_back({{"horizon", c.horizon}, {"steps", c.steps}, {"median_ms", c.median_ms}, {"samples_ms", c.samples_ms}});
    tsv << c.horizon << '\t' << c.steps << '\t' << c.median_ms << '\n';
  }
  write_text(run_dir + "/latency.tsv", tsv.str());
  log << tsv.str();
  json s = {{"cells", cells}, {"workers", worker_count()}};
  const int hlo = *std::min_element(horizons.begin(), horizons.end());
  const int slo = *std::min_element(steps.begin(), steps.end()), shi = *std::max_element(steps.begin(), steps.end());
  if (hlo != hmax) s["flatness"] = table.flatness(hlo, hmax, shi);
  if (slo != shi) s["step_ratio"] = table.step_ratio(slo, shi, hlo);
  return s;
}

const std::vector<std::pair<std::string, Handler>>& handlers() {
  static const std::vector<std::pair<std::string, Handler>> h = {
      {"gen-data", cmd_gen_data},         {"pretrain-vae", cmd_pretrain_vae},
      {"pretrain-summarizer", cmd_pretrain_summarizer},
      {"train", cmd_train},               {"sample", cmd_sample},
      {"impute", cmd_impute},             {"analyze-poles", cmd_analyze_poles},
      {"renewal-report", cmd_renewal_report},
      {"sph-audit", cmd_sph_audit},       {"bench", cmd_bench},
      {"eval", cmd_eval},
  };
  return h;
}

}  // namespace

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& [n, f] : handlers()) v.push_back(n);
    return v;
  }();
  return names;
}

int exit_code_for(int errc) {
  switch (static_cast<Errc>(errc)) {
    case Errc::config:
    case Errc::unsupported_method: return 2;
    case Errc::invariant: return 3;
    case Errc::io: return 4;
    default: return 1;
  }
}

CommandOutcome run_subcommand(const std::string& name, const RunConfig& cfg, const std::string& out_dir,
                              std::ostream& log) {
  Handler fn = nullptr;
  for (const auto& [n, f] : handlers())
    if (n == name) fn = f;
  require(fn != nullptr, Errc::config, "unknown subcommand " + name);
  ensure_dir(out_dir);
  const std::string stamp = timestamp();
  std::string run_dir = out_dir + "/runs/" + name + "-" + cfg.hash_hex() + "-" + stamp;
  for (int k = 1; fs::exists(run_dir); ++k)
    run_dir = out_dir + "/runs/" + name + "-" + cfg.hash_hex() + "-" + stamp + "-" + std::to_string(k);
  ensure_dir(run_dir);
  json manifest = {{"subcommand", name},
                   {"code_version", kCodeVersion},
                   {"config_hash", cfg.hash_hex()},
                   {"preset", cfg.preset_name()},
                   {"seed", cfg.get_int("seed")},
                   {"config", cfg.values()},
                   {"workers", worker_count()},
                   {"started", stamp},
                   {"out_dir", out_dir}};
  const auto t0 = std::chrono::steady_clock::now();
  auto finish = [&](const char* status) {
    manifest["status"] = status;
    manifest["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_json(run_dir + "/manifest.json", manifest);
  };
  try {
    CommandOutcome o;
    o.summary = fn(cfg, out_dir, run_dir, log);
    o.run_dir = run_dir;
    manifest["summary"] = o.summary;
    finish("ok");
    return o;
  } catch (const Error& e) {
    manifest["error"] = {{"code", errc_name(e.code())}, {"message", e.what()}};
    try {
      finish("error");
    } catch (...) {
    }
    throw;
  }
}

}  // namespace lld::pipeline
