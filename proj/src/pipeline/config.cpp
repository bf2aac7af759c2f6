#include "pipeline/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "common/error.hpp"
#include "common/rng.hpp"

namespace lld::pipeline {

namespace {

using K = KeyType;

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

bool parse_real(const std::string& s, double& out) {
  if (s == "pi") {
    out = M_PI;
    return true;
  }
  try {
    std::size_t pos = 0;
    out = std::stod(s, &pos);
    return pos == s.size() && std::isfinite(out);
  } catch (...) {
    return false;
  }
}

bool parse_int(const std::string& s, long long& out) {
  try {
    std::size_t pos = 0;
    out = std::stoll(s, &pos);
    return pos == s.size();
  } catch (...) {
    return false;
  }
}

bool parse_bool(const std::string& s, bool& out) {
  if (s == "true" || s == "1" || s == "on") {
    out = true;
    return true;
  }
  if (s == "false" || s == "0" || s == "off") {
    out = false;
    return true;
  }
  return false;
}

const KeySpec* find_key(const std::string& name) {
  for (const auto& k : key_schema())
    if (k.name == name) return &k;
  return nullptr;
}

void check_value(const KeySpec& k, const std::string& v) {
  double d;
  long long i;
  bool b;
  bool ok = true;
  switch (k.type) {
    case K::integer: ok = parse_int(v, i); break;
    case K::real: ok = parse_real(v, d); break;
    case K::boolean: ok = parse_bool(v, b); break;
    case K::text: ok = !v.empty(); break;
    case K::real_list: {
      std::stringstream ss(v);
      std::string part;
      int n = 0;
      while (std::getline(ss, part, ',')) {
        ok = ok && parse_real(trim(part), d);
        ++n;
      }
      ok = ok && n > 0;
      break;
    }
  }
  require(ok, Errc::config, "invalid value '" + v + "' for key " + k.name);
}

}  // namespace

const std::vector<KeySpec>& key_schema() {
  static const std::vector<KeySpec> schema = {
      {"seed", K::integer, "0", "0", "root seed for every random stream"},
      // synthetic data and cache
      {"data.n_entities", K::integer, "8", "8", "entities per panel"},
      {"data.d_y", K::integer, "4", "4", "observed channels"},
      {"data.T_total", K::integer, "3000", "3000", "renewal events"},
      {"data.keep_prob", K::real, "0.7", "0.7", "per-channel observation probability"},
      {"data.noise_std", K::real, "0.05", "0.05", "observation noise"},
      {"data.gap_rate", K::real, "1.0", "1.0", "exponential gap rate"},
      {"data.kick_rate", K::real, "0.02", "0.02", "Poisson rate of modal excitation kicks"},
      {"data.kick_scale", K::real, "1.0", "1.0", "kick magnitude"},
      {"data.entity_perturbation", K::real, "0.3", "0.3", "per-entity residue perturbation std"},
      {"data.shift_at", K::real, "-1", "-1", "event fraction where the regime shift starts (negative: none)"},
      {"data.shift_freq_factor", K::real, "1.0", "1.0", "post-shift frequency multiplier"},
      {"data.shift_decay_factor", K::real, "1.0", "1.0", "post-shift decay multiplier"},
      {"data.ell", K::integer, "48", "336", "history length"},
      {"data.h", K::integer, "24", "168", "forecast horizon"},
      {"data.resolution", K::real, "0.01", "0.01", "native grid resolution"},
      {"data.split_train", K::real, "0.7", "0.7", "train fraction"},
      {"data.split_val", K::real, "0.1", "0.1", "validation fraction"},
      {"data.min_coverage", K::real, "0", "0", "minimum per-timestamp coverage"},
      // latent codec
      {"vae.d_z", K::integer, "8", "24", "latent channels"},
      {"vae.d_model", K::integer, "32", "128", "transformer width"},
      {"vae.ffn", K::integer, "64", "256", "feed-forward width"},
      {"vae.layers", K::integer, "2", "3", "encoder and decoder layers"},
      {"vae.heads", K::integer, "4", "4", "attention heads"},
      {"vae.dropout", K::real, "0.1", "0.1", "dropout"},
      {"vae.h_max", K::integer, "256", "256", "positional table size"},
      {"vae.lr", K::real, "1e-3", "1e-4", "learning rate"},
      {"vae.weight_decay", K::real, "1e-4", "1e-4", "weight decay"},
      {"vae.clip", K::real, "1.0", "1.0", "gradient clip"},
      {"vae.beta", K::real, "1e-3", "1e-3", "KL weight"},
      {"vae.kl_warmup", K::real, "5", "5", "KL warmup epochs"},
      {"vae.kl_anneal", K::real, "25", "25", "KL anneal epochs"},
      {"vae.min_epochs", K::integer, "40", "40", "epochs before early stopping"},
      {"vae.patience", K::integer, "20", "20", "early-stop patience"},
      {"vae.max_epochs", K::integer, "600", "600", "epoch cap"},
      {"vae.batch", K::integer, "16", "10", "windows per batch"},
      {"vae.windows_per_epoch", K::integer, "256", "0", "windows drawn per epoch (0 = all)"},
      {"vae.time_budget_s", K::real, "240", "1e9", "wall-clock budget"},
      // history summarizer
      {"sum.S", K::integer, "8", "336", "summary tokens"},
      {"sum.d_ctx", K::integer, "32", "256", "summary width"},
      {"sum.d_mix", K::integer, "16", "64", "feature mixing width"},
      {"sum.d_t", K::integer, "9", "9", "Time2Vec width"},
      {"sum.layers", K::integer, "2", "2", "temporal encoder layers"},
      {"sum.heads", K::integer, "4", "4", "temporal encoder heads"},
      {"sum.ffn", K::integer, "64", "256", "temporal encoder feed-forward width"},
      {"sum.proxy_hidden", K::integer, "32", "32", "proxy MLP hidden width"},
      {"sum.dropout", K::real, "0.0", "0.1", "dropout"},
      {"sum.time_scale", K::real, "0", "0", "relative-time target divisor (0 = history length)"},
      {"sum.loss_weights", K::real_list, "1,0.1,0.1,0.05,0.05", "1,0.1,0.1,0.05,0.05", "X, V, T, dt, mask weights"},
      {"sum.lr", K::real, "1e-3", "1e-4", "learning rate"},
      {"sum.weight_decay", K::real, "1e-4", "1e-4", "weight decay"},
      {"sum.clip", K::real, "1.0", "1.0", "gradient clip"},
      {"sum.max_epochs", K::integer, "200", "200", "epoch cap"},
      {"sum.patience", K::integer, "10", "10", "early-stop patience"},
      {"sum.batch", K::integer, "16", "10", "windows per batch"},
      {"sum.windows_per_epoch", K::integer, "256", "0", "windows drawn per epoch (0 = all)"},
      {"sum.time_budget_s", K::real, "180", "1e9", "wall-clock budget"},
      // denoiser and diffusion training
      {"diff.T", K::integer, "1000", "1000", "diffusion steps"},
      {"diff.schedule", K::text, "cosine", "cosine", "noise schedule"},
      {"diff.prediction", K::text, "x0", "x0", "prediction target"},
      {"diff.loss_weighting", K::text, "weighted_min_snr", "weighted_min_snr", "loss weighting"},
      {"diff.gamma", K::real, "5.0", "5.0", "min-SNR cap"},
      {"diff.d_model", K::integer, "48", "256", "denoiser width"},
      {"diff.L", K::integer, "2", "5", "refinement blocks"},
      {"diff.heads", K::integer, "4", "4", "attention heads"},
      {"diff.ffn", K::integer, "96", "512", "refinement feed-forward width"},
      {"diff.K", K::integer, "16", "256", "number of poles"},
      {"diff.time_features", K::integer, "8", "16", "sinusoid pairs for time embeddings"},
      {"diff.dropout", K::real, "0.0", "0.0", "dropout (recorded; the denoiser uses none)"},
      {"diff.p_uncond", K::real, "0.18", "0.18", "conditioning drop probability"},
      {"diff.rho_min", K::real, "1e-6", "1e-6", "decay floor"},
      {"diff.omega_max", K::real, "pi", "pi", "frequency ceiling"},
      {"diff.tanh_scale_rho", K::real, "0.5", "0.5", "decay perturbation scale"},
      {"diff.tanh_scale_omega", K::real, "0.5", "0.5", "frequency perturbation scale"},
      {"diff.lr", K::real, "1e-3", "1.5e-4", "base learning rate"},
      {"diff.min_lr", K::real, "3e-6", "3e-6", "learning-rate floor"},
      {"diff.lr_schedule", K::text, "warmup_constant", "warmup_constant", "learning-rate schedule"},
      {"diff.warmup", K::real, "0.095", "0.095", "warmup fraction"},
      {"diff.weight_decay", K::real, "5e-4", "5e-4", "weight decay"},
      {"diff.clip", K::real, "1.0", "1.0", "gradient clip"},
      {"diff.max_epochs", K::integer, "60", "600", "epoch cap"},
      {"diff.patience", K::integer, "50", "50", "early-stop patience"},
      {"diff.ema", K::real, "0.999", "0.999", "EMA decay"},
      {"diff.batch", K::integer, "32", "10", "windows per batch"},
      {"diff.windows_per_epoch", K::integer, "0", "0", "windows drawn per epoch (0 = all)"},
      {"diff.time_budget_s", K::real, "840", "1e9", "wall-clock budget"},
      // sampling
      {"sample.steps", K::integer, "64", "64", "reverse steps"},
      {"sample.sampler", K::text, "ddim", "ddim", "sampler"},
      {"sample.step_schedule", K::text, "karras", "karras", "step selection"},
      {"sample.eta", K::real, "0.0", "0.0", "DDIM eta"},
      {"sample.guidance", K::real, "1.0", "1.0", "guidance weight"},
      {"sample.guidance_power", K::real, "1.0", "1.0", "recorded only"},
      {"sample.karras_rho", K::real, "7.5", "7.5", "Karras exponent"},
      {"sample.threshold", K::boolean, "true", "true", "apply dynamic thresholding every step"},
      {"sample.threshold_p", K::real, "0.995", "0.995", "threshold quantile"},
      {"sample.threshold_max", K::real, "1.0", "1.0", "threshold floor"},
      {"sample.n_samples", K::integer, "25", "25", "samples per window"},
      {"sample.split", K::text, "test", "test", "split to forecast"},
      {"sample.max_windows", K::integer, "40", "0", "evenly spaced window cap (0 = all)"},
      {"sample.horizon", K::integer, "0", "0", "forecast length override (0 = data.h)"},
      {"sample.fixed_poles", K::boolean, "false", "false", "use base poles only"},
      {"sample.audit_every_step", K::boolean, "false", "false", "check the decay envelope at every step, not only the last"},
      // imputation
      {"impute.queries", K::integer, "12", "24", "history timestamps to impute"},
      {"impute.hide_fraction", K::real, "0.3", "0.3", "fraction of observed history entries hidden"},
      {"impute.max_windows", K::integer, "10", "0", "windows to impute"},
      // pole analysis
      {"poles.tau", K::integer, "1", "1", "diffusion step for pole evaluation"},
      {"poles.max_windows", K::integer, "100", "0", "summaries used for statistics"},
      // renewal report
      {"renewal.samples", K::integer, "1000000", "1000000", "Monte Carlo samples"},
      {"renewal.gamma_shape", K::real, "2.0", "2.0", "shape of the gamma gap family"},
      // port-Hamiltonian audit
      {"sph.systems", K::integer, "5", "20", "random systems"},
      {"sph.d", K::integer, "3", "4", "state dimension"},
      {"sph.d_u", K::integer, "1", "2", "input dimension"},
      {"sph.paths", K::integer, "2000", "10000", "Monte Carlo paths"},
      {"sph.t_end", K::real, "1.0", "1.0", "horizon"},
      {"sph.dt", K::real, "0", "0", "step (0 = automatic)"},
      {"sph.input", K::real, "0.5", "0.5", "constant input level"},
      {"sph.intervals", K::integer, "10", "10", "ledger intervals"},
      // benchmark
      {"bench.horizons", K::real_list, "24,168", "24,168", "horizons"},
      {"bench.steps", K::real_list, "16,64", "16,64", "reverse step counts"},
      {"bench.repeats", K::integer, "5", "5", "timed repeats per cell"},
      {"bench.n_samples", K::integer, "25", "25", "chains per timed call"},
  };
  return schema;
}

RunConfig RunConfig::preset(const std::string& name) {
  require(name == "default" || name == "paper", Errc::config, "unknown preset " + name);
  RunConfig c;
  c.preset_ = name;
  for (const auto& k : key_schema()) c.values_[k.name] = name == "paper" ? k.paper : k.toy;
  return c;
}

RunConfig RunConfig::load(const std::string& preset_or_path) {
  if (preset_or_path == "default" || preset_or_path == "paper") return preset(preset_or_path);
  std::ifstream in(preset_or_path);
  require(static_cast<bool>(in), Errc::config, "cannot read config file " + preset_or_path);
  std::vector<std::pair<std::string, std::string>> kv;
  std::string base = "default", line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, Errc::config,
            preset_or_path + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string k = trim(line.substr(0, eq)), v = trim(line.substr(eq + 1));
    if (k == "preset")
      base = v;
    else
      kv.emplace_back(k, v);
  }
  RunConfig c = preset(base);
  for (const auto& [k, v] : kv) c.set(k, v);
  return c;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const KeySpec* k = find_key(key);
  require(k != nullptr, Errc::config, "unknown config key " + key);
  check_value(*k, value);
  values_[key] = value;
}

void RunConfig::set_assignment(const std::string& kv) {
  const auto eq = kv.find('=');
  require(eq != std::string::npos, Errc::config, "expected key=value, got '" + kv + "'");
  set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  require(it != values_.end(), Errc::config, "unknown config key " + key);
  return it->second;
}

long long RunConfig::get_int(const std::string& key) const {
  long long v = 0;
  require(parse_int(get(key), v), Errc::config, "key " + key + " is not an integer");
  return v;
}

double RunConfig::get_real(const std::string& key) const {
  double v = 0;
  require(parse_real(get(key), v), Errc::config, "key " + key + " is not a number");
  return v;
}

bool RunConfig::get_bool(const std::string& key) const {
  bool v = false;
  require(parse_bool(get(key), v), Errc::config, "key " + key + " is not a boolean");
  return v;
}

std::vector<double> RunConfig::get_list(const std::string& key) const {
  std::vector<double> out;
  std::stringstream ss(get(key));
  std::string part;
  while (std::getline(ss, part, ',')) {
    double d = 0;
    require(parse_real(trim(part), d), Errc::config, "key " + key + " has a non-numeric entry");
    out.push_back(d);
  }
  return out;
}

std::string RunConfig::dump() const {
  std::string s;
  for (const auto& [k, v] : values_) s += k + "=" + v + "\n";
  return s;
}

std::uint64_t RunConfig::hash() const { return fnv1a64(dump()); }

std::string RunConfig::hash_hex() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash()));
  return buf;
}

}  // namespace lld::pipeline
