#include "lld/lld.h"

#include <cstring>
#include <iostream>
#include <new>
#include <sstream>
#include <string>

#include "common/error.hpp"
#include "diffusion/diffusion.hpp"
#include "metrics/metrics.hpp"
#include "pipeline/commands.hpp"
#include "pipeline/config.hpp"
#include "renewal/renewal.hpp"

struct lld_config {
  lld::pipeline::RunConfig cfg;
};

namespace {

thread_local std::string g_error;
thread_local std::string g_summary;

lld_status status_of(lld::Errc c) { return static_cast<lld_status>(static_cast<int>(c)); }

template <class F>
lld_status guarded(F&& f) {
  g_error.clear();
  try {
    f();
    return LLD_OK;
  } catch (const lld::Error& e) {
    g_error = e.what();
    return status_of(e.code());
  } catch (const std::bad_alloc&) {
    g_error = "out of memory";
    return LLD_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_error = e.what();
    return LLD_ERR_INTERNAL;
  }
}

lld_status bad_argument(const char* what) {
  g_error = what;
  return LLD_ERR_ARGUMENT;
}

}  // namespace

extern "C" {

const char* lld_version(void) { return "0.1.0"; }

const char* lld_status_name(lld_status s) {
  if (s == LLD_OK) return "ok";
  if (s == LLD_ERR_ARGUMENT) return "argument";
  if (s >= LLD_ERR_VALIDATION && s <= LLD_ERR_INTERNAL) return lld::errc_name(static_cast<lld::Errc>(s));
  return "unknown";
}

int lld_exit_code(lld_status s) {
  if (s == LLD_OK) return 0;
  if (s == LLD_ERR_ARGUMENT) return 2;
  return lld::pipeline::exit_code_for(static_cast<int>(s));
}

const char* lld_last_error(void) { return g_error.c_str(); }
const char* lld_last_summary(void) { return g_summary.c_str(); }

lld_status lld_config_create(const char* preset_or_path, lld_config** out) {
  if (!preset_or_path || !out) return bad_argument("null argument");
  *out = nullptr;
  return guarded([&] { *out = new lld_config{lld::pipeline::RunConfig::load(preset_or_path)}; });
}

void lld_config_destroy(lld_config* cfg) { delete cfg; }

lld_status lld_config_set(lld_config* cfg, const char* key, const char* value) {
  if (!cfg || !key || !value) return bad_argument("null argument");
  return guarded([&] { cfg->cfg.set(key, value); });
}

lld_status lld_config_set_assignment(lld_config* cfg, const char* assignment) {
  if (!cfg || !assignment) return bad_argument("null argument");
  return guarded([&] { cfg->cfg.set_assignment(assignment); });
}

lld_status lld_config_get(const lld_config* cfg, const char* key, char* buf, size_t buf_len, size_t* needed) {
  if (!cfg || !key) return bad_argument("null argument");
  std::string v;
  const lld_status s = guarded([&] { v = cfg->cfg.get(key); });
  if (s != LLD_OK) return s;
  if (needed) *needed = v.size() + 1;
  if (!buf || buf_len < v.size() + 1) return bad_argument("buffer too small");
  std::memcpy(buf, v.c_str(), v.size() + 1);
  return LLD_OK;
}

lld_status lld_config_hash(const lld_config* cfg, uint64_t* out) {
  if (!cfg || !out) return bad_argument("null argument");
  *out = cfg->cfg.hash();
  return LLD_OK;
}

size_t lld_subcommand_count(void) { return lld::pipeline::subcommands().size(); }

const char* lld_subcommand_name(size_t i) {
  const auto& v = lld::pipeline::subcommands();
  return i < v.size() ? v[i].c_str() : nullptr;
}

lld_status lld_run(const char* subcommand, const lld_config* cfg, const char* out_dir, int verbose) {
  if (!subcommand || !cfg || !out_dir) return bad_argument("null argument");
  g_summary.clear();
  return guarded([&] {
    std::ostringstream sink;
    std::ostream& log = verbose ? std::cout : static_cast<std::ostream&>(sink);
    auto o = lld::pipeline::run_subcommand(subcommand, cfg->cfg, out_dir, log);
    log.flush();
    nlohmann::json j = {{"run_dir", o.run_dir}, {"summary", o.summary}};
    g_summary = j.dump();
  });
}

lld_status lld_crps(const double* samples, size_t m, double y, double* out) {
  if (!samples || !out || m == 0) return bad_argument("need at least one sample");
  return guarded([&] { *out = lld::metrics::crps_empirical(std::vector<double>(samples, samples + m), y); });
}

lld_status lld_renewal_multiplier(double rho, double omega, int kind, double p1, double p2, double* re, double* im) {
  if (!re || !im) return bad_argument("null argument");
  return guarded([&] {
    using G = lld::renewal::GapDistribution;
    G g;
    switch (kind) {
      case 0: g = G::deterministic(p1); break;
      case 1: g = G::exponential(p1); break;
      case 2: g = G::gamma(p1, p2); break;
      default: lld::fail(lld::Errc::unsupported_method, "gap kind has no closed form");
    }
    const auto m = lld::renewal::effective_multiplier({rho, omega}, g, lld::renewal::Method::closed_form);
    *re = m.lambda.real();
    *im = m.lambda.imag();
  });
}

lld_status lld_alpha_bar(int T, int tau, double* out) {
  if (!out) return bad_argument("null argument");
  return guarded([&] {
    lld::require(T >= 1 && tau >= 0 && tau <= T, lld::Errc::validation, "tau must lie in [0, T]");
    *out = lld::diffusion::cosine_schedule(T).alpha_bar[static_cast<std::size_t>(tau)];
  });
}

}  // extern "C"
