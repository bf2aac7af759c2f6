// Command-line front end over the C API.
#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lld/lld.h"

namespace {

// One machine-readable line per failure, on stderr.
int report(lld_status s, const std::string& context) {
  std::string msg = lld_last_error();
  for (auto& c : msg)
    if (c == '"' || c == '\n') c = '\'';
  std::fprintf(stderr, "lld-error status=%s exit=%d context=%s message=\"%s\"\n", lld_status_name(s),
               lld_exit_code(s), context.c_str(), msg.c_str());
  return lld_exit_code(s);
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> names;
  for (size_t i = 0; i < lld_subcommand_count(); ++i) names.emplace_back(lld_subcommand_name(i));

  CLI::App app{"Latent modal diffusion toolkit"};
  std::string sub, config = "default", out = "lld_out";
  std::vector<std::string> sets;
  long long seed = -1;
  int steps = -1, horizon = -1;
  double guidance = -1.0, min_coverage = -1.0;
  bool quiet = false;
  app.add_option("subcommand", sub, "gen-data | pretrain-vae | pretrain-summarizer | train | sample | impute | "
                                    "analyze-poles | renewal-report | sph-audit | bench | eval")
      ->required()
      ->check(CLI::IsMember(names));
  app.add_option("--config", config, "preset name (default, paper) or key = value file");
  app.add_option("--set", sets, "override one key, key=value (repeatable)");
  app.add_option("--seed", seed, "root seed")->check(CLI::NonNegativeNumber);
  app.add_option("--out", out, "artifact directory");
  app.add_option("--steps", steps, "reverse diffusion steps")->check(CLI::PositiveNumber);
  app.add_option("--guidance", guidance, "guidance weight");
  app.add_option("--horizon", horizon, "forecast length")->check(CLI::PositiveNumber);
  app.add_option("--min-coverage", min_coverage, "drop timestamps below this observed fraction")
      ->check(CLI::Range(0.0, 1.0));
  app.add_flag("--quiet", quiet, "suppress progress output");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::fprintf(stderr, "lld-error status=config exit=2 context=arguments message=\"%s\"\n", e.what());
    return 2;
  }

  lld_config* cfg = nullptr;
  lld_status s = lld_config_create(config.c_str(), &cfg);
  if (s != LLD_OK) return report(s, "config");
  auto set = [&](const std::string& kv) {
    const lld_status r = lld_config_set_assignment(cfg, kv.c_str());
    return r == LLD_OK ? 0 : report(r, "--set " + kv);
  };
  int rc = 0;
  for (const auto& kv : sets)
    if ((rc = set(kv))) break;
  if (!rc && seed >= 0) rc = set("seed=" + std::to_string(seed));
  if (!rc && steps > 0) rc = set("sample.steps=" + std::to_string(steps));
  if (!rc && horizon > 0) rc = set("sample.horizon=" + std::to_string(horizon));
  if (!rc && guidance >= 0.0) rc = set("sample.guidance=" + std::to_string(guidance));
  if (!rc && min_coverage >= 0.0) rc = set("data.min_coverage=" + std::to_string(min_coverage));
  if (!rc) {
    s = lld_run(sub.c_str(), cfg, out.c_str(), quiet ? 0 : 1);
    if (s == LLD_OK)
      std::printf("%s\n", lld_last_summary());
    else
      rc = report(s, sub);
  }
  lld_config_destroy(cfg);
  return rc;
}
