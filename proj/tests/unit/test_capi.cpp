#include <doctest.h>

#include <cmath>
#include <complex>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <sys/wait.h>

#include "lld/lld.h"

namespace fs = std::filesystem;

namespace {

int cli(const std::string& args) {
  const std::string cmd = std::string(LLD_CLI_PATH) + " " + args + " --quiet > /dev/null 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

}  // namespace

TEST_CASE("configuration handles") {
  lld_config* cfg = nullptr;
  REQUIRE(lld_config_create("default", &cfg) == LLD_OK);
  CHECK(lld_config_set(cfg, "diff.K", "12") == LLD_OK);
  char buf[32];
  size_t needed = 0;
  CHECK(lld_config_get(cfg, "diff.K", buf, sizeof buf, &needed) == LLD_OK);
  CHECK(std::string(buf) == "12");
  CHECK(needed == 3);
  CHECK(lld_config_get(cfg, "diff.K", buf, 1, &needed) == LLD_ERR_ARGUMENT);
  CHECK(lld_config_set(cfg, "nope.key", "1") == LLD_ERR_CONFIG);
  CHECK(std::string(lld_last_error()).size() > 0);
  CHECK(lld_exit_code(LLD_ERR_CONFIG) == 2);
  CHECK(lld_config_set_assignment(cfg, "sample.guidance=1.5") == LLD_OK);
  uint64_t h1 = 0, h2 = 0;
  CHECK(lld_config_hash(cfg, &h1) == LLD_OK);
  CHECK(lld_config_set(cfg, "sample.guidance", "1.0") == LLD_OK);
  CHECK(lld_config_hash(cfg, &h2) == LLD_OK);
  CHECK(h1 != h2);
  lld_config_destroy(cfg);
  CHECK(lld_config_create(nullptr, &cfg) == LLD_ERR_ARGUMENT);
  CHECK(lld_config_create("/missing/config.cfg", &cfg) != LLD_OK);
}

TEST_CASE("status names and exit codes") {
  CHECK(std::string(lld_status_name(LLD_OK)) == "ok");
  CHECK(std::string(lld_status_name(LLD_ERR_INVARIANT)) == "invariant");
  CHECK(lld_exit_code(LLD_OK) == 0);
  CHECK(lld_exit_code(LLD_ERR_INVARIANT) == 3);
  CHECK(lld_exit_code(LLD_ERR_IO) == 4);
  CHECK(lld_exit_code(LLD_ERR_UNSUPPORTED_METHOD) == 2);
  CHECK(lld_exit_code(LLD_ERR_NONFINITE) == 1);
  CHECK(lld_subcommand_count() == 11);
  CHECK(std::string(lld_subcommand_name(0)) == "gen-data");
  CHECK(lld_subcommand_name(99) == nullptr);
  CHECK(std::string(lld_version()) == "0.1.0");
}

TEST_CASE("numeric helpers") {
  const double xs[2] = {0.0, 2.0};
  double c = -1;
  CHECK(lld_crps(xs, 2, 1.0, &c) == LLD_OK);
  CHECK(c == doctest::Approx(0.5));
  CHECK(lld_crps(xs, 0, 1.0, &c) == LLD_ERR_ARGUMENT);

  double re = 0, im = 0;
  CHECK(lld_renewal_multiplier(0.1, 0.5, 1, 2.0, 0.0, &re, &im) == LLD_OK);
  // Exponential gaps with rate r: r / (r - s).
  const std::complex<double> s(-0.1, 0.5), ref = 2.0 / (2.0 - s);
  CHECK(re == doctest::Approx(ref.real()).epsilon(1e-12));
  CHECK(im == doctest::Approx(ref.imag()).epsilon(1e-12));
  CHECK(lld_renewal_multiplier(0.1, 0.5, 7, 1.0, 0.0, &re, &im) == LLD_ERR_UNSUPPORTED_METHOD);

  double ab = 0;
  CHECK(lld_alpha_bar(1000, 0, &ab) == LLD_OK);
  CHECK(ab == 1.0);
  CHECK(lld_alpha_bar(1000, 1000, &ab) == LLD_OK);
  CHECK(ab < 1e-3);
  CHECK(lld_alpha_bar(10, 11, &ab) == LLD_ERR_VALIDATION);
}

TEST_CASE("running subcommands through the library") {
  const fs::path out = fs::temp_directory_path() / "lld_capi_run";
  fs::remove_all(out);
  lld_config* cfg = nullptr;
  REQUIRE(lld_config_create(LLD_TEST_DATA_DIR "/tiny.cfg", &cfg) == LLD_OK);
  CHECK(lld_run("sample", cfg, out.c_str(), 0) == LLD_ERR_IO);
  CHECK(lld_run("gen-data", cfg, out.c_str(), 0) == LLD_OK);
  const std::string summary = lld_last_summary();
  CHECK(summary.find("\"run_dir\"") != std::string::npos);
  CHECK(summary.find("\"windows\"") != std::string::npos);
  CHECK(lld_run(nullptr, cfg, out.c_str(), 0) == LLD_ERR_ARGUMENT);
  lld_config_destroy(cfg);
  fs::remove_all(out);
}

TEST_CASE("command-line exit codes") {
  const fs::path out = fs::temp_directory_path() / "lld_capi_cli";
  fs::remove_all(out);
  const std::string base = std::string("--config ") + LLD_TEST_DATA_DIR "/tiny.cfg --out " + out.string();
  CHECK(cli("sph-audit " + base + " --seed 7") == 0);
  CHECK(cli("sph-audit " + base + " --set no.such.key=1") == 2);
  CHECK(cli("sph-audit " + base + " --steps abc") == 2);
  CHECK(cli("frobnicate " + base) == 2);
  CHECK(cli("sample " + base) == 4);
  CHECK(cli("gen-data " + base + " --min-coverage 0.2") == 0);
  CHECK(cli("sample " + base + " --min-coverage 0.0") == 2);
  // Sampling with an architecture the checkpoints were not built for is a config error.
  CHECK(cli("train " + base + " --min-coverage 0.2") == 0);
  CHECK(cli("sample " + base + " --min-coverage 0.2 --set diff.K=9") == 2);
  CHECK(cli("sample " + base + " --min-coverage 0.2 --steps 3 --guidance 1.5 --horizon 4") == 0);
  CHECK(cli("eval " + base + " --min-coverage 0.2") == 0);
  fs::remove_all(out);
}
