#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "pipeline/config.hpp"

namespace lld::pipeline {

const std::vector<std::string>& subcommands();

struct CommandOutcome {
  int exit_code = 0;
  std::string run_dir;
  nlohmann::json summary;
};

// Runs one subcommand. Artifacts live under `out_dir`:
//   cache/            ratio-index cache plus truth.json
//   vae.lldc, summarizer.lldc, diffusion.lldc
//   samples/          forecast bundles written by `sample`, read by `eval`
//   runs/<subcommand>-<hash>-<timestamp>/manifest.json and run outputs
// Human-readable progress goes to `log`. Errors are thrown as lld::Error.
CommandOutcome run_subcommand(const std::string& name, const RunConfig& cfg, const std::string& out_dir,
                              std::ostream& log);

// Maps an error category to the process exit status.
int exit_code_for(int errc);

}  // namespace lld::pipeline
