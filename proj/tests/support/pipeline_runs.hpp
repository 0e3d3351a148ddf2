#pragma once

// Drives `alignreplay pipeline` in-process against the scripted backend.

#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "alignreplay/cli.hpp"
#include "alignreplay/store.hpp"
#include "e2e_fixture.hpp"

namespace alignreplay::testing {

struct PipelineRun {
  int exit_code = -1;
  std::string out;
  std::string err;
};

inline PipelineRun run_pipeline(const std::filesystem::path& config, const std::filesystem::path& workdir,
                                std::vector<std::string> extra = {}) {
  std::vector<std::string> args = {"--config", config.string(), "--log-level", "warn", "pipeline", "--workdir",
                                   workdir.string()};
  args.insert(args.end(), extra.begin(), extra.end());
  std::ostringstream out, err;
  PipelineRun r;
  r.exit_code = cli::run(args, out, err).exit_code;
  r.out = out.str();
  r.err = err.str();
  return r;
}

/// File name -> bytes for every final output present in `workdir`.
inline std::map<std::string, std::string> final_outputs(const std::filesystem::path& workdir) {
  std::map<std::string, std::string> out;
  for (const auto& name : e2e_final_outputs()) {
    if (std::filesystem::exists(workdir / name)) out[name] = slurp(workdir / name);
  }
  return out;
}

inline std::vector<store::RunManifest> chain_manifests(const std::filesystem::path& workdir) {
  std::vector<store::RunManifest> chain;
  for (const char* f : {"queries.jsonl", "filtered.jsonl", "responses.jsonl", "sft.jsonl"}) {
    chain.push_back(store::read_manifest(store::manifest_path_for(workdir / f)));
  }
  return chain;
}

}  // namespace alignreplay::testing
