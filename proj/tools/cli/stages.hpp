#pragma once

// Stage bodies shared by the single-stage subcommands and `pipeline`. Each
// stage writes its outputs atomically, then a manifest next to the primary
// output.

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/logger.h>

#include "alignreplay/config.hpp"
#include "alignreplay/gateway.hpp"
#include "alignreplay/store.hpp"

namespace alignreplay::cli {

namespace fs = std::filesystem;

/// A stage ran but could not complete; carries the stage name for the exit
/// message.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error(what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

struct StageContext {
  const PipelineConfig& cfg;
  gateway::Gateway& gw;
  std::shared_ptr<spdlog::logger> log;
};

struct StageResult {
  std::string stage;
  fs::path output;
  fs::path manifest;
  nlohmann::json summary;
  bool skipped = false;
};

/// Digest over the settings that determine a stage's output. Endpoint
/// locations, timeouts and concurrency are excluded; model names and
/// sampling parameters are not.
std::string stage_config_hash(const std::string& stage, const PipelineConfig& cfg,
                              const nlohmann::json& extra = nlohmann::json::object());

/// True when the manifest next to `output` matches `hash` and every recorded
/// file still has its recorded digest.
bool stage_up_to_date(const fs::path& output, const std::string& stage, const std::string& hash);

fs::path sidecar(const fs::path& output, const std::string& suffix);

StageResult run_extract(const StageContext& ctx, const fs::path& out);
StageResult run_filter(const StageContext& ctx, const fs::path& in, const fs::path& out);
StageResult run_revise(const StageContext& ctx, const fs::path& in, const fs::path& out);
StageResult run_mix(const StageContext& ctx, const fs::path& safety, const fs::path& task,
                    const fs::path& out);
StageResult run_eval(const StageContext& ctx, const fs::path& queries, const std::string& field_map,
                     const fs::path& out, const std::string& dataset);
StageResult run_similarity(const StageContext& ctx, const fs::path& ref, const fs::path& cand,
                           const std::string& field, const fs::path& out,
                           const std::optional<fs::path>& frontier_csv);

/// Roles each stage talks to.
std::vector<std::string> stage_roles(const std::string& stage);

}  // namespace alignreplay::cli
