#pragma once

// Run configuration shared by every stage, loaded from one JSON file.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "alignreplay/chat_template.hpp"
#include "alignreplay/gateway.hpp"
#include "alignreplay/mixing.hpp"
#include "alignreplay/post_processing.hpp"
#include "alignreplay/similarity.hpp"

namespace alignreplay {

struct PipelineConfig {
  /// Roles: generator (query and response sampling), scorer (log-probs),
  /// embedder, guardrail, eval_model. Missing scorer and eval_model fall back
  /// to the generator.
  std::map<std::string, gateway::EndpointConfig> endpoints;

  std::string template_family = "llama3";
  std::optional<std::filesystem::path> templates_file;
  std::vector<std::string> keywords;  // empty: built-in subdomains

  gateway::GenerationParams query_params = gateway::GenerationParams::query_generation();
  gateway::GenerationParams response_params = gateway::GenerationParams::response_generation();
  gateway::GenerationParams eval_params = gateway::GenerationParams::deterministic();
  gateway::VerdictRule verdict_rule = gateway::VerdictRule::harmful_response_line();

  post::FilterConfig filter;
  mixing::MixConfig mix;
  similarity::QuantizationConfig similarity;

  std::optional<std::filesystem::path> task_file;
  std::optional<std::filesystem::path> eval_queries;
  std::string eval_field_map = "query=query";

  std::uint64_t seed = 0;

  /// Relative paths are resolved against `base_dir`.
  static PipelineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static PipelineConfig from_file(const std::filesystem::path& path);

  /// Secrets excluded; this is what config_hash covers.
  nlohmann::json to_json() const;

  /// Throws InvalidArgument naming the missing role.
  const gateway::EndpointConfig& endpoint(const std::string& role) const;
  bool has_endpoint(const std::string& role) const;

  templates::ChatTemplate chat_template() const;
  std::vector<std::string> keyword_texts() const;
};

}  // namespace alignreplay
