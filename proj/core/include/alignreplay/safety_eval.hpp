#pragma once

// Harmful Score: greedy generation on evaluation queries, guardrail
// classification, unsafe ratio in percent.

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "alignreplay/chat_template.hpp"
#include "alignreplay/gateway.hpp"
#include "alignreplay/store.hpp"

namespace alignreplay::eval {

struct Verdict {
  std::string query;
  std::string response;
  SafetyLabel label = SafetyLabel::unknown;
  std::optional<std::string> quarantine_reason;
};

struct EvalRun {
  std::string dataset;
  std::size_t query_count = 0;
  std::size_t unsafe_count = 0;
  std::size_t quarantined_count = 0;
  double harmful_score = 0.0;  // percent
  std::vector<Verdict> verdicts;

  nlohmann::json to_json() const;
  static EvalRun from_json(const nlohmann::json& j);
};

/// 100 * unsafe / (queries - quarantined). Throws EvaluationFailed when every
/// query was quarantined.
double harmful_ratio(std::size_t unsafe, std::size_t queries, std::size_t quarantined);

struct EvalSettings {
  gateway::EndpointConfig model;
  gateway::EndpointConfig guardrail;
  templates::ChatTemplate chat_template;
  gateway::VerdictRule rule = gateway::VerdictRule::harmful_response_line();
  gateway::GenerationParams params = gateway::GenerationParams::deterministic();
};

EvalRun harmful_score(const std::vector<std::string>& queries, gateway::Gateway& gw,
                      const EvalSettings& settings, std::string dataset = {});

/// Maps logical fields to source field names. Logical keys:
///   query                         the prompt text (required)
///   response, safe                single-response records; `safe` holds a
///                                 bool or "safe"/"unsafe" label
///   response_0, response_1,       preference records; `safer` holds the
///   safer, safe_0, safe_1         index (0 or 1) of the safer response
struct FieldMap {
  std::map<std::string, std::string> fields;

  /// "query=prompt,response=response"
  static FieldMap parse(std::string_view spec);
  std::optional<std::string> source(std::string_view logical) const;
};

struct EvalItem {
  std::string query;
  std::optional<std::string> response;

  bool operator==(const EvalItem&) const = default;
};

struct IngestStats {
  std::size_t lines = 0;
  std::size_t malformed = 0;
  std::size_t dropped_empty = 0;
  std::size_t dropped_unsafe = 0;
  std::size_t preference_resolved = 0;
  std::size_t kept = 0;
  std::vector<store::MalformedLine> malformed_lines;

  nlohmann::json to_json() const;
};

struct IngestResult {
  std::vector<EvalItem> items;
  IngestStats stats;

  std::vector<std::string> queries() const;
};

/// Reads queries from JSONL. With `baseline_prep`, prompt-response records are
/// cleaned for baseline training: empty or unsafe-labeled responses are
/// dropped and preference pairs keep only the safer response.
IngestResult ingest_eval_queries(const std::filesystem::path& path, const FieldMap& field_map,
                                 bool baseline_prep = false);

/// Same rules over already-parsed records; `line_numbers` parallels `records`.
IngestResult ingest_records(const std::vector<nlohmann::json>& records,
                            const std::vector<std::size_t>& line_numbers, const FieldMap& field_map,
                            bool baseline_prep);

}  // namespace alignreplay::eval
