#pragma once

// Record types that flow between pipeline stages, and their JSONL schemas.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace alignreplay {

inline constexpr std::string_view kQuerySchema = "query.v1";
inline constexpr std::string_view kResponseSchema = "response.v1";
inline constexpr std::string_view kSftSchema = "sft.v1";
inline constexpr std::string_view kManifestSchema = "manifest.v1";

// `unaudited` marks responses that have not been through the guardrail yet;
// `unknown` is reserved for quarantined records.
enum class SafetyLabel { safe, unsafe, unknown, unaudited };
enum class Difficulty { easy, difficult, untagged };

std::string_view to_string(SafetyLabel label);
std::string_view to_string(Difficulty difficulty);
SafetyLabel safety_label_from_string(std::string_view s);
Difficulty difficulty_from_string(std::string_view s);

struct SubdomainKeyword {
  std::string text;
  std::size_t index = 0;

  bool operator==(const SubdomainKeyword&) const = default;
};

struct QueryRecord {
  std::string id;
  SubdomainKeyword subdomain;
  std::string query_text;
  std::string raw_continuation;
  std::int64_t ingestion_index = 0;
  bool quoted = true;
  std::optional<std::vector<float>> embedding;
  std::optional<double> perplexity;

  bool operator==(const QueryRecord&) const = default;
};

struct ResponseRecord {
  std::string query_id;
  std::string query_text;
  std::string subdomain;
  std::string response_text;
  SafetyLabel safety_label = SafetyLabel::unaudited;
  Difficulty difficulty = Difficulty::untagged;
  bool revised = false;
  std::optional<std::string> quarantine_reason;

  bool quarantined() const noexcept { return quarantine_reason.has_value(); }
  bool operator==(const ResponseRecord&) const = default;
};

nlohmann::json to_json(const QueryRecord& record);
nlohmann::json to_json(const ResponseRecord& record);
QueryRecord query_from_json(const nlohmann::json& j);
ResponseRecord response_from_json(const nlohmann::json& j);

/// Required top-level fields per schema id (excluding "schema" itself).
const std::vector<std::string>& required_fields(std::string_view schema);

}  // namespace alignreplay
