#pragma once

// Per-subdomain query synthesis through the forced-continuation prompt, then
// one response per surviving query.

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "alignreplay/chat_template.hpp"
#include "alignreplay/gateway.hpp"
#include "alignreplay/records.hpp"

namespace alignreplay::extraction {

/// Indexes keywords in list order. Throws on empty or duplicate entries.
std::vector<SubdomainKeyword> make_keywords(const std::vector<std::string>& texts);

struct CapturedQuery {
  std::string text;
  bool quoted = false;
};

/// Takes the continuation up to the first unescaped double quote, which
/// closes the quotation opened by the assistant seed, so a continuation that
/// starts with a quote yields an empty query. Without a closing quote the
/// whole continuation is kept and `quoted` is false. Surrounding whitespace is
/// trimmed.
CapturedQuery capture_query(std::string_view continuation);

/// Stable record id for sample `sample` of keyword `keyword_index`.
std::string query_id(std::size_t keyword_index, std::size_t sample);

/// Outcome of sampling a single keyword. Records carry ingestion_index = -1
/// until assembly.
struct KeywordOutcome {
  SubdomainKeyword keyword;
  std::size_t requested = 0;
  std::size_t kept = 0;
  std::size_t dropped_empty = 0;
  std::size_t errored = 0;
  std::optional<std::string> error;
  std::vector<QueryRecord> records;

  nlohmann::json to_json() const;
  static KeywordOutcome from_json(const nlohmann::json& j);
};

struct ExtractionResult {
  std::vector<QueryRecord> queries;
  std::vector<KeywordOutcome> per_keyword;
  std::size_t raw = 0;
  std::size_t kept = 0;
  std::size_t dropped_empty = 0;
  std::size_t errored = 0;
  std::vector<std::string> failed_keywords;
  /// Query texts seen under more than one subdomain; noted, not merged.
  std::size_t cross_keyword_duplicates = 0;

  nlohmann::json counts_json() const;
};

/// Never throws for gateway failures: a failing keyword is reported with all
/// of its requested samples counted as errored.
KeywordOutcome extract_keyword(gateway::Gateway& gw, const gateway::EndpointConfig& endpoint,
                               const templates::ChatTemplate& tmpl, const SubdomainKeyword& keyword,
                               const gateway::GenerationParams& params);

/// Assigns ingestion indices in keyword order, then sample order, and tallies
/// the counts.
ExtractionResult assemble(std::vector<KeywordOutcome> outcomes);

ExtractionResult extract_queries(const std::vector<SubdomainKeyword>& keywords,
                                 const templates::ChatTemplate& tmpl, gateway::Gateway& gw,
                                 const gateway::EndpointConfig& endpoint,
                                 const gateway::GenerationParams& params =
                                     gateway::GenerationParams::query_generation());

/// Exactly one record per query, in input order. Transport or protocol
/// failures produce a quarantined record instead of a drop.
std::vector<ResponseRecord> generate_responses(const std::vector<QueryRecord>& queries,
                                               const templates::ChatTemplate& tmpl,
                                               gateway::Gateway& gw,
                                               const gateway::EndpointConfig& endpoint,
                                               const gateway::GenerationParams& params =
                                                   gateway::GenerationParams::response_generation());

}  // namespace alignreplay::extraction
