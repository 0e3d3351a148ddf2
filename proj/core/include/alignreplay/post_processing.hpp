#pragma once

// Query filters (perplexity percentiles, greedy semantic dedup, keyword
// relevance) and the guardrail audit with refusal revision.

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "alignreplay/chat_template.hpp"
#include "alignreplay/gateway.hpp"
#include "alignreplay/records.hpp"

namespace alignreplay::post {

struct FilterConfig {
  double ppl_low_pct = 5.0;
  double ppl_high_pct = 95.0;
  double dedup_threshold = 0.85;
  double relevance_threshold = 0.5;
  int max_revision_retries = 2;
  /// Percentiles over each subdomain separately instead of the pooled batch.
  bool per_keyword_percentiles = false;

  void validate() const;
  static FilterConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// input_count = output_count + every dropped_* + revision_failures.
struct FilterReport {
  std::size_t input_count = 0;
  std::size_t dropped_ppl = 0;
  std::size_t dropped_dup = 0;
  std::size_t dropped_relevance = 0;
  std::size_t dropped_unparsable = 0;
  std::size_t dropped_transport = 0;
  std::size_t revised_count = 0;
  std::size_t revision_failures = 0;
  std::size_t output_count = 0;

  bool conserved() const noexcept;
  nlohmann::json to_json() const;
  static FilterReport from_json(const nlohmann::json& j);
  bool operator==(const FilterReport&) const = default;
};

/// Linear interpolation on sorted values at rank 1 + pct/100 * (n - 1).
double percentile(std::span<const double> sorted, double pct);

double cosine_similarity(std::span<const float> a, std::span<const float> b);

/// Drops records strictly below the low or strictly above the high
/// percentile. Throws MissingPerplexity.
std::vector<QueryRecord> perplexity_filter(std::vector<QueryRecord> records, const FilterConfig& cfg);

/// Greedy scan in ascending ingestion_index: a record is dropped iff its
/// cosine with some already-kept record exceeds dedup_threshold. Throws
/// MissingEmbedding.
std::vector<QueryRecord> deduplicate(std::vector<QueryRecord> records, const FilterConfig& cfg);

/// Drops records whose cosine with their own subdomain keyword embedding is
/// strictly below relevance_threshold. Keys are keyword texts.
std::vector<QueryRecord> relevance_filter(
    std::vector<QueryRecord> records,
    const std::map<std::string, std::vector<float>>& keyword_embeddings, const FilterConfig& cfg);

struct QueryFilterResult {
  std::vector<QueryRecord> kept;
  FilterReport report;
};

/// Scores perplexity, embeds queries and keywords, then applies perplexity ->
/// dedup -> relevance in that order.
QueryFilterResult run_query_filters(std::vector<QueryRecord> records, gateway::Gateway& gw,
                                    const gateway::EndpointConfig& scorer,
                                    const gateway::EndpointConfig& embedder, const FilterConfig& cfg);

struct RevisionSettings {
  gateway::EndpointConfig generator;
  gateway::EndpointConfig guardrail;
  templates::ChatTemplate chat_template;
  gateway::VerdictRule rule = gateway::VerdictRule::harmful_response_line();
  gateway::GenerationParams params = gateway::GenerationParams::response_generation();
};

struct RevisionResult {
  std::vector<ResponseRecord> kept;
  std::vector<ResponseRecord> quarantined;
  FilterReport report;
};

/// Safe responses pass as easy. Unsafe ones are regenerated with the refusal
/// instruction and re-audited, at most 1 + max_revision_retries times; a safe
/// refusal is stored against the original query as difficult/revised, and a
/// record that never yields one is dropped. Unparsable verdicts and transport
/// failures quarantine the record. Output keeps input order.
RevisionResult audit_and_revise(const std::vector<ResponseRecord>& responses, gateway::Gateway& gw,
                                const RevisionSettings& settings, const FilterConfig& cfg);

}  // namespace alignreplay::post
