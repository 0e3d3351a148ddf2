#include "alignreplay/post_processing.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "alignreplay/errors.hpp"

namespace alignreplay::post {

void FilterConfig::validate() const {
  if (!(ppl_low_pct >= 0.0 && ppl_low_pct < ppl_high_pct && ppl_high_pct <= 100.0)) {
    throw InvalidArgument("perplexity percentiles must satisfy 0 <= low < high <= 100");
  }
  for (double t : {dedup_threshold, relevance_threshold}) {
    if (!(t >= -1.0 && t <= 1.0)) throw InvalidArgument("cosine thresholds must lie in [-1, 1]");
  }
  if (max_revision_retries < 0) throw InvalidArgument("max_revision_retries must be >= 0");
}

FilterConfig FilterConfig::from_json(const nlohmann::json& j) {
  FilterConfig c;
  c.ppl_low_pct = j.value("ppl_low_pct", c.ppl_low_pct);
  c.ppl_high_pct = j.value("ppl_high_pct", c.ppl_high_pct);
  c.dedup_threshold = j.value("dedup_threshold", c.dedup_threshold);
  c.relevance_threshold = j.value("relevance_threshold", c.relevance_threshold);
  c.max_revision_retries = j.value("max_revision_retries", c.max_revision_retries);
  c.per_keyword_percentiles = j.value("per_keyword_percentiles", c.per_keyword_percentiles);
  c.validate();
  return c;
}

nlohmann::json FilterConfig::to_json() const {
  return {{"ppl_low_pct", ppl_low_pct},
          {"ppl_high_pct", ppl_high_pct},
          {"dedup_threshold", dedup_threshold},
          {"relevance_threshold", relevance_threshold},
          {"max_revision_retries", max_revision_retries},
          {"per_keyword_percentiles", per_keyword_percentiles}};
}

bool FilterReport::conserved() const noexcept {
  return input_count == output_count + dropped_ppl + dropped_dup + dropped_relevance +
                            dropped_unparsable + dropped_transport + revision_failures;
}

nlohmann::json FilterReport::to_json() const {
  return {{"input_count", input_count},
          {"dropped_ppl", dropped_ppl},
          {"dropped_dup", dropped_dup},
          {"dropped_relevance", dropped_relevance},
          {"dropped_unparsable", dropped_unparsable},
          {"dropped_transport", dropped_transport},
          {"revised_count", revised_count},
          {"revision_failures", revision_failures},
          {"output_count", output_count}};
}

FilterReport FilterReport::from_json(const nlohmann::json& j) {
  FilterReport r;
  r.input_count = j.at("input_count").get<std::size_t>();
  r.dropped_ppl = j.at("dropped_ppl").get<std::size_t>();
  r.dropped_dup = j.at("dropped_dup").get<std::size_t>();
  r.dropped_relevance = j.at("dropped_relevance").get<std::size_t>();
  r.dropped_unparsable = j.at("dropped_unparsable").get<std::size_t>();
  r.dropped_transport = j.value("dropped_transport", std::size_t{0});
  r.revised_count = j.at("revised_count").get<std::size_t>();
  r.revision_failures = j.at("revision_failures").get<std::size_t>();
  r.output_count = j.at("output_count").get<std::size_t>();
  return r;
}

double percentile(std::span<const double> sorted, double pct) {
  if (sorted.empty()) throw InvalidArgument("percentile of an empty sample");
  const double h = pct / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw InvalidArgument("embedding dimension mismatch: " + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

namespace {

struct Cuts {
  double low;
  double high;
};

Cuts cuts_for(std::vector<double> values, const FilterConfig& cfg) {
  std::sort(values.begin(), values.end());
  return {percentile(values, cfg.ppl_low_pct), percentile(values, cfg.ppl_high_pct)};
}

void sort_by_ingestion(std::vector<QueryRecord>& records) {
  std::stable_sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
    return a.ingestion_index < b.ingestion_index;
  });
}

}  // namespace

std::vector<QueryRecord> perplexity_filter(std::vector<QueryRecord> records, const FilterConfig& cfg) {
  cfg.validate();
  std::map<std::size_t, std::vector<double>> groups;
  for (const auto& r : records) {
    if (!r.perplexity) throw MissingPerplexity("record " + r.id + " has no perplexity");
    groups[cfg.per_keyword_percentiles ? r.subdomain.index : 0].push_back(*r.perplexity);
  }
  std::map<std::size_t, Cuts> cuts;
  for (auto& [key, values] : groups) cuts.emplace(key, cuts_for(std::move(values), cfg));

  std::vector<QueryRecord> kept;
  kept.reserve(records.size());
  for (auto& r : records) {
    const auto& c = cuts.at(cfg.per_keyword_percentiles ? r.subdomain.index : 0);
    if (*r.perplexity < c.low || *r.perplexity > c.high) continue;
    kept.push_back(std::move(r));
  }
  return kept;
}

std::vector<QueryRecord> deduplicate(std::vector<QueryRecord> records, const FilterConfig& cfg) {
  cfg.validate();
  for (const auto& r : records) {
    if (!r.embedding) throw MissingEmbedding("record " + r.id + " has no embedding");
  }
  sort_by_ingestion(records);
  std::vector<QueryRecord> kept;
  for (auto& candidate : records) {
    const bool duplicate = std::any_of(kept.begin(), kept.end(), [&](const QueryRecord& k) {
      return cosine_similarity(*candidate.embedding, *k.embedding) > cfg.dedup_threshold;
    });
    if (!duplicate) kept.push_back(std::move(candidate));
  }
  return kept;
}

std::vector<QueryRecord> relevance_filter(
    std::vector<QueryRecord> records,
    const std::map<std::string, std::vector<float>>& keyword_embeddings, const FilterConfig& cfg) {
  cfg.validate();
  std::vector<QueryRecord> kept;
  kept.reserve(records.size());
  for (auto& r : records) {
    if (!r.embedding) throw MissingEmbedding("record " + r.id + " has no embedding");
    const auto it = keyword_embeddings.find(r.subdomain.text);
    if (it == keyword_embeddings.end()) {
      throw MissingEmbedding("keyword \"" + r.subdomain.text + "\" has no embedding");
    }
    if (cosine_similarity(*r.embedding, it->second) < cfg.relevance_threshold) continue;
    kept.push_back(std::move(r));
  }
  return kept;
}

QueryFilterResult run_query_filters(std::vector<QueryRecord> records, gateway::Gateway& gw,
                                    const gateway::EndpointConfig& scorer,
                                    const gateway::EndpointConfig& embedder, const FilterConfig& cfg) {
  cfg.validate();
  QueryFilterResult result;
  result.report.input_count = records.size();
  sort_by_ingestion(records);

  std::vector<std::size_t> unscored;
  std::vector<std::string> texts;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].perplexity) {
      unscored.push_back(i);
      texts.push_back(records[i].query_text);
    }
  }
  if (!texts.empty()) {
    const auto scored = gw.score_perplexity(scorer, texts);
    for (std::size_t k = 0; k < unscored.size(); ++k) {
      records[unscored[k]].perplexity = scored[k].perplexity;
    }
  }

  auto survivors = records.empty() ? records : perplexity_filter(std::move(records), cfg);
  result.report.dropped_ppl = result.report.input_count - survivors.size();

  if (!survivors.empty()) {
    std::vector<std::size_t> unembedded;
    texts.clear();
    for (std::size_t i = 0; i < survivors.size(); ++i) {
      if (!survivors[i].embedding) {
        unembedded.push_back(i);
        texts.push_back(survivors[i].query_text);
      }
    }
    if (!texts.empty()) {
      auto vectors = gw.embed(embedder, texts);
      for (std::size_t k = 0; k < unembedded.size(); ++k) {
        survivors[unembedded[k]].embedding = std::move(vectors[k]);
      }
    }
  }

  const std::size_t before_dedup = survivors.size();
  survivors = deduplicate(std::move(survivors), cfg);
  result.report.dropped_dup = before_dedup - survivors.size();

  std::map<std::string, std::vector<float>> keyword_embeddings;
  if (!survivors.empty()) {
    std::set<std::string> unique;
    for (const auto& r : survivors) unique.insert(r.subdomain.text);
    const std::vector<std::string> keywords(unique.begin(), unique.end());
    auto vectors = gw.embed(embedder, keywords);
    for (std::size_t k = 0; k < keywords.size(); ++k) {
      keyword_embeddings.emplace(keywords[k], std::move(vectors[k]));
    }
  }
  const std::size_t before_relevance = survivors.size();
  survivors = relevance_filter(std::move(survivors), keyword_embeddings, cfg);
  result.report.dropped_relevance = before_relevance - survivors.size();

  result.report.output_count = survivors.size();
  result.kept = std::move(survivors);
  return result;
}

namespace {

enum class AuditFate { kept, revised, failed, unparsable, transport };

struct AuditOutcome {
  AuditFate fate = AuditFate::kept;
  ResponseRecord record;
};

AuditOutcome audit_one(const ResponseRecord& input, gateway::Gateway& gw,
                       const RevisionSettings& s, const FilterConfig& cfg) {
  AuditOutcome out{AuditFate::kept, input};
  auto& rec = out.record;
  if (input.quarantined()) {
    out.fate = AuditFate::transport;
    return out;
  }
  SafetyLabel label;
  try {
    label = gw.classify_safety(s.guardrail, rec.query_text, rec.response_text, s.rule);
  } catch (const UnparsableVerdict& e) {
    rec.safety_label = SafetyLabel::unknown;
    rec.quarantine_reason = e.what();
    out.fate = AuditFate::unparsable;
    return out;
  } catch (const std::exception& e) {
    rec.safety_label = SafetyLabel::unknown;
    rec.quarantine_reason = std::string("guardrail failed: ") + e.what();
    out.fate = AuditFate::transport;
    return out;
  }
  if (label == SafetyLabel::safe) {
    rec.safety_label = SafetyLabel::safe;
    rec.difficulty = Difficulty::easy;
    return out;
  }

  gateway::GenerationParams params = s.params;
  params.n_samples = 1;
  const auto prompt = templates::render_revision_prompt(s.chat_template, rec.query_text);
  const int attempts = 1 + cfg.max_revision_retries;
  for (int attempt = 0; attempt < attempts; ++attempt) {
    std::string refusal;
    SafetyLabel verdict = SafetyLabel::unknown;
    try {
      refusal = gw.generate(s.generator, prompt, params).front();
      try {
        // Judged against the original query, which is what gets stored.
        verdict = gw.classify_safety(s.guardrail, rec.query_text, refusal, s.rule);
      } catch (const UnparsableVerdict&) {
        verdict = SafetyLabel::unknown;  // counts as a failed attempt
      }
    } catch (const std::exception& e) {
      rec.safety_label = SafetyLabel::unknown;
      rec.quarantine_reason = std::string("revision failed: ") + e.what();
      out.fate = AuditFate::transport;
      return out;
    }
    if (verdict == SafetyLabel::safe) {
      rec.response_text = std::move(refusal);
      rec.safety_label = SafetyLabel::safe;
      rec.difficulty = Difficulty::difficult;
      rec.revised = true;
      out.fate = AuditFate::revised;
      return out;
    }
  }
  rec.safety_label = SafetyLabel::unsafe;
  rec.difficulty = Difficulty::difficult;
  out.fate = AuditFate::failed;
  return out;
}

}  // namespace

RevisionResult audit_and_revise(const std::vector<ResponseRecord>& responses, gateway::Gateway& gw,
                                const RevisionSettings& settings, const FilterConfig& cfg) {
  cfg.validate();
  auto outcomes = gw.map_bounded(settings.guardrail, responses.size(), [&](std::size_t i) {
    return audit_one(responses[i], gw, settings, cfg);
  });

  RevisionResult result;
  result.report.input_count = responses.size();
  for (auto& o : outcomes) {
    auto outcome = gateway::value_or_rethrow(o);
    switch (outcome.fate) {
      case AuditFate::kept:
        result.kept.push_back(std::move(outcome.record));
        break;
      case AuditFate::revised:
        ++result.report.revised_count;
        result.kept.push_back(std::move(outcome.record));
        break;
      case AuditFate::failed:
        ++result.report.revision_failures;
        break;
      case AuditFate::unparsable:
        ++result.report.dropped_unparsable;
        result.quarantined.push_back(std::move(outcome.record));
        break;
      case AuditFate::transport:
        ++result.report.dropped_transport;
        result.quarantined.push_back(std::move(outcome.record));
        break;
    }
  }
  result.report.output_count = result.kept.size();
  return result;
}

}  // namespace alignreplay::post
