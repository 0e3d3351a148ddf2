#include "alignreplay/records.hpp"

#include "alignreplay/errors.hpp"

namespace alignreplay {

std::string_view to_string(SafetyLabel label) {
  switch (label) {
    case SafetyLabel::safe: return "safe";
    case SafetyLabel::unsafe: return "unsafe";
    case SafetyLabel::unknown: return "unknown";
    case SafetyLabel::unaudited: return "unaudited";
  }
  return "unknown";
}

std::string_view to_string(Difficulty difficulty) {
  switch (difficulty) {
    case Difficulty::easy: return "easy";
    case Difficulty::difficult: return "difficult";
    case Difficulty::untagged: return "untagged";
  }
  return "untagged";
}

SafetyLabel safety_label_from_string(std::string_view s) {
  if (s == "safe") return SafetyLabel::safe;
  if (s == "unsafe") return SafetyLabel::unsafe;
  if (s == "unknown") return SafetyLabel::unknown;
  if (s == "unaudited") return SafetyLabel::unaudited;
  throw InvalidArgument("unknown safety label: " + std::string(s));
}

Difficulty difficulty_from_string(std::string_view s) {
  if (s == "easy") return Difficulty::easy;
  if (s == "difficult") return Difficulty::difficult;
  if (s == "untagged") return Difficulty::untagged;
  throw InvalidArgument("unknown difficulty: " + std::string(s));
}

nlohmann::json to_json(const QueryRecord& r) {
  nlohmann::json j = {{"schema", kQuerySchema},
                      {"id", r.id},
                      {"subdomain", r.subdomain.text},
                      {"subdomain_index", r.subdomain.index},
                      {"query_text", r.query_text},
                      {"raw_continuation", r.raw_continuation},
                      {"ingestion_index", r.ingestion_index},
                      {"quoted", r.quoted}};
  if (r.perplexity) j["perplexity"] = *r.perplexity;
  if (r.embedding) j["embedding"] = *r.embedding;
  return j;
}

nlohmann::json to_json(const ResponseRecord& r) {
  nlohmann::json j = {{"schema", kResponseSchema},
                      {"query_id", r.query_id},
                      {"query_text", r.query_text},
                      {"subdomain", r.subdomain},
                      {"response_text", r.response_text},
                      {"safety_label", to_string(r.safety_label)},
                      {"difficulty", to_string(r.difficulty)},
                      {"revised", r.revised}};
  if (r.quarantine_reason) j["quarantine_reason"] = *r.quarantine_reason;
  return j;
}

QueryRecord query_from_json(const nlohmann::json& j) {
  QueryRecord r;
  r.id = j.at("id").get<std::string>();
  r.subdomain.text = j.at("subdomain").get<std::string>();
  r.subdomain.index = j.at("subdomain_index").get<std::size_t>();
  r.query_text = j.at("query_text").get<std::string>();
  r.raw_continuation = j.at("raw_continuation").get<std::string>();
  r.ingestion_index = j.at("ingestion_index").get<std::int64_t>();
  r.quoted = j.at("quoted").get<bool>();
  if (j.contains("perplexity")) r.perplexity = j.at("perplexity").get<double>();
  if (j.contains("embedding")) r.embedding = j.at("embedding").get<std::vector<float>>();
  return r;
}

ResponseRecord response_from_json(const nlohmann::json& j) {
  ResponseRecord r;
  r.query_id = j.at("query_id").get<std::string>();
  r.query_text = j.at("query_text").get<std::string>();
  r.subdomain = j.value("subdomain", "");
  r.response_text = j.at("response_text").get<std::string>();
  r.safety_label = safety_label_from_string(j.at("safety_label").get<std::string>());
  r.difficulty = difficulty_from_string(j.at("difficulty").get<std::string>());
  r.revised = j.at("revised").get<bool>();
  if (j.contains("quarantine_reason")) {
    r.quarantine_reason = j.at("quarantine_reason").get<std::string>();
  }
  return r;
}

const std::vector<std::string>& required_fields(std::string_view schema) {
  static const std::vector<std::string> query = {"id",       "subdomain",         "subdomain_index",
                                                 "query_text", "raw_continuation", "ingestion_index",
                                                 "quoted"};
  static const std::vector<std::string> response = {"query_id",     "query_text", "response_text",
                                                    "safety_label", "difficulty", "revised"};
  static const std::vector<std::string> sft = {"id", "messages", "source", "difficulty"};
  static const std::vector<std::string> none;
  if (schema == kQuerySchema) return query;
  if (schema == kResponseSchema) return response;
  if (schema == kSftSchema) return sft;
  return none;
}

}  // namespace alignreplay
