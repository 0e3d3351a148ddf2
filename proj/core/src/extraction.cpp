#include "alignreplay/extraction.hpp"

#include <cstdio>
#include <map>
#include <set>

#include "alignreplay/errors.hpp"

namespace alignreplay::extraction {

std::vector<SubdomainKeyword> make_keywords(const std::vector<std::string>& texts) {
  if (texts.empty()) throw InvalidArgument("keyword list is empty");
  std::set<std::string> seen;
  std::vector<SubdomainKeyword> out;
  out.reserve(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (texts[i].empty()) throw EmptyKeyword();
    if (!seen.insert(texts[i]).second) throw InvalidArgument("duplicate keyword: " + texts[i]);
    out.push_back({texts[i], i});
  }
  return out;
}

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

}  // namespace

CapturedQuery capture_query(std::string_view continuation) {
  const std::string_view rest = continuation;
  for (std::size_t i = 0; i < rest.size(); ++i) {
    if (rest[i] == '\\') {
      ++i;  // skip the escaped character
      continue;
    }
    if (rest[i] == '"') return {std::string(trim(rest.substr(0, i))), true};
  }
  return {std::string(trim(rest)), false};
}

std::string query_id(std::size_t keyword_index, std::size_t sample) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "q-%03zu-%05zu", keyword_index, sample);
  return buf;
}

nlohmann::json KeywordOutcome::to_json() const {
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : records) recs.push_back(alignreplay::to_json(r));
  nlohmann::json j = {{"keyword", keyword.text},   {"keyword_index", keyword.index},
                      {"requested", requested},    {"kept", kept},
                      {"dropped_empty", dropped_empty}, {"errored", errored},
                      {"records", recs}};
  j["error"] = error ? nlohmann::json(*error) : nlohmann::json(nullptr);
  return j;
}

KeywordOutcome KeywordOutcome::from_json(const nlohmann::json& j) {
  KeywordOutcome o;
  o.keyword = {j.at("keyword").get<std::string>(), j.at("keyword_index").get<std::size_t>()};
  o.requested = j.at("requested").get<std::size_t>();
  o.kept = j.at("kept").get<std::size_t>();
  o.dropped_empty = j.at("dropped_empty").get<std::size_t>();
  o.errored = j.at("errored").get<std::size_t>();
  if (!j.at("error").is_null()) o.error = j.at("error").get<std::string>();
  for (const auto& r : j.at("records")) o.records.push_back(query_from_json(r));
  return o;
}

nlohmann::json ExtractionResult::counts_json() const {
  return {{"raw", raw},
          {"kept", kept},
          {"dropped_empty", dropped_empty},
          {"errored", errored},
          {"failed_keywords", failed_keywords},
          {"cross_keyword_duplicates", cross_keyword_duplicates}};
}

KeywordOutcome extract_keyword(gateway::Gateway& gw, const gateway::EndpointConfig& endpoint,
                               const templates::ChatTemplate& tmpl, const SubdomainKeyword& keyword,
                               const gateway::GenerationParams& params) {
  KeywordOutcome outcome;
  outcome.keyword = keyword;
  outcome.requested = static_cast<std::size_t>(params.n_samples);
  std::vector<std::string> continuations;
  try {
    const auto prompt = templates::render_extraction_prompt(tmpl, keyword.text);
    continuations = gw.generate(endpoint, prompt.rendered, params);
  } catch (const std::exception& e) {
    outcome.errored = outcome.requested;
    outcome.error = e.what();
    return outcome;
  }
  for (std::size_t s = 0; s < continuations.size(); ++s) {
    auto captured = capture_query(continuations[s]);
    if (captured.text.empty()) {
      ++outcome.dropped_empty;
      continue;
    }
    QueryRecord record;
    record.id = query_id(keyword.index, s);
    record.subdomain = keyword;
    record.query_text = std::move(captured.text);
    record.raw_continuation = continuations[s];
    record.quoted = captured.quoted;
    record.ingestion_index = -1;
    outcome.records.push_back(std::move(record));
  }
  outcome.kept = outcome.records.size();
  return outcome;
}

ExtractionResult assemble(std::vector<KeywordOutcome> outcomes) {
  std::stable_sort(outcomes.begin(), outcomes.end(), [](const auto& a, const auto& b) {
    return a.keyword.index < b.keyword.index;
  });
  ExtractionResult result;
  std::map<std::string, std::size_t> first_subdomain;
  std::int64_t next_index = 0;
  for (auto& o : outcomes) {
    result.raw += o.requested;
    result.kept += o.kept;
    result.dropped_empty += o.dropped_empty;
    result.errored += o.errored;
    if (o.error) result.failed_keywords.push_back(o.keyword.text);
    for (auto record : o.records) {
      record.ingestion_index = next_index++;
      const auto [it, inserted] = first_subdomain.emplace(record.query_text, record.subdomain.index);
      if (!inserted && it->second != record.subdomain.index) ++result.cross_keyword_duplicates;
      result.queries.push_back(std::move(record));
    }
  }
  result.per_keyword = std::move(outcomes);
  return result;
}

ExtractionResult extract_queries(const std::vector<SubdomainKeyword>& keywords,
                                 const templates::ChatTemplate& tmpl, gateway::Gateway& gw,
                                 const gateway::EndpointConfig& endpoint,
                                 const gateway::GenerationParams& params) {
  if (keywords.empty()) throw InvalidArgument("keyword list is empty");
  params.validate();
  auto outcomes = gw.map_bounded(endpoint, keywords.size(), [&](std::size_t i) {
    return extract_keyword(gw, endpoint, tmpl, keywords[i], params);
  });
  std::vector<KeywordOutcome> done;
  done.reserve(outcomes.size());
  for (auto& o : outcomes) done.push_back(gateway::value_or_rethrow(o));
  return assemble(std::move(done));
}

std::vector<ResponseRecord> generate_responses(const std::vector<QueryRecord>& queries,
                                               const templates::ChatTemplate& tmpl,
                                               gateway::Gateway& gw,
                                               const gateway::EndpointConfig& endpoint,
                                               const gateway::GenerationParams& params) {
  gateway::GenerationParams single = params;
  single.n_samples = 1;
  single.validate();
  auto outcomes = gw.map_bounded(endpoint, queries.size(), [&](std::size_t i) {
    const auto& q = queries[i];
    ResponseRecord record;
    record.query_id = q.id;
    record.query_text = q.query_text;
    record.subdomain = q.subdomain.text;
    try {
      record.response_text =
          gw.generate(endpoint, templates::render_user_query(tmpl, q.query_text), single).front();
    } catch (const std::exception& e) {
      record.safety_label = SafetyLabel::unknown;
      record.quarantine_reason = std::string("generation failed: ") + e.what();
    }
    return record;
  });
  std::vector<ResponseRecord> out;
  out.reserve(queries.size());
  for (auto& o : outcomes) out.push_back(gateway::value_or_rethrow(o));
  return out;
}

}  // namespace alignreplay::extraction
