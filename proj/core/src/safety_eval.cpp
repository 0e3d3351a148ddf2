#include "alignreplay/safety_eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "alignreplay/errors.hpp"

namespace alignreplay::eval {

namespace {

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

// true = safe, false = unsafe
bool parse_safety_flag(const nlohmann::json& v) {
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_number_integer()) return v.get<long long>() != 0;
  if (v.is_string()) {
    const auto s = lower(trim(v.get<std::string>()));
    if (s == "safe" || s == "true" || s == "yes" || s == "1") return true;
    if (s == "unsafe" || s == "false" || s == "no" || s == "0") return false;
  }
  throw InvalidArgument("unrecognized safety label " + v.dump());
}

std::string string_field(const nlohmann::json& rec, const std::string& name) {
  const auto it = rec.find(name);
  if (it == rec.end() || it->is_null()) throw InvalidArgument("missing field '" + name + "'");
  if (!it->is_string()) throw InvalidArgument("field '" + name + "' is not a string");
  return it->get<std::string>();
}

bool blank(std::string_view s) { return s.find_first_not_of(" \t\r\n") == std::string_view::npos; }

}  // namespace

double harmful_ratio(std::size_t unsafe, std::size_t queries, std::size_t quarantined) {
  if (quarantined > queries || unsafe > queries - quarantined) {
    throw InvalidArgument("inconsistent evaluation counts");
  }
  if (queries == quarantined) throw EvaluationFailed("every evaluation record was quarantined");
  return 100.0 * static_cast<double>(unsafe) / static_cast<double>(queries - quarantined);
}

nlohmann::json EvalRun::to_json() const {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& v : verdicts) {
    records.push_back({{"query", v.query},
                       {"response", v.response},
                       {"label", std::string(to_string(v.label))},
                       {"quarantine_reason",
                        v.quarantine_reason ? nlohmann::json(*v.quarantine_reason) : nlohmann::json()}});
  }
  return {{"schema", "eval-run.v1"},
          {"dataset", dataset},
          {"query_count", query_count},
          {"unsafe_count", unsafe_count},
          {"quarantined_count", quarantined_count},
          {"harmful_score", harmful_score},
          {"verdicts", records}};
}

EvalRun EvalRun::from_json(const nlohmann::json& j) {
  EvalRun run;
  run.dataset = j.at("dataset").get<std::string>();
  run.query_count = j.at("query_count").get<std::size_t>();
  run.unsafe_count = j.at("unsafe_count").get<std::size_t>();
  run.quarantined_count = j.at("quarantined_count").get<std::size_t>();
  run.harmful_score = j.at("harmful_score").get<double>();
  for (const auto& r : j.at("verdicts")) {
    Verdict v;
    v.query = r.at("query").get<std::string>();
    v.response = r.at("response").get<std::string>();
    v.label = safety_label_from_string(r.at("label").get<std::string>());
    if (r.contains("quarantine_reason") && !r.at("quarantine_reason").is_null()) {
      v.quarantine_reason = r.at("quarantine_reason").get<std::string>();
    }
    run.verdicts.push_back(std::move(v));
  }
  return run;
}

EvalRun harmful_score(const std::vector<std::string>& queries, gateway::Gateway& gw,
                      const EvalSettings& settings, std::string dataset) {
  if (queries.empty()) throw EmptyInput("no evaluation queries");
  gateway::GenerationParams params = settings.params;
  params.n_samples = 1;
  params.validate();

  auto generated = gw.map_bounded(settings.model, queries.size(), [&](std::size_t i) {
    return gw.generate(settings.model, templates::render_user_query(settings.chat_template, queries[i]),
                       params)
        .front();
  });

  std::vector<Verdict> verdicts(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    verdicts[i].query = queries[i];
    if (const auto* err = std::get_if<std::exception_ptr>(&generated[i])) {
      try {
        std::rethrow_exception(*err);
      } catch (const std::exception& e) {
        verdicts[i].quarantine_reason = std::string("generation failed: ") + e.what();
      }
    } else {
      verdicts[i].response = std::get<std::string>(generated[i]);
    }
  }

  auto labels = gw.map_bounded(settings.guardrail, queries.size(), [&](std::size_t i) {
    if (verdicts[i].quarantine_reason) return SafetyLabel::unknown;
    return gw.classify_safety(settings.guardrail, verdicts[i].query, verdicts[i].response,
                              settings.rule);
  });

  EvalRun run;
  run.dataset = std::move(dataset);
  run.query_count = queries.size();
  for (std::size_t i = 0; i < queries.size(); ++i) {
    auto& v = verdicts[i];
    if (!v.quarantine_reason) {
      if (const auto* err = std::get_if<std::exception_ptr>(&labels[i])) {
        try {
          std::rethrow_exception(*err);
        } catch (const std::exception& e) {
          v.quarantine_reason = std::string("classification failed: ") + e.what();
        }
      } else {
        v.label = std::get<SafetyLabel>(labels[i]);
      }
    }
    if (v.quarantine_reason) {
      v.label = SafetyLabel::unknown;
      ++run.quarantined_count;
    } else if (v.label == SafetyLabel::unsafe) {
      ++run.unsafe_count;
    }
  }
  run.verdicts = std::move(verdicts);
  run.harmful_score = harmful_ratio(run.unsafe_count, run.query_count, run.quarantined_count);
  return run;
}

FieldMap FieldMap::parse(std::string_view spec) {
  FieldMap map;
  std::size_t pos = 0;
  while (pos <= spec.size()) {
    auto comma = spec.find(',', pos);
    if (comma == std::string_view::npos) comma = spec.size();
    const auto item = trim(spec.substr(pos, comma - pos));
    pos = comma + 1;
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw InvalidArgument("field map entry '" + item + "' lacks '='");
    auto key = trim(std::string_view(item).substr(0, eq));
    auto value = trim(std::string_view(item).substr(eq + 1));
    if (key.empty() || value.empty()) throw InvalidArgument("empty field map entry '" + item + "'");
    map.fields[key] = value;
  }
  if (!map.fields.contains("query")) map.fields["query"] = "query";
  return map;
}

std::optional<std::string> FieldMap::source(std::string_view logical) const {
  const auto it = fields.find(std::string(logical));
  if (it == fields.end()) return std::nullopt;
  return it->second;
}

nlohmann::json IngestStats::to_json() const {
  return {{"lines", lines},
          {"malformed", malformed},
          {"dropped_empty", dropped_empty},
          {"dropped_unsafe", dropped_unsafe},
          {"preference_resolved", preference_resolved},
          {"kept", kept}};
}

std::vector<std::string> IngestResult::queries() const {
  std::vector<std::string> out;
  out.reserve(items.size());
  for (const auto& item : items) out.push_back(item.query);
  return out;
}

IngestResult ingest_records(const std::vector<nlohmann::json>& records,
                            const std::vector<std::size_t>& line_numbers, const FieldMap& field_map,
                            bool baseline_prep) {
  const auto query_field = field_map.source("query").value_or("query");
  const auto response_field = field_map.source("response");
  const auto safe_field = field_map.source("safe");
  const auto r0 = field_map.source("response_0");
  const auto r1 = field_map.source("response_1");
  const auto safer = field_map.source("safer");
  const bool preference = r0 && r1 && safer;

  IngestResult result;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    const std::size_t line = i < line_numbers.size() ? line_numbers[i] : i + 1;
    ++result.stats.lines;
    try {
      EvalItem item;
      item.query = string_field(rec, query_field);
      if (blank(item.query)) throw InvalidArgument("empty query");
      if (baseline_prep) {
        bool safe = true;
        if (preference) {
          const auto pick = rec.at(*safer).get<int>();
          if (pick != 0 && pick != 1) throw InvalidArgument("safer index must be 0 or 1");
          item.response = string_field(rec, pick == 0 ? *r0 : *r1);
          const auto flag = field_map.source(pick == 0 ? "safe_0" : "safe_1");
          if (flag && rec.contains(*flag)) safe = parse_safety_flag(rec.at(*flag));
          ++result.stats.preference_resolved;
        } else if (response_field) {
          item.response = string_field(rec, *response_field);
          if (safe_field && rec.contains(*safe_field)) safe = parse_safety_flag(rec.at(*safe_field));
        }
        if (item.response && blank(*item.response)) {
          ++result.stats.dropped_empty;
          continue;
        }
        if (!safe) {
          ++result.stats.dropped_unsafe;
          continue;
        }
      }
      result.items.push_back(std::move(item));
    } catch (const std::exception& e) {
      ++result.stats.malformed;
      result.stats.malformed_lines.push_back({line, e.what()});
    }
  }
  result.stats.kept = result.items.size();
  return result;
}

IngestResult ingest_eval_queries(const std::filesystem::path& path, const FieldMap& field_map,
                                 bool baseline_prep) {
  auto read = store::read_jsonl(path);
  auto result = ingest_records(read.records, read.line_numbers, field_map, baseline_prep);
  result.stats.lines += read.malformed.size();
  result.stats.malformed += read.malformed.size();
  result.stats.malformed_lines.insert(result.stats.malformed_lines.end(), read.malformed.begin(),
                                      read.malformed.end());
  std::sort(result.stats.malformed_lines.begin(), result.stats.malformed_lines.end(),
            [](const auto& a, const auto& b) { return a.line < b.line; });
  return result;
}

}  // namespace alignreplay::eval
