#include "stages.hpp"

#include <cstdio>

#include "alignreplay/errors.hpp"
#include "alignreplay/extraction.hpp"
#include "alignreplay/mixing.hpp"
#include "alignreplay/post_processing.hpp"
#include "alignreplay/records.hpp"
#include "alignreplay/safety_eval.hpp"
#include "alignreplay/similarity.hpp"
#include "alignreplay/version.hpp"

namespace alignreplay::cli {

namespace {

struct PendingOutput {
  fs::path path;
  std::string content;
};

std::string relative_key(const fs::path& file, const fs::path& base) {
  return fs::weakly_canonical(file).lexically_relative(fs::weakly_canonical(base)).generic_string();
}

fs::path finish_stage(const std::string& stage, const std::string& hash, const std::string& started,
                      const std::vector<fs::path>& inputs, const std::vector<PendingOutput>& outputs,
                      nlohmann::json counts) {
  const fs::path base = fs::absolute(outputs.front().path).parent_path();
  store::RunManifest m;
  m.stage = stage;
  m.config_hash = hash;
  m.started_at = started;
  m.tool_version = std::string(kVersion);
  m.counts = std::move(counts);
  for (const auto& in : inputs) m.inputs[relative_key(in, base)] = store::digest_file(in);
  for (const auto& out : outputs) {
    store::atomic_write(out.path, out.content);
    m.outputs[relative_key(out.path, base)] = store::digest_bytes(out.content);
  }
  m.finished_at = store::utc_timestamp();
  const auto manifest = store::manifest_path_for(outputs.front().path);
  store::write_manifest(manifest, m);
  return manifest;
}

std::string json_line(const nlohmann::json& j) { return store::canonical_json(j) + "\n"; }

nlohmann::json model_identity(const PipelineConfig& cfg, const std::string& role) {
  if (!cfg.has_endpoint(role)) return nullptr;
  return cfg.endpoint(role).model_name;
}

template <class T, class Parse>
std::vector<T> read_typed(const fs::path& path, std::string_view schema, Parse&& parse,
                          const std::shared_ptr<spdlog::logger>& log, std::size_t& malformed) {
  auto read = store::read_records(path, schema);
  for (const auto& bad : read.malformed) {
    log->warn("{}:{}: {}", path.string(), bad.line, bad.message);
  }
  malformed = read.malformed.size();
  std::vector<T> out;
  out.reserve(read.records.size());
  for (std::size_t i = 0; i < read.records.size(); ++i) {
    try {
      out.push_back(parse(read.records[i]));
    } catch (const nlohmann::json::exception& e) {
      log->warn("{}:{}: {}", path.string(), read.line_numbers[i], e.what());
      ++malformed;
    }
  }
  return out;
}

std::string first_string(const nlohmann::json& rec, std::initializer_list<const char*> keys) {
  for (const char* k : keys) {
    const auto it = rec.find(k);
    if (it != rec.end() && it->is_string()) return it->get<std::string>();
  }
  return {};
}

// (query, response) from any record shape the tool writes or reads.
std::pair<std::string, std::string> text_pair(const nlohmann::json& rec) {
  if (rec.contains("messages")) {
    std::string user, assistant;
    for (const auto& m : rec.at("messages")) {
      const auto role = m.value("role", "");
      if (role == "user" && user.empty()) user = m.value("content", "");
      if (role == "assistant" && !user.empty() && assistant.empty()) assistant = m.value("content", "");
    }
    return {user, assistant};
  }
  return {first_string(rec, {"query_text", "query", "prompt", "instruction", "question"}),
          first_string(rec, {"response_text", "response", "output", "answer", "completion"})};
}

fs::path shard_path(const fs::path& dir, std::size_t keyword_index) {
  char name[32];
  std::snprintf(name, sizeof name, "kw-%03zu.json", keyword_index);
  return dir / name;
}

}  // namespace

std::string stage_config_hash(const std::string& stage, const PipelineConfig& cfg,
                              const nlohmann::json& extra) {
  nlohmann::json j = {{"stage", stage}, {"extra", extra}};
  if (stage == "extract") {
    j["generator"] = model_identity(cfg, "generator");
    j["template"] = cfg.chat_template().to_json();
    j["keywords"] = cfg.keyword_texts();
    j["params"] = cfg.query_params.to_json();
  } else if (stage == "filter") {
    j["scorer"] = model_identity(cfg, "scorer");
    j["embedder"] = model_identity(cfg, "embedder");
    j["filter"] = cfg.filter.to_json();
  } else if (stage == "revise") {
    j["generator"] = model_identity(cfg, "generator");
    j["guardrail"] = model_identity(cfg, "guardrail");
    j["template"] = cfg.chat_template().to_json();
    j["params"] = cfg.response_params.to_json();
    j["verdict_rule"] = cfg.verdict_rule.to_json();
    j["filter"] = cfg.filter.to_json();
  } else if (stage == "mix") {
    j["mix"] = cfg.mix.to_json();
  } else if (stage == "eval") {
    j["eval_model"] = model_identity(cfg, "eval_model");
    j["guardrail"] = model_identity(cfg, "guardrail");
    j["template"] = cfg.chat_template().to_json();
    j["params"] = cfg.eval_params.to_json();
    j["verdict_rule"] = cfg.verdict_rule.to_json();
  } else if (stage == "similarity") {
    j["embedder"] = model_identity(cfg, "embedder");
    j["similarity"] = cfg.similarity.to_json();
  }
  return store::config_hash(j);
}

bool stage_up_to_date(const fs::path& output, const std::string& stage, const std::string& hash) {
  const auto manifest_path = store::manifest_path_for(output);
  if (!fs::exists(manifest_path) || !fs::exists(output)) return false;
  try {
    const auto m = store::read_manifest(manifest_path);
    if (m.stage != stage || m.config_hash != hash) return false;
    // A partial extraction is never current; the next run retries its gaps.
    if (!m.counts.value("failed_keywords", nlohmann::json::array()).empty()) return false;
    return store::verify_manifest_files(m, fs::absolute(output).parent_path()).empty();
  } catch (const std::exception&) {
    return false;
  }
}

fs::path sidecar(const fs::path& output, const std::string& suffix) {
  fs::path p = output;
  p += suffix;
  return p;
}

std::vector<std::string> stage_roles(const std::string& stage) {
  if (stage == "extract") return {"generator"};
  if (stage == "filter") return {"scorer", "embedder"};
  if (stage == "revise") return {"generator", "guardrail"};
  if (stage == "eval") return {"eval_model", "guardrail"};
  if (stage == "similarity") return {"embedder"};
  return {};
}

StageResult run_extract(const StageContext& ctx, const fs::path& out) {
  const auto started = store::utc_timestamp();
  const auto hash = stage_config_hash("extract", ctx.cfg);
  const auto tmpl = ctx.cfg.chat_template();
  const auto keywords = extraction::make_keywords(ctx.cfg.keyword_texts());
  const auto& endpoint = ctx.cfg.endpoint("generator");
  ctx.cfg.query_params.validate();

  // Finished keywords are cached as shards so an interrupted run resumes
  // without re-sampling them.
  const fs::path shard_dir = sidecar(out, ".shards");
  fs::create_directories(shard_dir);
  std::vector<std::optional<extraction::KeywordOutcome>> outcomes(keywords.size());
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < keywords.size(); ++i) {
    const auto path = shard_path(shard_dir, i);
    if (fs::exists(path)) {
      try {
        const auto j = nlohmann::json::parse(store::read_file(path));
        auto outcome = extraction::KeywordOutcome::from_json(j.at("outcome"));
        if (j.at("config_hash") == hash && outcome.keyword == keywords[i] && !outcome.error) {
          outcomes[i] = std::move(outcome);
          continue;
        }
      } catch (const std::exception& e) {
        ctx.log->warn("ignoring unreadable shard {}: {}", path.string(), e.what());
      }
    }
    pending.push_back(i);
  }
  if (pending.size() < keywords.size()) {
    ctx.log->info("extract: resuming, {} of {} keywords cached", keywords.size() - pending.size(),
                  keywords.size());
  }

  auto fresh = ctx.gw.map_bounded(endpoint, pending.size(), [&](std::size_t t) {
    const std::size_t i = pending[t];
    auto outcome = extraction::extract_keyword(ctx.gw, endpoint, tmpl, keywords[i], ctx.cfg.query_params);
    if (!outcome.error) {
      store::atomic_write(shard_path(shard_dir, i),
                          json_line({{"config_hash", hash}, {"outcome", outcome.to_json()}}));
    }
    ctx.log->debug("extract: '{}' kept {}/{}", keywords[i].text, outcome.kept, outcome.requested);
    return outcome;
  });
  for (std::size_t t = 0; t < pending.size(); ++t) {
    auto outcome = gateway::value_or_rethrow(fresh[t]);
    if (outcome.error) {
      ctx.log->warn("extract: keyword '{}' failed: {}", outcome.keyword.text, *outcome.error);
    }
    outcomes[pending[t]] = std::move(outcome);
  }

  std::vector<extraction::KeywordOutcome> all;
  all.reserve(outcomes.size());
  for (auto& o : outcomes) all.push_back(std::move(*o));
  const auto result = extraction::assemble(std::move(all));
  if (result.queries.empty()) throw StageError("extract", "no queries were captured");
  if (!result.failed_keywords.empty()) {
    ctx.log->warn("extract: {} of {} keywords failed; rerun to retry them", result.failed_keywords.size(),
                  keywords.size());
  }

  std::vector<nlohmann::json> lines;
  lines.reserve(result.queries.size());
  for (const auto& q : result.queries) lines.push_back(to_json(q));
  const auto counts = result.counts_json();
  const auto manifest =
      finish_stage("extract", hash, started, {},
                   {{out, store::serialize_records(lines)}, {sidecar(out, ".report.json"), json_line(counts)}},
                   counts);
  // Shards are only needed while some keyword is still missing.
  if (result.failed_keywords.empty()) fs::remove_all(shard_dir);
  return {"extract", out, manifest, counts};
}

StageResult run_filter(const StageContext& ctx, const fs::path& in, const fs::path& out) {
  const auto started = store::utc_timestamp();
  const auto hash = stage_config_hash("filter", ctx.cfg);
  std::size_t malformed = 0;
  auto queries = read_typed<QueryRecord>(in, kQuerySchema, query_from_json, ctx.log, malformed);
  if (queries.empty()) throw EmptyInput("no query records in " + in.string());

  auto result = post::run_query_filters(std::move(queries), ctx.gw, ctx.cfg.endpoint("scorer"),
                                        ctx.cfg.endpoint("embedder"), ctx.cfg.filter);
  std::vector<nlohmann::json> lines;
  lines.reserve(result.kept.size());
  for (const auto& q : result.kept) lines.push_back(to_json(q));
  const auto report = result.report.to_json();
  auto counts = report;
  counts["malformed_lines"] = malformed;
  const auto manifest =
      finish_stage("filter", hash, started, {in},
                   {{out, store::serialize_records(lines)}, {sidecar(out, ".report.json"), json_line(report)}},
                   counts);
  return {"filter", out, manifest, report};
}

StageResult run_revise(const StageContext& ctx, const fs::path& in, const fs::path& out) {
  const auto started = store::utc_timestamp();
  const auto hash = stage_config_hash("revise", ctx.cfg);
  std::size_t malformed = 0;
  const auto queries = read_typed<QueryRecord>(in, kQuerySchema, query_from_json, ctx.log, malformed);
  if (queries.empty()) throw EmptyInput("no query records in " + in.string());

  const auto tmpl = ctx.cfg.chat_template();
  const auto& generator = ctx.cfg.endpoint("generator");
  const auto responses =
      extraction::generate_responses(queries, tmpl, ctx.gw, generator, ctx.cfg.response_params);
  post::RevisionSettings settings{generator, ctx.cfg.endpoint("guardrail"), tmpl, ctx.cfg.verdict_rule,
                                  ctx.cfg.response_params};
  const auto result = post::audit_and_revise(responses, ctx.gw, settings, ctx.cfg.filter);

  std::vector<nlohmann::json> kept, quarantined;
  for (const auto& r : result.kept) kept.push_back(to_json(r));
  for (const auto& r : result.quarantined) quarantined.push_back(to_json(r));
  const auto report = result.report.to_json();
  auto counts = report;
  counts["malformed_lines"] = malformed;
  counts["quarantined"] = quarantined.size();
  const auto manifest = finish_stage("revise", hash, started, {in},
                                     {{out, store::serialize_records(kept)},
                                      {sidecar(out, ".quarantine.jsonl"), store::serialize_records(quarantined)},
                                      {sidecar(out, ".report.json"), json_line(report)}},
                                     counts);
  return {"revise", out, manifest, report};
}

StageResult run_mix(const StageContext& ctx, const fs::path& safety, const fs::path& task,
                    const fs::path& out) {
  const auto started = store::utc_timestamp();
  const auto hash = stage_config_hash("mix", ctx.cfg);
  ctx.cfg.mix.validate();
  std::size_t malformed_safety = 0;
  const auto responses =
      read_typed<ResponseRecord>(safety, kResponseSchema, response_from_json, ctx.log, malformed_safety);
  const auto pool = mixing::safety_pool_from_responses(responses);

  auto task_read = store::read_jsonl(task);
  std::size_t malformed_task = task_read.malformed.size();
  std::vector<mixing::TaskExample> tasks;
  for (std::size_t i = 0; i < task_read.records.size(); ++i) {
    try {
      tasks.push_back(mixing::task_from_json(task_read.records[i], task_read.line_numbers[i]));
    } catch (const MalformedRecord& e) {
      ctx.log->warn("{}: {}", task.string(), e.what());
      ++malformed_task;
    }
  }

  const std::map<std::string, std::string> digests = {
      {safety.filename().string(), store::digest_file(safety)},
      {task.filename().string(), store::digest_file(task)}};
  const auto result = mixing::mix(pool, tasks, ctx.cfg.mix, digests);
  const auto verify = mixing::verify_manifest(result.dataset, result.manifest);
  if (!verify.ok) {
    std::string msg = "mixed dataset failed verification:";
    for (const auto& d : verify.diffs) msg += "\n  " + d;
    throw StageError("mix", msg);
  }

  std::vector<nlohmann::json> lines;
  lines.reserve(result.dataset.size());
  for (const auto& ex : result.dataset) lines.push_back(ex.to_json());
  const auto& m = result.manifest;
  const nlohmann::json counts = {{"n_safety", m.n_safety},     {"n_task", m.n_task},
                                 {"n_difficult", m.n_difficult}, {"n_easy", m.n_easy},
                                 {"safety_pool", pool.size()},   {"task_pool", tasks.size()},
                                 {"malformed_lines", malformed_safety + malformed_task}};
  const auto manifest = finish_stage(
      "mix", hash, started, {safety, task},
      {{out, store::serialize_records(lines)}, {sidecar(out, ".mix.json"), json_line(m.to_json())}}, counts);
  return {"mix", out, manifest, counts};
}

StageResult run_eval(const StageContext& ctx, const fs::path& queries, const std::string& field_map,
                     const fs::path& out, const std::string& dataset) {
  const auto started = store::utc_timestamp();
  const auto hash = stage_config_hash("eval", ctx.cfg, {{"field_map", field_map}, {"dataset", dataset}});
  const auto ingest = eval::ingest_eval_queries(queries, eval::FieldMap::parse(field_map));
  for (const auto& bad : ingest.stats.malformed_lines) {
    ctx.log->warn("{}:{}: {}", queries.string(), bad.line, bad.message);
  }
  if (ingest.items.empty()) throw EmptyInput("no evaluation queries in " + queries.string());

  eval::EvalSettings settings{ctx.cfg.endpoint("eval_model"), ctx.cfg.endpoint("guardrail"),
                              ctx.cfg.chat_template(), ctx.cfg.verdict_rule, ctx.cfg.eval_params};
  const auto run = eval::harmful_score(ingest.queries(), ctx.gw, settings, dataset);
  const nlohmann::json counts = {{"queries", run.query_count},
                                 {"unsafe", run.unsafe_count},
                                 {"quarantined", run.quarantined_count},
                                 {"harmful_score", run.harmful_score},
                                 {"ingest", ingest.stats.to_json()}};
  const auto manifest = finish_stage("eval", hash, started, {queries}, {{out, json_line(run.to_json())}}, counts);
  return {"eval", out, manifest, counts};
}

StageResult run_similarity(const StageContext& ctx, const fs::path& ref, const fs::path& cand,
                           const std::string& field, const fs::path& out,
                           const std::optional<fs::path>& frontier_csv) {
  if (field != "query" && field != "response") throw InvalidArgument("--field must be query or response");
  const auto started = store::utc_timestamp();
  const auto hash = stage_config_hash("similarity", ctx.cfg, {{"field", field}});

  auto texts_of = [&](const fs::path& path) {
    auto read = store::read_jsonl(path);
    std::vector<std::string> texts;
    for (std::size_t i = 0; i < read.records.size(); ++i) {
      const auto [query, response] = text_pair(read.records[i]);
      if (query.empty() || (field == "response" && response.empty())) {
        ctx.log->warn("{}:{}: no {} text", path.string(), read.line_numbers[i], field);
        continue;
      }
      // Responses are embedded in the context of their query.
      texts.push_back(field == "query" ? query : query + "\n" + response);
    }
    if (texts.empty()) throw EmptyInput("no usable records in " + path.string());
    return texts;
  };
  const auto ref_texts = texts_of(ref);
  const auto cand_texts = texts_of(cand);
  const auto& embedder = ctx.cfg.endpoint("embedder");
  const auto ref_emb = ctx.gw.embed(embedder, ref_texts);
  const auto cand_emb = ctx.gw.embed(embedder, cand_texts);
  const auto result = similarity::mauve_score(ref_emb, cand_emb, ctx.cfg.similarity);
  if (result.degenerate) ctx.log->warn("similarity: more than half of the clusters are empty");

  auto summary = result.to_json(false);
  summary["field"] = field;
  summary["n_ref"] = ref_texts.size();
  summary["n_cand"] = cand_texts.size();
  std::vector<PendingOutput> outputs = {{out, json_line(summary)}};
  if (frontier_csv) outputs.push_back({*frontier_csv, result.frontier_csv()});
  const auto manifest = finish_stage("similarity", hash, started, {ref, cand}, outputs, summary);
  return {"similarity", out, manifest, summary};
}

}  // namespace alignreplay::cli
