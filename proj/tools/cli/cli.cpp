#include "alignreplay/cli.hpp"

#include <functional>
#include <ostream>

#include <CLI11.hpp>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "alignreplay/divergence.hpp"
#include "alignreplay/errors.hpp"
#include "alignreplay/safety_eval.hpp"
#include "alignreplay/version.hpp"
#include "stages.hpp"

namespace alignreplay::cli {

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool dry_run = false;
  std::string log_level = "info";
  std::string template_family;
};

struct ExtractArgs {
  std::string out;
  std::string keywords;
  std::optional<int> samples;
};

struct FilterArgs {
  std::string in, out;
};

struct ReviseArgs {
  std::string in, out, guardrail_endpoint;
};

struct MixArgs {
  std::optional<std::int64_t> n;
  std::optional<double> ratio;
  std::string safety, task, out;
};

struct SimilarityArgs {
  std::string ref, cand, field = "query", out, frontier_csv;
  std::optional<std::size_t> clusters, grid, sample_cap;
  std::optional<double> scale;
};

struct EvalArgs {
  std::string queries, field_map, model_endpoint, guardrail_endpoint, out, name;
};

struct TheoryArgs {
  std::string check, original, proxy, out;
  std::optional<double> ratio;
  std::size_t trials = 1000;
};

struct PipelineArgs {
  std::string workdir, stop_after;
  bool force = false;
};

const std::vector<std::string> kPipelineStages = {"extract", "filter", "revise", "mix", "eval"};

std::shared_ptr<spdlog::logger> make_logger(std::ostream& err, const std::string& level) {
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err, true);
  auto log = std::make_shared<spdlog::logger>("alignreplay", sink);
  log->set_pattern("[%l] %v");
  log->set_level(spdlog::level::from_str(level));
  return log;
}

void override_endpoint(PipelineConfig& cfg, const std::string& role, const std::string& url) {
  if (url.empty()) return;
  auto it = cfg.endpoints.find(role);
  if (it == cfg.endpoints.end()) {
    gateway::EndpointConfig ep;
    ep.model_name = cfg.has_endpoint(role) ? cfg.endpoint(role).model_name : "default";
    it = cfg.endpoints.emplace(role, ep).first;
  }
  it->second.base_url = url;
}

void require_roles(const PipelineConfig& cfg, const std::string& stage) {
  for (const auto& role : stage_roles(stage)) {
    cfg.endpoint(role).validate();
  }
}

nlohmann::json endpoints_plan(const PipelineConfig& cfg, const std::string& stage) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& role : stage_roles(stage)) {
    const auto& ep = cfg.endpoint(role);
    j[role] = ep.model_name + " @ " + ep.base_url;
  }
  return j;
}

nlohmann::json plan_entry(const PipelineConfig& cfg, const std::string& stage,
                          const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs) {
  nlohmann::json in = nlohmann::json::array(), out = nlohmann::json::array();
  for (const auto& p : inputs) in.push_back(p.generic_string());
  for (const auto& p : outputs) out.push_back(p.generic_string());
  return {{"stage", stage}, {"inputs", in}, {"outputs", out}, {"endpoints", endpoints_plan(cfg, stage)}};
}

// Runs a stage body, attributing any failure to the stage.
StageResult execute(const std::string& stage, const std::function<StageResult()>& body) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

CommandOutcome finish(std::ostream& out, const nlohmann::json& summary,
                      std::optional<fs::path> manifest) {
  CommandOutcome outcome;
  outcome.summary = summary.dump(2);
  outcome.manifest_path = std::move(manifest);
  out << outcome.summary << '\n';
  return outcome;
}

CommandOutcome dry_run(std::ostream& out, const std::string& command, nlohmann::json stages) {
  return finish(out, {{"command", command}, {"dry_run", true}, {"stages", std::move(stages)}}, std::nullopt);
}

CommandOutcome theory(const TheoryArgs& a, const PipelineConfig& cfg, bool dry, std::ostream& out) {
  const bool model_mode = !a.original.empty() || !a.proxy.empty() || a.ratio.has_value();
  if (model_mode == !a.check.empty()) {
    throw InvalidArgument("theory takes either --check or --original/--proxy/--ratio");
  }
  if (model_mode && (a.original.empty() || a.proxy.empty() || !a.ratio)) {
    throw InvalidArgument("--original, --proxy and --ratio are required together");
  }
  if (a.trials == 0) throw InvalidArgument("--trials must be positive");
  if (dry) {
    return dry_run(out, "theory",
                   nlohmann::json::array({{{"stage", "theory"},
                                           {"check", a.check.empty() ? "components" : a.check},
                                           {"trials", a.trials}}}));
  }

  nlohmann::json result;
  bool pass = true;
  if (a.check == "theorem1") {
    const auto r = divergence::check_decomposition_identity(a.trials, cfg.seed);
    pass = r.max_residual <= 1e-10;
    result = {{"check", "theorem1"},     {"trials", r.trials}, {"max_residual", r.max_residual},
              {"tolerance", 1e-10},      {"seconds", r.seconds}, {"pass", pass}};
  } else if (a.check == "pinsker") {
    const auto r = divergence::check_pinsker(a.trials, cfg.seed);
    pass = r.violations == 0;
    result = {{"check", "pinsker"},        {"trials", r.trials},  {"violations", r.violations},
              {"max_ratio", r.max_ratio}, {"pass", pass}};
  } else {
    auto load = [](const std::string& path) {
      try {
        return divergence::model_from_json(nlohmann::json::parse(store::read_file(path)));
      } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(path + ": " + e.what());
      }
    };
    const auto original = load(a.original);
    const auto proxy = load(a.proxy);
    const auto decomposition = divergence::decompose_joint_kl(original, proxy);
    result = divergence::report_to_json(divergence::gap_components(original, proxy, *a.ratio));
    result["ratio"] = *a.ratio;
    result["joint_kl"] = decomposition.total;
    result["query_shift"] = decomposition.query_shift;
    result["alignment_residual"] = decomposition.alignment_residual;
  }

  std::optional<fs::path> manifest;
  if (!a.out.empty()) {
    const auto content = store::canonical_json(result) + "\n";
    store::atomic_write(a.out, content);
    store::RunManifest m;
    m.stage = "theory";
    m.config_hash = stage_config_hash("theory", cfg, {{"check", a.check}, {"trials", a.trials}});
    m.started_at = m.finished_at = store::utc_timestamp();
    m.tool_version = std::string(kVersion);
    m.outputs[fs::path(a.out).filename().string()] = store::digest_bytes(content);
    m.counts = result;
    manifest = store::manifest_path_for(a.out);
    store::write_manifest(*manifest, m);
  }
  auto outcome = finish(out, result, manifest);
  if (!pass) outcome.exit_code = kExitRuntime;
  return outcome;
}

CommandOutcome pipeline(const PipelineArgs& a, const PipelineConfig& cfg, gateway::Gateway& gw,
                        const std::shared_ptr<spdlog::logger>& log, bool dry, std::ostream& out) {
  const fs::path dir = a.workdir;
  std::vector<std::string> stages = {"extract", "filter", "revise"};
  if (cfg.task_file) stages.push_back("mix");
  if (cfg.eval_queries) stages.push_back("eval");
  if (!a.stop_after.empty() && std::find(stages.begin(), stages.end(), a.stop_after) == stages.end()) {
    throw InvalidArgument("--stop-after " + a.stop_after + " is not a stage of this configuration");
  }
  for (const auto& s : stages) require_roles(cfg, s);
  (void)cfg.chat_template();
  if (cfg.task_file) {
    cfg.mix.validate();
    if (!fs::exists(*cfg.task_file)) throw InvalidArgument("task file not found: " + cfg.task_file->string());
  }
  const std::string dataset = cfg.eval_queries ? cfg.eval_queries->stem().string() : std::string();
  if (cfg.eval_queries) {
    if (!fs::exists(*cfg.eval_queries)) {
      throw InvalidArgument("evaluation queries not found: " + cfg.eval_queries->string());
    }
    (void)eval::FieldMap::parse(cfg.eval_field_map);
  }

  const std::map<std::string, fs::path> outputs = {{"extract", dir / "queries.jsonl"},
                                                   {"filter", dir / "filtered.jsonl"},
                                                   {"revise", dir / "responses.jsonl"},
                                                   {"mix", dir / "sft.jsonl"},
                                                   {"eval", dir / "eval.json"}};
  auto inputs_of = [&](const std::string& s) -> std::vector<fs::path> {
    if (s == "filter") return {outputs.at("extract")};
    if (s == "revise") return {outputs.at("filter")};
    if (s == "mix") return {outputs.at("revise"), *cfg.task_file};
    if (s == "eval") return {*cfg.eval_queries};
    return {};
  };
  auto hash_of = [&](const std::string& s) {
    return s == "eval" ? stage_config_hash(s, cfg, {{"field_map", cfg.eval_field_map}, {"dataset", dataset}})
                       : stage_config_hash(s, cfg);
  };

  if (dry) {
    nlohmann::json plan = nlohmann::json::array();
    for (const auto& s : stages) {
      auto entry = plan_entry(cfg, s, inputs_of(s), {outputs.at(s)});
      entry["up_to_date"] = !a.force && stage_up_to_date(outputs.at(s), s, hash_of(s));
      plan.push_back(entry);
      if (s == a.stop_after) break;
    }
    return dry_run(out, "pipeline", plan);
  }

  fs::create_directories(dir);
  const StageContext ctx{cfg, gw, log};
  nlohmann::json ran = nlohmann::json::array();
  std::vector<store::RunManifest> chain;
  fs::path last_manifest;
  for (const auto& s : stages) {
    const auto& target = outputs.at(s);
    StageResult result;
    if (!a.force && stage_up_to_date(target, s, hash_of(s))) {
      log->info("{}: up to date, skipping", s);
      result = {s, target, store::manifest_path_for(target), nullptr, true};
    } else {
      log->info("{}: running", s);
      result = execute(s, [&]() -> StageResult {
        if (s == "extract") return run_extract(ctx, target);
        if (s == "filter") return run_filter(ctx, outputs.at("extract"), target);
        if (s == "revise") return run_revise(ctx, outputs.at("filter"), target);
        if (s == "mix") return run_mix(ctx, outputs.at("revise"), *cfg.task_file, target);
        return run_eval(ctx, *cfg.eval_queries, cfg.eval_field_map, target, dataset);
      });
    }
    last_manifest = result.manifest;
    if (s != "eval") chain.push_back(store::read_manifest(result.manifest));
    ran.push_back({{"stage", s},
                   {"skipped", result.skipped},
                   {"output", result.output.generic_string()},
                   {"summary", result.summary}});
    if (s == a.stop_after) break;
  }

  const auto problems = store::verify_chain(chain);
  if (!problems.empty()) {
    std::string msg = "manifest chain is broken:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw StageError("pipeline", msg);
  }
  return finish(out, {{"command", "pipeline"}, {"workdir", dir.generic_string()}, {"stages", ran}},
                last_manifest);
}

}  // namespace

CommandOutcome run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Synthetic safety-alignment data pipeline: extract, filter, revise, mix, evaluate.",
               "alignreplay"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(kVersion));

  Globals g;
  app.add_option("--config", g.config, "Pipeline configuration (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Seed for mixing and clustering (overrides the config)");
  app.add_option("--template-family", g.template_family, "Chat template family (overrides the config)");
  app.add_flag("--dry-run", g.dry_run, "Validate and print the plan without network calls");
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error or off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  ExtractArgs ex;
  auto* extract = app.add_subcommand("extract", "Sample synthetic queries per subdomain keyword");
  extract->add_option("--out", ex.out, "Query records (JSONL)")->required();
  extract->add_option("--keywords-file", ex.keywords, "Keyword list, one per line")->check(CLI::ExistingFile);
  extract->add_option("--samples", ex.samples, "Samples per keyword")->check(CLI::PositiveNumber);

  FilterArgs fa;
  auto* filter = app.add_subcommand("filter", "Perplexity, dedup and relevance filters");
  filter->add_option("--in", fa.in, "Query records from extract")->required()->check(CLI::ExistingFile);
  filter->add_option("--out", fa.out, "Surviving query records")->required();

  ReviseArgs ra;
  auto* revise = app.add_subcommand("revise", "Generate responses, audit them and revise unsafe ones");
  revise->add_option("--in", ra.in, "Filtered query records")->required()->check(CLI::ExistingFile);
  revise->add_option("--out", ra.out, "Audited response records")->required();
  revise->add_option("--guardrail-endpoint", ra.guardrail_endpoint, "Guardrail base URL");

  MixArgs ma;
  auto* mixcmd = app.add_subcommand("mix", "Build the SFT dataset from safety and task pools");
  mixcmd->add_option("--n", ma.n, "Total examples")->check(CLI::PositiveNumber);
  mixcmd->add_option("--ratio", ma.ratio, "Safety share r in [0, 1]");
  mixcmd->add_option("--safety", ma.safety, "Audited response records")->required()->check(CLI::ExistingFile);
  mixcmd->add_option("--task", ma.task, "Task dataset (JSONL)")->check(CLI::ExistingFile);
  mixcmd->add_option("--out", ma.out, "SFT dataset (JSONL)")->required();

  SimilarityArgs sa;
  auto* sim = app.add_subcommand("similarity", "Compare two datasets with a divergence-frontier score");
  sim->add_option("--ref", sa.ref, "Reference dataset (JSONL)")->required()->check(CLI::ExistingFile);
  sim->add_option("--cand", sa.cand, "Candidate dataset (JSONL)")->required()->check(CLI::ExistingFile);
  sim->add_option("--field", sa.field, "query or response")->check(CLI::IsMember({"query", "response"}));
  sim->add_option("--clusters", sa.clusters, "k-means clusters")->check(CLI::PositiveNumber);
  sim->add_option("--scale", sa.scale, "Scaling factor c")->check(CLI::PositiveNumber);
  sim->add_option("--grid", sa.grid, "Interior lambda grid points")->check(CLI::PositiveNumber);
  sim->add_option("--sample-cap", sa.sample_cap, "Per-dataset sample cap")->check(CLI::PositiveNumber);
  sim->add_option("--out", sa.out, "Result (JSON)")->required();
  sim->add_option("--frontier-csv", sa.frontier_csv, "Also write the frontier as CSV");

  EvalArgs ea;
  auto* evalcmd = app.add_subcommand("eval", "Harmful score of a model on evaluation queries");
  evalcmd->add_option("--queries", ea.queries, "Evaluation queries (JSONL)")->required()->check(CLI::ExistingFile);
  evalcmd->add_option("--field-map", ea.field_map, "e.g. query=prompt");
  evalcmd->add_option("--model-endpoint", ea.model_endpoint, "Evaluated model base URL");
  evalcmd->add_option("--guardrail-endpoint", ea.guardrail_endpoint, "Guardrail base URL");
  evalcmd->add_option("--out", ea.out, "Evaluation run (JSON)")->required();
  evalcmd->add_option("--name", ea.name, "Dataset name for the report");

  TheoryArgs ta;
  auto* theorycmd = app.add_subcommand("theory", "Divergence identities and safety-gap components");
  theorycmd->add_option("--check", ta.check, "theorem1 or pinsker")->check(CLI::IsMember({"theorem1", "pinsker"}));
  theorycmd->add_option("--trials", ta.trials, "Random instances");
  theorycmd->add_option("--original", ta.original, "Original model (JSON)")->check(CLI::ExistingFile);
  theorycmd->add_option("--proxy", ta.proxy, "Proxy model (JSON)")->check(CLI::ExistingFile);
  theorycmd->add_option("--ratio", ta.ratio, "Mixing ratio r in (0, 1)");
  theorycmd->add_option("--out", ta.out, "Write the result (JSON) and a manifest");

  PipelineArgs pa;
  auto* pipe = app.add_subcommand("pipeline", "Run every stage, resuming where outputs are current");
  pipe->add_option("--workdir", pa.workdir, "Directory for all stage outputs")->required();
  pipe->add_option("--stop-after", pa.stop_after, "Last stage to run")->check(CLI::IsMember(kPipelineStages));
  pipe->add_flag("--force", pa.force, "Rerun stages even when their outputs are current");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return {kExitOk, "help", std::nullopt};
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return {kExitOk, "help", std::nullopt};
  } catch (const CLI::CallForVersion& e) {
    app.exit(e, out, err);
    return {kExitOk, "version", std::nullopt};
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return {kExitUsage, e.what(), std::nullopt};
  }

  const auto* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  auto log = make_logger(err, g.log_level);

  PipelineConfig cfg;
  try {
    cfg = g.config.empty() ? PipelineConfig{} : PipelineConfig::from_file(g.config);
    if (g.seed) {
      cfg.seed = *g.seed;
      cfg.mix.seed = *g.seed;
      cfg.similarity.kmeans_seed = *g.seed;
    }
    if (!g.template_family.empty()) cfg.template_family = g.template_family;
    if (!ex.keywords.empty()) cfg.keywords = templates::load_keyword_file(ex.keywords);
    if (ex.samples) cfg.query_params.n_samples = *ex.samples;
    override_endpoint(cfg, "guardrail", command == "revise" ? ra.guardrail_endpoint : ea.guardrail_endpoint);
    override_endpoint(cfg, "eval_model", ea.model_endpoint);
    if (ma.n) cfg.mix.total_n = *ma.n;
    if (ma.ratio) cfg.mix.ratio_r = *ma.ratio;
    if (sa.clusters) cfg.similarity.n_clusters = *sa.clusters;
    if (sa.scale) cfg.similarity.scaling_c = *sa.scale;
    if (sa.grid) cfg.similarity.lambda_grid = *sa.grid;
    if (sa.sample_cap) cfg.similarity.sample_cap = *sa.sample_cap;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return {kExitUsage, e.what(), std::nullopt};
  }

  gateway::Gateway gw;
  const StageContext ctx{cfg, gw, log};
  try {
    if (command == "theory") return theory(ta, cfg, g.dry_run, out);
    if (command == "pipeline") return pipeline(pa, cfg, gw, log, g.dry_run, out);

    // Single-stage commands: validate everything the stage needs up front so
    // configuration problems exit with a usage error before any request.
    require_roles(cfg, command);
    std::vector<fs::path> inputs;
    std::vector<fs::path> outputs;
    std::function<StageResult()> body;
    if (command == "extract") {
      (void)cfg.chat_template();
      cfg.query_params.validate();
      outputs = {ex.out};
      body = [&] { return run_extract(ctx, ex.out); };
    } else if (command == "filter") {
      cfg.filter.validate();
      inputs = {fa.in};
      outputs = {fa.out};
      body = [&] { return run_filter(ctx, fa.in, fa.out); };
    } else if (command == "revise") {
      (void)cfg.chat_template();
      cfg.response_params.validate();
      inputs = {ra.in};
      outputs = {ra.out};
      body = [&] { return run_revise(ctx, ra.in, ra.out); };
    } else if (command == "mix") {
      if (ma.task.empty()) {
        if (!cfg.task_file) throw InvalidArgument("mix needs --task or task_file in the config");
        ma.task = cfg.task_file->string();
      }
      cfg.mix.validate();
      inputs = {ma.safety, ma.task};
      outputs = {ma.out};
      body = [&] { return run_mix(ctx, ma.safety, ma.task, ma.out); };
    } else if (command == "similarity") {
      cfg.similarity.validate();
      inputs = {sa.ref, sa.cand};
      outputs = {sa.out};
      std::optional<fs::path> csv;
      if (!sa.frontier_csv.empty()) csv = sa.frontier_csv;
      body = [&, csv] { return run_similarity(ctx, sa.ref, sa.cand, sa.field, sa.out, csv); };
    } else {
      (void)cfg.chat_template();
      cfg.eval_params.validate();
      if (ea.field_map.empty()) ea.field_map = cfg.eval_field_map;
      (void)eval::FieldMap::parse(ea.field_map);
      if (ea.name.empty()) ea.name = fs::path(ea.queries).stem().string();
      inputs = {ea.queries};
      outputs = {ea.out};
      body = [&] { return run_eval(ctx, ea.queries, ea.field_map, ea.out, ea.name); };
    }

    if (g.dry_run) {
      return dry_run(out, command, nlohmann::json::array({plan_entry(cfg, command, inputs, outputs)}));
    }
    const auto result = execute(command, body);
    return finish(out, {{"command", command}, {"output", result.output.generic_string()}, {"summary", result.summary}},
                  result.manifest);
  } catch (const StageError& e) {
    err << "error: stage " << e.stage() << " failed: " << e.what() << '\n';
    return {kExitRuntime, e.what(), std::nullopt};
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << '\n';
    return {kExitUsage, e.what(), std::nullopt};
  } catch (const std::exception& e) {
    err << "error: " << command << " failed: " << e.what() << '\n';
    return {kExitRuntime, e.what(), std::nullopt};
  }
}

}  // namespace alignreplay::cli
