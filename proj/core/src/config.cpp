#include "alignreplay/config.hpp"

#include "alignreplay/errors.hpp"
#include "alignreplay/store.hpp"

namespace alignreplay {

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_relative() && !base.empty()) path = base / path;
  return path.lexically_normal();
}

const std::map<std::string, std::string>& fallbacks() {
  static const std::map<std::string, std::string> f = {{"scorer", "generator"},
                                                       {"eval_model", "generator"}};
  return f;
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw InvalidArgument("config must be a JSON object");
  PipelineConfig c;
  try {
    if (j.contains("endpoints")) {
      for (const auto& [role, ep] : j.at("endpoints").items()) {
        c.endpoints.emplace(role, gateway::EndpointConfig::from_json(ep));
      }
    }
    c.template_family = j.value("template_family", c.template_family);
    if (j.contains("templates_file")) {
      c.templates_file = resolve(base_dir, j.at("templates_file").get<std::string>());
    }
    if (j.contains("keywords")) c.keywords = j.at("keywords").get<std::vector<std::string>>();
    if (j.contains("keywords_file")) {
      if (!c.keywords.empty()) throw InvalidArgument("set either keywords or keywords_file, not both");
      c.keywords =
          templates::load_keyword_file(resolve(base_dir, j.at("keywords_file").get<std::string>()));
    }
    if (j.contains("generation")) {
      const auto& g = j.at("generation");
      if (g.contains("query")) c.query_params = gateway::GenerationParams::from_json(g.at("query"), c.query_params);
      if (g.contains("response")) {
        c.response_params = gateway::GenerationParams::from_json(g.at("response"), c.response_params);
      }
      if (g.contains("eval")) c.eval_params = gateway::GenerationParams::from_json(g.at("eval"), c.eval_params);
    }
    if (j.contains("verdict_rule")) c.verdict_rule = gateway::VerdictRule::from_json(j.at("verdict_rule"));
    if (j.contains("filter")) c.filter = post::FilterConfig::from_json(j.at("filter"));
    if (j.contains("mix")) c.mix = mixing::MixConfig::from_json(j.at("mix"));
    if (j.contains("similarity")) c.similarity = similarity::QuantizationConfig::from_json(j.at("similarity"));
    if (j.contains("task_file")) c.task_file = resolve(base_dir, j.at("task_file").get<std::string>());
    if (j.contains("eval_queries")) c.eval_queries = resolve(base_dir, j.at("eval_queries").get<std::string>());
    c.eval_field_map = j.value("eval_field_map", c.eval_field_map);
    c.seed = j.value("seed", c.seed);
    // The global seed drives the mixer and k-means unless a section pins its own.
    if (j.contains("seed")) {
      if (!(j.contains("mix") && j.at("mix").contains("seed"))) c.mix.seed = c.seed;
      if (!(j.contains("similarity") && j.at("similarity").contains("kmeans_seed"))) {
        c.similarity.kmeans_seed = c.seed;
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("invalid config: ") + e.what());
  }
  (void)c.chat_template();  // unknown families fail at load time
  return c;
}

PipelineConfig PipelineConfig::from_file(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(store::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidArgument("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j, path.parent_path());
}

nlohmann::json PipelineConfig::to_json() const {
  nlohmann::json eps = nlohmann::json::object();
  for (const auto& [role, ep] : endpoints) eps[role] = ep.to_json();
  nlohmann::json j = {{"endpoints", eps},
                      {"template_family", template_family},
                      {"keywords", keyword_texts()},
                      {"generation",
                       {{"query", query_params.to_json()},
                        {"response", response_params.to_json()},
                        {"eval", eval_params.to_json()}}},
                      {"verdict_rule", verdict_rule.to_json()},
                      {"filter", filter.to_json()},
                      {"mix", mix.to_json()},
                      {"similarity", similarity.to_json()},
                      {"eval_field_map", eval_field_map},
                      {"seed", seed}};
  if (templates_file) j["templates_file"] = templates_file->generic_string();
  if (task_file) j["task_file"] = task_file->generic_string();
  if (eval_queries) j["eval_queries"] = eval_queries->generic_string();
  return j;
}

bool PipelineConfig::has_endpoint(const std::string& role) const {
  if (endpoints.contains(role)) return true;
  const auto it = fallbacks().find(role);
  return it != fallbacks().end() && endpoints.contains(it->second);
}

const gateway::EndpointConfig& PipelineConfig::endpoint(const std::string& role) const {
  if (auto it = endpoints.find(role); it != endpoints.end()) return it->second;
  if (auto f = fallbacks().find(role); f != fallbacks().end()) {
    if (auto it = endpoints.find(f->second); it != endpoints.end()) return it->second;
  }
  throw InvalidArgument("config has no '" + role + "' endpoint");
}

templates::ChatTemplate PipelineConfig::chat_template() const {
  if (templates_file) return templates::TemplateRegistry::from_file(*templates_file).get(template_family);
  return templates::TemplateRegistry::builtin().get(template_family);
}

std::vector<std::string> PipelineConfig::keyword_texts() const {
  return keywords.empty() ? templates::builtin_subdomains() : keywords;
}

}  // namespace alignreplay
