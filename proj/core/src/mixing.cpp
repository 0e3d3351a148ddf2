#include "alignreplay/mixing.hpp"

#include <cmath>
#include <set>

#include "alignreplay/errors.hpp"
#include "alignreplay/random.hpp"

namespace alignreplay::mixing {

void MixConfig::validate() const {
  if (total_n <= 0) throw InvalidArgument("total_n must be positive");
  if (!(ratio_r >= 0.0 && ratio_r <= 1.0)) throw InvalidArgument("mixing ratio must lie in [0, 1]");
}

MixConfig MixConfig::from_json(const nlohmann::json& j) {
  MixConfig c;
  c.total_n = j.value("total_n", c.total_n);
  c.ratio_r = j.value("ratio", c.ratio_r);
  c.seed = j.value("seed", c.seed);
  return c;
}

nlohmann::json MixConfig::to_json() const {
  return {{"total_n", total_n}, {"ratio", ratio_r}, {"seed", seed}};
}

std::size_t safety_share(std::int64_t total_n, double ratio_r) {
  const double exact = ratio_r * static_cast<double>(total_n);
  const auto share = static_cast<std::int64_t>(std::floor(exact + 0.5));
  return static_cast<std::size_t>(std::clamp<std::int64_t>(share, 0, total_n));
}

MixCounts plan_counts(const MixConfig& cfg, std::size_t available_difficult,
                      std::size_t available_easy, std::size_t available_task) {
  cfg.validate();
  MixCounts c;
  c.n_safety = safety_share(cfg.total_n, cfg.ratio_r);
  c.n_task = static_cast<std::size_t>(cfg.total_n) - c.n_safety;
  if (available_task < c.n_task) throw InsufficientPool("task", c.n_task - available_task);

  const std::size_t balanced = std::min(available_difficult, c.n_safety / 2);
  c.n_easy = std::min(available_easy, c.n_safety - balanced);
  std::size_t remaining = c.n_safety - balanced - c.n_easy;
  const std::size_t extra = std::min(available_difficult - balanced, remaining);
  c.n_difficult = balanced + extra;
  remaining -= extra;
  if (remaining > 0) throw InsufficientPool("safety (difficult + easy)", remaining);
  return c;
}

nlohmann::json SftExample::to_json() const {
  nlohmann::json messages = nlohmann::json::array(
      {{{"role", "user"}, {"content", user}}, {{"role", "assistant"}, {"content", assistant}}});
  return {{"schema", kSftSchema},
          {"id", id},
          {"messages", messages},
          {"source", source},
          {"difficulty", difficulty ? nlohmann::json(to_string(*difficulty)) : nlohmann::json()}};
}

SftExample SftExample::from_json(const nlohmann::json& j) {
  SftExample e;
  e.id = j.at("id").get<std::string>();
  e.source = j.at("source").get<std::string>();
  if (!j.at("difficulty").is_null()) {
    e.difficulty = difficulty_from_string(j.at("difficulty").get<std::string>());
  }
  for (const auto& m : j.at("messages")) {
    const auto role = m.at("role").get<std::string>();
    if (role == "user" && e.user.empty()) e.user = m.at("content").get<std::string>();
    if (role == "assistant" && e.assistant.empty()) e.assistant = m.at("content").get<std::string>();
  }
  return e;
}

nlohmann::json MixManifest::to_json() const {
  return {{"schema", "mix-manifest.v1"},
          {"total_n", total_n},
          {"ratio", ratio_r},
          {"seed", seed},
          {"n_safety", n_safety},
          {"n_task", n_task},
          {"n_difficult", n_difficult},
          {"n_easy", n_easy},
          {"source_digests", source_digests},
          {"provenance", provenance}};
}

MixManifest MixManifest::from_json(const nlohmann::json& j) {
  MixManifest m;
  m.total_n = j.at("total_n").get<std::int64_t>();
  m.ratio_r = j.at("ratio").get<double>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.n_safety = j.at("n_safety").get<std::size_t>();
  m.n_task = j.at("n_task").get<std::size_t>();
  m.n_difficult = j.at("n_difficult").get<std::size_t>();
  m.n_easy = j.at("n_easy").get<std::size_t>();
  m.source_digests = j.at("source_digests").get<std::map<std::string, std::string>>();
  m.provenance = j.at("provenance").get<std::vector<std::string>>();
  return m;
}

MixResult mix(const std::vector<SafetyExample>& safety_pool, const std::vector<TaskExample>& task_pool,
              const MixConfig& cfg, std::map<std::string, std::string> source_digests) {
  std::vector<const SafetyExample*> difficult;
  std::vector<const SafetyExample*> easy;
  for (const auto& s : safety_pool) {
    (s.difficulty == Difficulty::difficult ? difficult : easy).push_back(&s);
  }
  const auto counts = plan_counts(cfg, difficult.size(), easy.size(), task_pool.size());

  rng::Engine engine(cfg.seed);
  std::vector<SftExample> picked;
  picked.reserve(static_cast<std::size_t>(cfg.total_n));
  auto take_safety = [&](const std::vector<const SafetyExample*>& stratum, std::size_t k) {
    for (auto i : rng::sample_without_replacement(engine, stratum.size(), k)) {
      const auto& s = *stratum[i];
      picked.push_back({"safety:" + s.id, "safety", s.difficulty, s.query, s.response});
    }
  };
  take_safety(difficult, counts.n_difficult);
  take_safety(easy, counts.n_easy);
  for (auto i : rng::sample_without_replacement(engine, task_pool.size(), counts.n_task)) {
    const auto& t = task_pool[i];
    picked.push_back({"task:" + t.id, "task", std::nullopt, t.query, t.response});
  }
  rng::shuffle(picked, engine);

  MixResult result;
  result.manifest.total_n = cfg.total_n;
  result.manifest.ratio_r = cfg.ratio_r;
  result.manifest.seed = cfg.seed;
  result.manifest.n_safety = counts.n_safety;
  result.manifest.n_task = counts.n_task;
  result.manifest.n_difficult = counts.n_difficult;
  result.manifest.n_easy = counts.n_easy;
  result.manifest.source_digests = std::move(source_digests);
  for (const auto& e : picked) result.manifest.provenance.push_back(e.id);
  result.dataset = std::move(picked);
  return result;
}

VerifyReport verify_manifest(const std::vector<SftExample>& dataset, const MixManifest& manifest) {
  VerifyReport report;
  auto fail = [&](std::string msg) {
    report.ok = false;
    report.diffs.push_back(std::move(msg));
  };
  auto compare = [&](const char* field, std::size_t recount, std::size_t claimed) {
    if (recount != claimed) {
      fail(std::string(field) + ": manifest says " + std::to_string(claimed) + ", dataset has " +
           std::to_string(recount));
    }
  };

  std::size_t safety = 0, task = 0, difficult = 0, easy = 0;
  for (const auto& e : dataset) {
    if (e.source == "safety") {
      ++safety;
      if (e.difficulty == Difficulty::difficult) ++difficult;
      if (e.difficulty == Difficulty::easy) ++easy;
    } else if (e.source == "task") {
      ++task;
    } else {
      fail("record " + e.id + " has unknown source \"" + e.source + "\"");
    }
  }
  compare("n_safety", safety, manifest.n_safety);
  compare("n_task", task, manifest.n_task);
  compare("n_difficult", difficult, manifest.n_difficult);
  compare("n_easy", easy, manifest.n_easy);
  compare("total_n", dataset.size(), static_cast<std::size_t>(manifest.total_n));

  std::set<std::string> in_dataset;
  for (const auto& e : dataset) {
    if (!in_dataset.insert(e.id).second) fail("duplicate record id " + e.id);
  }
  const std::set<std::string> in_manifest(manifest.provenance.begin(), manifest.provenance.end());
  for (const auto& id : manifest.provenance) {
    if (!in_dataset.contains(id)) fail("provenance id " + id + " not found in dataset");
  }
  for (const auto& id : in_dataset) {
    if (!in_manifest.contains(id)) fail("dataset id " + id + " missing from manifest provenance");
  }
  if (report.ok) {
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      if (dataset[i].id != manifest.provenance[i]) {
        fail("order differs at position " + std::to_string(i) + ": " + dataset[i].id + " vs " +
             manifest.provenance[i]);
        break;
      }
    }
  }
  return report;
}

std::vector<SafetyExample> safety_pool_from_responses(const std::vector<ResponseRecord>& responses) {
  std::vector<SafetyExample> pool;
  for (const auto& r : responses) {
    if (r.quarantined() || r.safety_label != SafetyLabel::safe) continue;
    if (r.difficulty == Difficulty::untagged) continue;
    pool.push_back({r.query_id, r.query_text, r.response_text, r.difficulty});
  }
  return pool;
}

namespace {

std::optional<std::string> first_string(const nlohmann::json& j,
                                        std::initializer_list<const char*> keys) {
  for (const char* k : keys) {
    if (j.contains(k) && j.at(k).is_string()) return j.at(k).get<std::string>();
  }
  return std::nullopt;
}

}  // namespace

TaskExample task_from_json(const nlohmann::json& j, std::size_t line) {
  TaskExample t;
  if (j.contains("id") && j.at("id").is_string()) {
    t.id = j.at("id").get<std::string>();
  } else if (j.contains("id") && j.at("id").is_number_integer()) {
    t.id = std::to_string(j.at("id").get<std::int64_t>());
  } else {
    t.id = "line-" + std::to_string(line);
  }
  if (j.contains("messages")) {
    for (const auto& m : j.at("messages")) {
      const auto role = m.value("role", "");
      if (role == "user" && t.query.empty()) t.query = m.value("content", "");
      if (role == "assistant" && t.response.empty()) t.response = m.value("content", "");
    }
  } else {
    t.query = first_string(j, {"query", "prompt", "instruction", "question"}).value_or("");
    t.response = first_string(j, {"response", "output", "answer", "completion"}).value_or("");
  }
  if (t.query.empty() || t.response.empty()) {
    throw MalformedRecord(line, "task record needs a user query and an assistant response");
  }
  return t;
}

}  // namespace alignreplay::mixing
