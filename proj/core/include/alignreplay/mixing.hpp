#pragma once

// Seeded construction of one SFT dataset from a synthetic safety pool and a
// downstream task pool, with difficult/easy balancing inside the safety share.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "alignreplay/records.hpp"

namespace alignreplay::mixing {

struct SafetyExample {
  std::string id;
  std::string query;
  std::string response;
  Difficulty difficulty = Difficulty::easy;
};

struct TaskExample {
  std::string id;
  std::string query;
  std::string response;
};

struct MixConfig {
  std::int64_t total_n = 0;
  double ratio_r = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
  static MixConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct MixCounts {
  std::size_t n_safety = 0;
  std::size_t n_task = 0;
  std::size_t n_difficult = 0;
  std::size_t n_easy = 0;

  bool operator==(const MixCounts&) const = default;
};

/// floor(r * N + 0.5), so the two shares always sum to N.
std::size_t safety_share(std::int64_t total_n, double ratio_r);

/// Closed-form stratum sizes. Difficult gets min(available, floor(n_safety/2));
/// easy fills the rest, falling back to further difficult records only when
/// easy runs out. Throws InsufficientPool naming the short stratum.
MixCounts plan_counts(const MixConfig& cfg, std::size_t available_difficult,
                      std::size_t available_easy, std::size_t available_task);

struct SftExample {
  std::string id;  // "safety:<query id>" or "task:<task id>"
  std::string source;
  std::optional<Difficulty> difficulty;
  std::string user;
  std::string assistant;

  nlohmann::json to_json() const;
  static SftExample from_json(const nlohmann::json& j);
  bool operator==(const SftExample&) const = default;
};

struct MixManifest {
  std::int64_t total_n = 0;
  double ratio_r = 0.0;
  std::uint64_t seed = 0;
  std::size_t n_safety = 0;
  std::size_t n_task = 0;
  std::size_t n_difficult = 0;
  std::size_t n_easy = 0;
  std::map<std::string, std::string> source_digests;
  std::vector<std::string> provenance;  // dataset order

  nlohmann::json to_json() const;
  static MixManifest from_json(const nlohmann::json& j);
};

struct MixResult {
  std::vector<SftExample> dataset;
  MixManifest manifest;
};

MixResult mix(const std::vector<SafetyExample>& safety_pool, const std::vector<TaskExample>& task_pool,
              const MixConfig& cfg, std::map<std::string, std::string> source_digests = {});

struct VerifyReport {
  bool ok = true;
  std::vector<std::string> diffs;
};

/// Recounts the dataset against the manifest and resolves every provenance id
/// in both directions.
VerifyReport verify_manifest(const std::vector<SftExample>& dataset, const MixManifest& manifest);

/// Safety pool from audited response records; quarantined and untagged
/// records are skipped.
std::vector<SafetyExample> safety_pool_from_responses(const std::vector<ResponseRecord>& responses);

/// Accepts {"messages": [...]} chat records or flat query/response style
/// fields (query|prompt|instruction|question and response|output|answer|completion).
/// Missing ids become "line-<n>".
TaskExample task_from_json(const nlohmann::json& j, std::size_t line);

}  // namespace alignreplay::mixing
