#pragma once

// JSONL persistence, content digests and run manifests shared by every stage.

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace alignreplay::store {

/// Sorted keys, no insignificant whitespace, invalid UTF-8 replaced.
std::string canonical_json(const nlohmann::json& j);

/// "sha256:<hex>" of the bytes.
std::string digest_bytes(std::string_view bytes);
std::string digest_file(const std::filesystem::path& path);

/// Digest of the canonical form, secrets expected to be stripped by the caller.
std::string config_hash(const nlohmann::json& config);

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temp file, then renames over `path`.
void atomic_write(const std::filesystem::path& path, std::string_view content);

/// One canonical JSON object per line with a trailing newline. Returns the
/// digest of what was written.
std::string write_records(const std::filesystem::path& path, const std::vector<nlohmann::json>& records);

std::string serialize_records(const std::vector<nlohmann::json>& records);

struct MalformedLine {
  std::size_t line = 0;  // 1-based
  std::string message;
};

struct ReadResult {
  std::vector<nlohmann::json> records;
  std::vector<MalformedLine> malformed;
  std::vector<std::size_t> line_numbers;  // parallel to records
};

/// Reads schema-tagged JSONL in file order. Lines that fail to parse or lack a
/// required field are reported and skipped; a record tagged with a different
/// schema id throws SchemaMismatch.
ReadResult read_records(const std::filesystem::path& path, std::string_view expected_schema);

/// Untagged JSONL (external datasets). Only parse failures and non-objects are
/// reported.
ReadResult read_jsonl(const std::filesystem::path& path);

struct RunManifest {
  std::string stage;
  std::string config_hash;
  std::map<std::string, std::string> inputs;   // file name -> digest
  std::map<std::string, std::string> outputs;  // file name -> digest
  nlohmann::json counts = nlohmann::json::object();
  std::string started_at;
  std::string finished_at;
  std::string tool_version;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

std::string utc_timestamp();

std::filesystem::path manifest_path_for(const std::filesystem::path& output);
void write_manifest(const std::filesystem::path& path, const RunManifest& manifest);
RunManifest read_manifest(const std::filesystem::path& path);

/// Re-hashes every input and output relative to `base_dir` and returns one
/// message per missing or mismatched file.
std::vector<std::string> verify_manifest_files(const RunManifest& manifest,
                                               const std::filesystem::path& base_dir);

/// Checks that each manifest consumes at least one output of its predecessor
/// and that every shared file name carries the same digest on both sides.
std::vector<std::string> verify_chain(const std::vector<RunManifest>& manifests);

}  // namespace alignreplay::store
