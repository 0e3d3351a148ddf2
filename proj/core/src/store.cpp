#include "alignreplay/store.hpp"

#include <openssl/evp.h>

#include <array>
#include <chrono>
#include <ctime>
#include <fstream>
#include <memory>
#include <sstream>

#include "alignreplay/errors.hpp"
#include "alignreplay/records.hpp"
#include "alignreplay/version.hpp"

namespace alignreplay::store {

namespace fs = std::filesystem;

std::string canonical_json(const nlohmann::json& j) {
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

std::string digest_bytes(std::string_view bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), md.data(), &len) != 1) {
    throw Error("sha256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out = "sha256:";
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[md[i] >> 4];
    out += kHex[md[i] & 0xf];
  }
  return out;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::string digest_file(const fs::path& path) { return digest_bytes(read_file(path)); }

std::string config_hash(const nlohmann::json& config) { return digest_bytes(canonical_json(config)); }

void atomic_write(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

std::string serialize_records(const std::vector<nlohmann::json>& records) {
  std::string out;
  for (const auto& r : records) {
    out += canonical_json(r);
    out += '\n';
  }
  return out;
}

std::string write_records(const fs::path& path, const std::vector<nlohmann::json>& records) {
  const std::string content = serialize_records(records);
  atomic_write(path, content);
  return digest_bytes(content);
}

namespace {

template <class Validate>
ReadResult read_lines(const fs::path& path, Validate&& validate) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  ReadResult result;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      result.malformed.push_back({number, e.what()});
      continue;
    }
    if (!j.is_object()) {
      result.malformed.push_back({number, "not a JSON object"});
      continue;
    }
    if (auto problem = validate(j); !problem.empty()) {
      result.malformed.push_back({number, std::move(problem)});
      continue;
    }
    result.records.push_back(std::move(j));
    result.line_numbers.push_back(number);
  }
  return result;
}

}  // namespace

ReadResult read_records(const fs::path& path, std::string_view expected_schema) {
  const auto& required = required_fields(expected_schema);
  return read_lines(path, [&](const nlohmann::json& j) -> std::string {
    const auto it = j.find("schema");
    if (it == j.end() || !it->is_string()) return "missing \"schema\" field";
    const auto found = it->get<std::string>();
    if (found != expected_schema) throw SchemaMismatch(std::string(expected_schema), found);
    for (const auto& field : required) {
      if (!j.contains(field)) return "missing required field \"" + field + "\"";
    }
    return {};
  });
}

ReadResult read_jsonl(const fs::path& path) {
  return read_lines(path, [](const nlohmann::json&) { return std::string(); });
}

nlohmann::json RunManifest::to_json() const {
  return {{"schema", kManifestSchema}, {"stage", stage},
          {"config_hash", config_hash}, {"inputs", inputs},
          {"outputs", outputs},         {"counts", counts},
          {"started_at", started_at},   {"finished_at", finished_at},
          {"tool_version", tool_version}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  const auto schema = j.value("schema", "");
  if (schema != kManifestSchema) throw SchemaMismatch(std::string(kManifestSchema), schema);
  RunManifest m;
  m.stage = j.at("stage").get<std::string>();
  m.config_hash = j.at("config_hash").get<std::string>();
  m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
  m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
  m.counts = j.value("counts", nlohmann::json::object());
  m.started_at = j.value("started_at", "");
  m.finished_at = j.value("finished_at", "");
  m.tool_version = j.value("tool_version", "");
  return m;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

fs::path manifest_path_for(const fs::path& output) {
  fs::path p = output;
  p += ".manifest.json";
  return p;
}

void write_manifest(const fs::path& path, const RunManifest& manifest) {
  auto m = manifest;
  if (m.tool_version.empty()) m.tool_version = std::string(kVersion);
  atomic_write(path, m.to_json().dump(2) + "\n");
}

RunManifest read_manifest(const fs::path& path) {
  try {
    return RunManifest::from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("unreadable manifest " + path.string() + ": " + e.what());
  }
}

std::vector<std::string> verify_manifest_files(const RunManifest& manifest, const fs::path& base_dir) {
  std::vector<std::string> problems;
  auto check = [&](const std::map<std::string, std::string>& files) {
    for (const auto& [name, digest] : files) {
      const fs::path p = base_dir / name;
      if (!fs::exists(p)) {
        problems.push_back(name + ": missing");
        continue;
      }
      if (digest_file(p) != digest) problems.push_back(name + ": digest mismatch");
    }
  };
  check(manifest.inputs);
  check(manifest.outputs);
  return problems;
}

std::vector<std::string> verify_chain(const std::vector<RunManifest>& manifests) {
  std::vector<std::string> problems;
  for (std::size_t i = 1; i < manifests.size(); ++i) {
    const auto& prev = manifests[i - 1];
    const auto& next = manifests[i];
    bool linked = false;
    for (const auto& [name, digest] : next.inputs) {
      const auto it = prev.outputs.find(name);
      if (it == prev.outputs.end()) continue;
      if (it->second == digest) {
        linked = true;
      } else {
        problems.push_back(next.stage + " consumes " + name + " with a digest that differs from " +
                           prev.stage + "'s output");
      }
    }
    if (!linked) problems.push_back(next.stage + " does not consume any output of " + prev.stage);
  }
  return problems;
}

}  // namespace alignreplay::store
