#pragma once

// Scripted OpenAI-compatible HTTP server for tests and offline demos.
// Serves /v1/completions (generation and echo scoring), /v1/embeddings and
// /v1/chat/completions from user-supplied callbacks on an ephemeral port.

#include <atomic>
#include <chrono>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

namespace alignreplay::mock {

struct RequestInfo {
  std::string path;
  std::string request_id;
  int attempt = 1;  // per request id, 1-based
  const nlohmann::json* body = nullptr;
};

struct Script {
  /// n completions for a prompt; defaults to n copies of "ok".
  std::function<std::vector<std::string>(const std::string& prompt, int n)> completion;
  /// Raw (unnormalized) vector for one text.
  std::function<std::vector<float>(const std::string& text)> embedding;
  /// Token log-probabilities for an echoed text; the server prepends the
  /// null entry for the first token.
  std::function<std::vector<double>(const std::string& text)> logprobs;
  /// Guardrail output for a (query, response) conversation.
  std::function<std::string(const std::string& query, const std::string& response)> verdict;
  /// HTTP status to return instead of serving the request; 0 serves normally.
  std::function<int(const RequestInfo&)> fault;
  /// Body to send verbatim with status 200 instead of the scripted reply;
  /// an empty optional serves normally.
  std::function<std::optional<std::string>(const RequestInfo&)> raw_reply;
  /// Per-request service delay, used to make concurrency observable.
  std::chrono::milliseconds latency{0};
};

class MockServer {
 public:
  explicit MockServer(Script script, int worker_threads = 32);
  ~MockServer();
  MockServer(const MockServer&) = delete;
  MockServer& operator=(const MockServer&) = delete;

  /// Binds 127.0.0.1 on the given port (0 picks a free one) and serves in
  /// the background.
  void start(int port = 0);
  void stop();

  int port() const { return port_; }
  std::string base_url() const;

  int max_in_flight() const { return max_in_flight_.load(); }
  std::size_t request_count(const std::string& path) const;
  std::size_t total_requests() const;
  int attempts(const std::string& request_id) const;
  void reset_stats();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  Script script_;
  int port_ = 0;
  std::thread thread_;

  std::atomic<int> in_flight_{0};
  std::atomic<int> max_in_flight_{0};
  mutable std::mutex stats_mutex_;
  std::map<std::string, std::size_t> per_path_;
  std::map<std::string, int> attempts_;

  friend struct Handler;
};

/// Builds a script from a JSON fixture. Keys (all optional):
///   completions: [{"contains": str, "texts": [str, ...]}]  first match wins;
///                texts are cycled to fill n
///   default_completion: str
///   logprob: number                 every scored token gets this value
///   embeddings: {text: [floats]}    otherwise a hashed 16-d vector
///   unsafe_markers: [str]           response containing one is "yes"
///   latency_ms: int
Script script_from_json(const nlohmann::json& fixture);

/// Deterministic pseudo-embedding of a text (FNV-1a seeded), dimension `dim`.
std::vector<float> hashed_embedding(const std::string& text, std::size_t dim = 16);

}  // namespace alignreplay::mock
