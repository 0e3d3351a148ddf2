#pragma once

// Client layer over OpenAI-compatible inference services: completions,
// chat completions (guardrail), embeddings and echoed log-probabilities.

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "alignreplay/records.hpp"

namespace alignreplay::gateway {

struct GenerationParams {
  double temperature = 1.0;
  int max_tokens = 256;
  double top_p = 1.0;
  int n_samples = 1;
  std::optional<std::int64_t> seed;

  /// Throws InvalidArgument; temperature 0 requires n_samples == 1.
  void validate() const;

  /// Synthetic query sampling: T = 1.0, 256 tokens, 512 samples per keyword.
  static GenerationParams query_generation();
  /// Response sampling: T = 0.8, 1024 tokens, top-p 0.95, one completion.
  static GenerationParams response_generation();
  /// Greedy decoding for evaluation: T = 0, 1024 tokens.
  static GenerationParams deterministic();

  static GenerationParams from_json(const nlohmann::json& j, GenerationParams defaults);
  nlohmann::json to_json() const;
};

struct EndpointConfig {
  std::string base_url;
  std::optional<std::string> api_key;
  std::string api_key_env;  // name only; never serialized with the value
  std::string model_name;
  int max_in_flight = 4;
  int retry_limit = 2;
  std::chrono::milliseconds timeout{60'000};
  std::chrono::milliseconds backoff_base{50};
  std::size_t embed_batch_size = 64;

  void validate() const;

  /// Keys: base_url, model, api_key_env, max_in_flight, retry_limit,
  /// timeout_ms, backoff_ms, embed_batch_size. The key itself is read from
  /// the named environment variable.
  static EndpointConfig from_json(const nlohmann::json& j);
  /// Without the secret.
  nlohmann::json to_json() const;
};

struct ScoredText {
  std::string text;
  std::vector<double> token_logprobs;
  double perplexity = 1.0;
};

/// exp(-mean(logprobs)); requires at least one value.
double perplexity_from_logprobs(std::span<const double> logprobs);

/// Maps a guardrail's free-text verdict to a binary label. Each label has a
/// list of patterns (regex when `use_regex`, otherwise literal substrings).
/// Exactly one label must match; anything else is UnparsableVerdict.
struct VerdictRule {
  std::vector<std::string> unsafe_patterns;
  std::vector<std::string> safe_patterns;
  bool use_regex = true;
  bool case_insensitive = true;

  /// Matches "Harmful response: yes|no" as emitted by common guardrails.
  static VerdictRule harmful_response_line();
  static VerdictRule from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  SafetyLabel apply(std::string_view verdict) const;
};

/// Either a value or the exception a task raised.
template <class T>
using Outcome = std::variant<T, std::exception_ptr>;

template <class T>
const T& value_or_rethrow(const Outcome<T>& outcome) {
  if (const auto* err = std::get_if<std::exception_ptr>(&outcome)) std::rethrow_exception(*err);
  return std::get<T>(outcome);
}

/// Counting semaphore with an adjustable ceiling; tracks the high-water mark.
class InFlightLimiter {
 public:
  explicit InFlightLimiter(int limit) : limit_(limit) {}

  void acquire();
  void release();
  int high_water() const;

 private:
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  int limit_;
  int active_ = 0;
  int high_water_ = 0;
};

/// Shareable across threads. Every HTTP request to an endpoint holds one slot
/// of that endpoint's limiter, so concurrent batches never exceed
/// max_in_flight in total.
class Gateway {
 public:
  Gateway() = default;
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  /// n_samples completions via /v1/completions, ordered by choice index.
  std::vector<std::string> generate(const EndpointConfig& endpoint, std::string_view prompt,
                                    const GenerationParams& params);

  /// L2-normalized vectors, one per text, batched by embed_batch_size.
  std::vector<std::vector<float>> embed(const EndpointConfig& endpoint,
                                        const std::vector<std::string>& texts);

  /// Echoed log-probabilities via /v1/completions (echo, max_tokens 0).
  std::vector<ScoredText> score_perplexity(const EndpointConfig& endpoint,
                                           const std::vector<std::string>& texts);

  /// Raw guardrail output for the (query, response) conversation at T = 0.
  std::string guardrail_verdict(const EndpointConfig& endpoint, std::string_view query,
                                std::string_view response);

  SafetyLabel classify_safety(const EndpointConfig& endpoint, std::string_view query,
                              std::string_view response, const VerdictRule& rule);

  /// Runs task(i) for i in [0, n) on up to max_in_flight worker threads;
  /// results are index-aligned with the inputs.
  template <class Fn>
  auto map_bounded(const EndpointConfig& endpoint, std::size_t n, Fn&& task)
      -> std::vector<Outcome<std::invoke_result_t<Fn&, std::size_t>>>;

  /// Issues one JSON POST with retries, holding a limiter slot per attempt.
  nlohmann::json post_json(const EndpointConfig& endpoint, std::string_view path,
                           const nlohmann::json& body);

  int observed_high_water(const EndpointConfig& endpoint);

 private:
  InFlightLimiter& limiter_for(const EndpointConfig& endpoint);

  std::mutex mutex_;
  std::map<std::string, std::unique_ptr<InFlightLimiter>> limiters_;
};

template <class Fn>
auto Gateway::map_bounded(const EndpointConfig& endpoint, std::size_t n, Fn&& task)
    -> std::vector<Outcome<std::invoke_result_t<Fn&, std::size_t>>> {
  using T = std::invoke_result_t<Fn&, std::size_t>;
  std::vector<Outcome<T>> results(n, Outcome<T>(std::exception_ptr{}));
  std::mutex next_mutex;
  std::size_t next = 0;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(next_mutex);
        if (next >= n) return;
        i = next++;
      }
      try {
        results[i] = task(i);
      } catch (...) {
        results[i] = std::current_exception();
      }
    }
  };
  const std::size_t workers =
      std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, endpoint.max_in_flight)));
  if (workers <= 1) {
    worker();
    return results;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  pool.clear();  // joins
  return results;
}

}  // namespace alignreplay::gateway
