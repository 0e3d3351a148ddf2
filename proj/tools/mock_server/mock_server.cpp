#include "alignreplay/mock_server.hpp"

#include <httplib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace alignreplay::mock {

struct MockServer::Impl {
  httplib::Server server;
};

struct Handler {
  static void serve(MockServer& self, const std::string& path, const httplib::Request& req,
                    httplib::Response& res) {
    const int now = ++self.in_flight_;
    int seen = self.max_in_flight_.load();
    while (now > seen && !self.max_in_flight_.compare_exchange_weak(seen, now)) {
    }
    struct Leave {
      std::atomic<int>& counter;
      ~Leave() { --counter; }
    } leave{self.in_flight_};

    const std::string request_id = req.get_header_value("X-Request-Id");
    int attempt = 1;
    {
      std::lock_guard lock(self.stats_mutex_);
      ++self.per_path_[path];
      if (!request_id.empty()) attempt = ++self.attempts_[request_id];
    }
    if (self.script_.latency.count() > 0) std::this_thread::sleep_for(self.script_.latency);

    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::parse_error&) {
      res.status = 400;
      res.set_content(R"({"error":"invalid json"})", "application/json");
      return;
    }
    if (self.script_.fault) {
      const RequestInfo info{path, request_id, attempt, &body};
      if (const int status = self.script_.fault(info); status != 0) {
        res.status = status;
        res.set_content(R"({"error":"injected fault"})", "application/json");
        return;
      }
    }
    if (self.script_.raw_reply) {
      const RequestInfo info{path, request_id, attempt, &body};
      if (auto raw = self.script_.raw_reply(info)) {
        res.status = 200;
        res.set_content(*raw, "application/json");
        return;
      }
    }
    try {
      nlohmann::json reply;
      if (path == "/v1/completions") {
        reply = completions(self.script_, body);
      } else if (path == "/v1/embeddings") {
        reply = embeddings(self.script_, body);
      } else {
        reply = chat(self.script_, body);
      }
      res.status = 200;
      res.set_content(reply.dump(), "application/json");
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
    }
  }

  static nlohmann::json completions(const Script& script, const nlohmann::json& body) {
    const std::string prompt = body.at("prompt").get<std::string>();
    nlohmann::json choices = nlohmann::json::array();
    if (body.value("echo", false)) {
      std::vector<double> lps =
          script.logprobs ? script.logprobs(prompt) : std::vector<double>{-1.0};
      nlohmann::json token_lps = nlohmann::json::array({nullptr});
      for (double lp : lps) token_lps.push_back(lp);
      choices.push_back({{"index", 0},
                         {"text", prompt},
                         {"logprobs", {{"token_logprobs", token_lps}}},
                         {"finish_reason", "length"}});
    } else {
      const int n = body.value("n", 1);
      auto texts = script.completion ? script.completion(prompt, n)
                                     : std::vector<std::string>(static_cast<std::size_t>(n), "ok");
      if (texts.size() != static_cast<std::size_t>(n)) {
        throw std::runtime_error("script returned the wrong number of completions");
      }
      // Reverse order so clients must sort by index.
      for (int i = n - 1; i >= 0; --i) {
        choices.push_back({{"index", i}, {"text", texts[static_cast<std::size_t>(i)]}, {"finish_reason", "stop"}});
      }
    }
    return {{"object", "text_completion"}, {"model", body.value("model", "")}, {"choices", choices}};
  }

  static nlohmann::json embeddings(const Script& script, const nlohmann::json& body) {
    const auto& input = body.at("input");
    std::vector<std::string> texts =
        input.is_string() ? std::vector<std::string>{input.get<std::string>()}
                          : input.get<std::vector<std::string>>();
    nlohmann::json data = nlohmann::json::array();
    for (std::size_t i = texts.size(); i-- > 0;) {
      auto v = script.embedding ? script.embedding(texts[i]) : hashed_embedding(texts[i]);
      data.push_back({{"object", "embedding"}, {"index", i}, {"embedding", v}});
    }
    return {{"object", "list"}, {"data", data}};
  }

  static nlohmann::json chat(const Script& script, const nlohmann::json& body) {
    std::string query, response;
    for (const auto& m : body.at("messages")) {
      const auto role = m.at("role").get<std::string>();
      if (role == "user") query = m.at("content").get<std::string>();
      if (role == "assistant") response = m.at("content").get<std::string>();
    }
    const std::string content =
        script.verdict ? script.verdict(query, response) : "Harmful response: no";
    return {{"object", "chat.completion"},
            {"choices", nlohmann::json::array({{{"index", 0},
                                                {"message", {{"role", "assistant"}, {"content", content}}},
                                                {"finish_reason", "stop"}}})}};
  }
};

MockServer::MockServer(Script script, int worker_threads)
    : impl_(std::make_unique<Impl>()), script_(std::move(script)) {
  impl_->server.new_task_queue = [worker_threads] {
    return new httplib::ThreadPool(static_cast<std::size_t>(worker_threads));
  };
  for (const std::string path : {"/v1/completions", "/v1/embeddings", "/v1/chat/completions"}) {
    impl_->server.Post(path, [this, path](const httplib::Request& req, httplib::Response& res) {
      Handler::serve(*this, path, req, res);
    });
  }
}

MockServer::~MockServer() { stop(); }

void MockServer::start(int port) {
  if (thread_.joinable()) throw std::logic_error("mock server already running");
  if (port == 0) {
    port_ = impl_->server.bind_to_any_port("127.0.0.1");
  } else if (impl_->server.bind_to_port("127.0.0.1", port)) {
    port_ = port;
  } else {
    port_ = -1;
  }
  if (port_ <= 0) throw std::runtime_error("mock server could not bind a port");
  thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void MockServer::stop() {
  if (!thread_.joinable()) return;
  impl_->server.stop();
  thread_.join();
}

std::string MockServer::base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }

std::size_t MockServer::request_count(const std::string& path) const {
  std::lock_guard lock(stats_mutex_);
  const auto it = per_path_.find(path);
  return it == per_path_.end() ? 0 : it->second;
}

std::size_t MockServer::total_requests() const {
  std::lock_guard lock(stats_mutex_);
  std::size_t total = 0;
  for (const auto& [_, n] : per_path_) total += n;
  return total;
}

int MockServer::attempts(const std::string& request_id) const {
  std::lock_guard lock(stats_mutex_);
  const auto it = attempts_.find(request_id);
  return it == attempts_.end() ? 0 : it->second;
}

void MockServer::reset_stats() {
  std::lock_guard lock(stats_mutex_);
  per_path_.clear();
  attempts_.clear();
  max_in_flight_ = in_flight_.load();
}

std::vector<float> hashed_embedding(const std::string& text, std::size_t dim) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::vector<float> v(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    h ^= h >> 33;
    h *= 0xff51afd7ed558ccdULL;
    h ^= h >> 33;
    v[i] = static_cast<float>(static_cast<double>(h >> 11) * 0x1.0p-53 * 2.0 - 1.0);
  }
  return v;
}

Script script_from_json(const nlohmann::json& fixture) {
  Script script;
  if (fixture.contains("completions") || fixture.contains("default_completion")) {
    struct Rule {
      std::string contains;
      std::vector<std::string> texts;
    };
    std::vector<Rule> rules;
    for (const auto& r : fixture.value("completions", nlohmann::json::array())) {
      rules.push_back({r.at("contains").get<std::string>(), r.at("texts").get<std::vector<std::string>>()});
    }
    const std::string fallback = fixture.value("default_completion", std::string("ok"));
    script.completion = [rules, fallback](const std::string& prompt, int n) {
      for (const auto& rule : rules) {
        if (prompt.find(rule.contains) == std::string::npos || rule.texts.empty()) continue;
        std::vector<std::string> out;
        for (int i = 0; i < n; ++i) out.push_back(rule.texts[static_cast<std::size_t>(i) % rule.texts.size()]);
        return out;
      }
      return std::vector<std::string>(static_cast<std::size_t>(n), fallback);
    };
  }
  if (fixture.contains("logprob")) {
    const double lp = fixture.at("logprob").get<double>();
    script.logprobs = [lp](const std::string&) { return std::vector<double>{lp, lp, lp}; };
  }
  if (fixture.contains("embeddings")) {
    const auto table = fixture.at("embeddings").get<std::map<std::string, std::vector<float>>>();
    script.embedding = [table](const std::string& text) {
      const auto it = table.find(text);
      return it != table.end() ? it->second : hashed_embedding(text);
    };
  }
  if (fixture.contains("unsafe_markers")) {
    const auto markers = fixture.at("unsafe_markers").get<std::vector<std::string>>();
    script.verdict = [markers](const std::string&, const std::string& response) {
      for (const auto& m : markers) {
        if (response.find(m) != std::string::npos) return std::string("Harmful response: yes");
      }
      return std::string("Harmful response: no");
    };
  }
  script.latency = std::chrono::milliseconds(fixture.value("latency_ms", 0));
  return script;
}

}  // namespace alignreplay::mock
