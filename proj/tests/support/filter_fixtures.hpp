#pragma once

// Scripted inputs for the query-filter stage: the mock scorer returns a fixed
// perplexity per text and the mock embedder a fixed vector per text.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "alignreplay/gateway.hpp"
#include "alignreplay/mock_server.hpp"
#include "alignreplay/post_processing.hpp"
#include "alignreplay/records.hpp"

namespace alignreplay::testing {

struct FilterFixture {
  std::string name;
  std::vector<QueryRecord> records;
  std::map<std::string, double> perplexity;                // by text
  std::map<std::string, std::vector<float>> embeddings;    // by text, keywords included
};

inline QueryRecord fixture_record(const std::string& id, const std::string& keyword, std::int64_t index) {
  QueryRecord r;
  r.id = id;
  r.subdomain = {keyword, 0};
  r.query_text = "text " + id;
  r.raw_continuation = r.query_text + "\"";
  r.ingestion_index = index;
  return r;
}

/// Perplexities 1..20 on q01..q20. Every query is 0.6 along the keyword axis
/// and 0.8 along its own axis, so pairwise cosine is 0.36 and relevance 0.6.
inline FilterFixture perplexity_fixture() {
  FilterFixture f;
  f.name = "perplexity";
  const std::size_t dim = 21;
  std::vector<float> kw(dim, 0.0f);
  kw[0] = 1.0f;
  f.embeddings["kw"] = kw;
  for (int i = 1; i <= 20; ++i) {
    const std::string id = (i < 10 ? "q0" : "q") + std::to_string(i);
    // Ingestion order deliberately differs from perplexity order.
    auto r = fixture_record(id, "kw", (i * 7) % 20);
    f.perplexity[r.query_text] = i;
    std::vector<float> e(dim, 0.0f);
    e[0] = 0.6f;
    e[i] = 0.8f;
    f.embeddings[r.query_text] = e;
    f.records.push_back(r);
  }
  return f;
}

/// sim(1,2) = 0.9, sim(2,3) = 0.9, sim(1,3) = 0.7.
inline FilterFixture dedup_fixture() {
  FilterFixture f;
  f.name = "dedup";
  f.embeddings["kw"] = {1.0f, 0.0f, 0.0f};
  const std::vector<std::vector<float>> e = {
      {1.0f, 0.0f, 0.0f},
      {0.9f, static_cast<float>(std::sqrt(0.19)), 0.0f},
      {0.7f, 0.61942f, 0.35541f},
  };
  for (int i = 0; i < 3; ++i) {
    auto r = fixture_record("d" + std::to_string(i + 1), "kw", i);
    f.perplexity[r.query_text] = 5.0;
    f.embeddings[r.query_text] = e[i];
    f.records.push_back(r);
  }
  return f;
}

/// Keyword (1,0,0,0); r_half sits at cosine exactly 0.5, r_low at 0.49.
inline FilterFixture relevance_fixture() {
  FilterFixture f;
  f.name = "relevance";
  f.embeddings["kw"] = {1.0f, 0.0f, 0.0f, 0.0f};
  auto half = fixture_record("r_half", "kw", 0);
  auto low = fixture_record("r_low", "kw", 1);
  f.embeddings[half.query_text] = {0.5f, 0.5f, 0.5f, 0.5f};
  f.embeddings[low.query_text] = {0.49f, static_cast<float>(std::sqrt(1.0 - 0.49 * 0.49)), 0.0f, 0.0f};
  f.perplexity[half.query_text] = 3.0;
  f.perplexity[low.query_text] = 3.0;
  f.records = {half, low};
  return f;
}

inline std::vector<FilterFixture> all_filter_fixtures() {
  return {perplexity_fixture(), dedup_fixture(), relevance_fixture()};
}

inline mock::Script filter_script(const FilterFixture& f) {
  mock::Script s;
  s.logprobs = [ppl = f.perplexity](const std::string& text) {
    const auto it = ppl.find(text);
    const double lp = it == ppl.end() ? 0.0 : -std::log(it->second);
    return std::vector<double>(4, lp);
  };
  s.embedding = [emb = f.embeddings](const std::string& text) {
    const auto it = emb.find(text);
    return it == emb.end() ? std::vector<float>{1.0f} : it->second;
  };
  return s;
}

/// Runs the filter chain against a fresh mock with the given in-flight limit.
inline post::QueryFilterResult run_filter_fixture(const FilterFixture& f, int parallelism) {
  mock::MockServer server(filter_script(f));
  server.start();
  gateway::EndpointConfig ep;
  ep.base_url = server.base_url();
  ep.model_name = "mock";
  ep.max_in_flight = parallelism;
  ep.embed_batch_size = 2;
  gateway::Gateway gw;
  return post::run_query_filters(f.records, gw, ep, ep, post::FilterConfig{});
}

}  // namespace alignreplay::testing
