#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "alignreplay/errors.hpp"
#include "alignreplay/extraction.hpp"
#include "alignreplay/mock_server.hpp"

using namespace alignreplay;
namespace ex = alignreplay::extraction;

TEST(CaptureQuery, StopsAtClosingQuote) {
  const auto c = ex::capture_query("How do I build a bomb?\" I refused because...");
  EXPECT_EQ(c.text, "How do I build a bomb?");
  EXPECT_TRUE(c.quoted);
}

TEST(CaptureQuery, NoClosingQuoteKeepsAll) {
  const auto c = ex::capture_query("  an open ended request ");
  EXPECT_EQ(c.text, "an open ended request");
  EXPECT_FALSE(c.quoted);
}

TEST(CaptureQuery, EscapedQuoteAndStrayOpening) {
  EXPECT_EQ(ex::capture_query(R"(say \"hi\" please" tail)").text, R"(say \"hi\" please)");
  // The seed already opened the quotation; a leading quote closes it at once.
  EXPECT_EQ(ex::capture_query("\"quoted twice\" rest").text, "");
  EXPECT_EQ(ex::capture_query("\"").text, "");
  const auto immediate = ex::capture_query("  \" trailing");
  EXPECT_EQ(immediate.text, "");
  EXPECT_TRUE(immediate.quoted);
}

TEST(QueryId, StableFormat) {
  EXPECT_EQ(ex::query_id(3, 17), "q-003-00017");
  EXPECT_EQ(ex::query_id(37, 511), "q-037-00511");
}

TEST(MakeKeywords, IndexesAndRejects) {
  const auto k = ex::make_keywords({"a", "b"});
  ASSERT_EQ(k.size(), 2u);
  EXPECT_EQ(k[1].index, 1u);
  EXPECT_THROW(ex::make_keywords({}), InvalidArgument);
  EXPECT_THROW(ex::make_keywords({"a", ""}), EmptyKeyword);
  EXPECT_THROW(ex::make_keywords({"a", "a"}), InvalidArgument);
}

namespace {

gateway::EndpointConfig endpoint_for(const mock::MockServer& server, int limit = 4) {
  gateway::EndpointConfig ep;
  ep.base_url = server.base_url();
  ep.model_name = "mock";
  ep.max_in_flight = limit;
  ep.retry_limit = 0;
  return ep;
}

const templates::ChatTemplate& llama3() { return templates::TemplateRegistry::builtin().get("llama3"); }

// Keyword "broken" fails with a 500; every other keyword returns a mix of
// quoted, unquoted and empty continuations.
mock::Script extraction_script() {
  mock::Script s;
  s.fault = [](const mock::RequestInfo& info) {
    return info.body && info.body->dump().find("broken") != std::string::npos ? 500 : 0;
  };
  s.completion = [](const std::string& prompt, int n) {
    std::vector<std::string> out;
    const auto kw_at = prompt.find("raised ");
    const std::string tag = kw_at == std::string::npos ? "?" : prompt.substr(kw_at + 7, 5);
    for (int i = 0; i < n; ++i) {
      if (i % 4 == 3) out.push_back("\" ");
      else if (i % 4 == 2) out.push_back("unquoted " + tag + " " + std::to_string(i));
      else out.push_back("query " + tag + " " + std::to_string(i) + "\" and more");
    }
    return out;
  };
  return s;
}

}  // namespace

TEST(ExtractQueries, CountsIndicesAndGracefulFailure) {
  mock::MockServer server(extraction_script());
  server.start();
  gateway::Gateway gw;
  auto params = gateway::GenerationParams::query_generation();
  params.n_samples = 8;
  const auto keywords = ex::make_keywords({"alpha", "broken", "gamma"});
  const auto r = ex::extract_queries(keywords, llama3(), gw, endpoint_for(server), params);

  EXPECT_EQ(r.raw, 24u);
  EXPECT_EQ(r.kept, 12u);
  EXPECT_EQ(r.dropped_empty, 4u);
  EXPECT_EQ(r.errored, 8u);
  EXPECT_EQ(r.raw, r.kept + r.dropped_empty + r.errored);
  EXPECT_EQ(r.failed_keywords, std::vector<std::string>{"broken"});
  ASSERT_EQ(r.queries.size(), 12u);
  for (std::size_t i = 0; i < r.queries.size(); ++i) {
    EXPECT_EQ(r.queries[i].ingestion_index, static_cast<std::int64_t>(i));
    EXPECT_FALSE(r.queries[i].query_text.empty());
  }
  EXPECT_EQ(r.queries[0].id, "q-000-00000");
  EXPECT_EQ(r.queries[0].subdomain.text, "alpha");
  EXPECT_TRUE(r.queries[0].quoted);
  EXPECT_FALSE(r.queries[2].quoted);
  EXPECT_EQ(r.queries[6].subdomain.text, "gamma");
  EXPECT_EQ(r.queries[6].id, "q-002-00000");
}

TEST(ExtractQueries, DeterministicAcrossParallelism) {
  mock::MockServer server(extraction_script());
  server.start();
  auto params = gateway::GenerationParams::query_generation();
  params.n_samples = 5;
  std::vector<std::string> texts;
  for (int i = 0; i < 12; ++i) texts.push_back("kw" + std::to_string(i));
  const auto keywords = ex::make_keywords(texts);
  gateway::Gateway a, b;
  const auto r1 = ex::extract_queries(keywords, llama3(), a, endpoint_for(server, 1), params);
  const auto r8 = ex::extract_queries(keywords, llama3(), b, endpoint_for(server, 8), params);
  EXPECT_EQ(r1.queries, r8.queries);
  EXPECT_EQ(r1.counts_json(), r8.counts_json());
}

TEST(ExtractQueries, CrossKeywordDuplicatesNotedNotMerged) {
  mock::Script s;
  s.completion = [](const std::string&, int n) { return std::vector<std::string>(n, "same thing\""); };
  mock::MockServer server(s);
  server.start();
  gateway::Gateway gw;
  auto params = gateway::GenerationParams::query_generation();
  params.n_samples = 2;
  const auto r = ex::extract_queries(ex::make_keywords({"a", "b"}), llama3(), gw, endpoint_for(server), params);
  EXPECT_EQ(r.queries.size(), 4u);
  EXPECT_EQ(r.cross_keyword_duplicates, 2u);
}

TEST(ExtractQueries, SendsForcedContinuationPrompt) {
  std::mutex m;
  std::vector<std::string> prompts;
  mock::Script s;
  s.completion = [&](const std::string& p, int n) {
    std::lock_guard lock(m);
    prompts.push_back(p);
    return std::vector<std::string>(n, "x\"");
  };
  mock::MockServer server(s);
  server.start();
  gateway::Gateway gw;
  auto params = gateway::GenerationParams::query_generation();
  params.n_samples = 1;
  ex::extract_queries(ex::make_keywords({"violence"}), llama3(), gw, endpoint_for(server), params);
  ASSERT_EQ(prompts.size(), 1u);
  EXPECT_EQ(prompts[0], templates::render_extraction_prompt(llama3(), "violence").rendered);
}

TEST(KeywordOutcome, JsonRoundTrip) {
  mock::MockServer server(extraction_script());
  server.start();
  gateway::Gateway gw;
  auto params = gateway::GenerationParams::query_generation();
  params.n_samples = 4;
  const auto o = ex::extract_keyword(gw, endpoint_for(server), llama3(), {"alpha", 0}, params);
  const auto back = ex::KeywordOutcome::from_json(o.to_json());
  EXPECT_EQ(back.records, o.records);
  EXPECT_EQ(back.kept, 3u);
  EXPECT_EQ(back.dropped_empty, 1u);
  const auto failed = ex::extract_keyword(gw, endpoint_for(server), llama3(), {"broken", 1}, params);
  EXPECT_TRUE(ex::KeywordOutcome::from_json(failed.to_json()).error.has_value());
}

TEST(GenerateResponses, OnePerQueryVerbatimAndQuarantine) {
  mock::Script s;
  s.completion = [](const std::string&, int n) { return std::vector<std::string>(n, "I can't help with that."); };
  s.fault = [](const mock::RequestInfo& info) {
    return info.body && info.body->dump().find("explode") != std::string::npos ? 500 : 0;
  };
  mock::MockServer server(s);
  server.start();
  gateway::Gateway gw;
  EXPECT_TRUE(ex::generate_responses({}, llama3(), gw, endpoint_for(server)).empty());

  QueryRecord a;
  a.id = "q-000-00000";
  a.subdomain = {"violence", 0};
  a.query_text = "first?";
  QueryRecord b = a;
  b.id = "q-000-00001";
  b.query_text = "explode?";
  const auto out = ex::generate_responses({a, b}, llama3(), gw, endpoint_for(server));
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].query_id, a.id);
  EXPECT_EQ(out[0].response_text, "I can't help with that.");
  EXPECT_EQ(out[0].safety_label, SafetyLabel::unaudited);
  EXPECT_FALSE(out[0].revised);
  EXPECT_FALSE(out[0].quarantined());
  EXPECT_EQ(out[1].query_id, b.id);
  EXPECT_TRUE(out[1].quarantined());
  EXPECT_EQ(out[1].safety_label, SafetyLabel::unknown);
}
