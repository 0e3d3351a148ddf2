// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "alignreplay/chat_template.hpp"
#include "alignreplay/divergence.hpp"
#include "alignreplay/errors.hpp"
#include "alignreplay/mixing.hpp"
#include "alignreplay/mock_server.hpp"
#include "alignreplay/records.hpp"
#include "alignreplay/safety_eval.hpp"
#include "alignreplay/similarity.hpp"
#include "alignreplay/store.hpp"
#include "e2e_fixture.hpp"
#include "filter_fixtures.hpp"
#include "pipeline_runs.hpp"
#include "test_support.hpp"

using namespace alignreplay;
namespace at = alignreplay::testing;
namespace dv = alignreplay::divergence;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

/// Collects failure messages; a criterion passes when none were recorded.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok) failures_.push_back(what);
  }
  void note(const std::string& detail) { notes_.push_back(detail); }
  const std::vector<std::string>& failures() const { return failures_; }
  const std::vector<std::string>& notes() const { return notes_; }

 private:
  std::vector<std::string> failures_;
  std::vector<std::string> notes_;
};

template <class T>
std::string str(const T& v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

// Plain-vector references, independent of the library.
double ref_kl(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) s += p[i] * std::log(p[i] / q[i]);
  }
  return s;
}

double ref_tv(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::fabs(p[i] - q[i]);
  return s / 2.0;
}

std::vector<double> plain(const dv::Distribution& d) { return {d.probs().begin(), d.probs().end()}; }

void theorem1_identity(Checks& c) {
  std::mt19937_64 rng(20241);
  const auto start = Clock::now();
  double worst = 0.0, worst_oracle = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t nx = 1 + rng() % 8, ny = 1 + rng() % 8;
    const auto a = dv::random_model(rng, nx, ny);
    const auto b = dv::random_model(rng, nx, ny);
    const auto d = dv::decompose_joint_kl(a, b);
    worst = std::max(worst, std::fabs(dv::joint_kl(a, b) - (d.query_shift + d.alignment_residual)));
    worst_oracle = std::max(worst_oracle, std::fabs(ref_kl(a.joint(), b.joint()) - d.total));
  }
  const double secs = seconds_since(start);
  c.expect(worst <= 1e-10, "max |joint_kl - (shift + residual)| = " + str(worst));
  c.expect(worst_oracle <= 1e-10, "max |reference joint KL - total| = " + str(worst_oracle));
  c.expect(secs < 2.0, "runtime " + str(secs) + " s");
  c.note("1000 instances, max gap " + str(worst) + ", " + str(secs) + " s");
}

void pinsker_suite(Checks& c) {
  std::mt19937_64 rng(77);
  std::size_t violations = 0, ref_violations = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 2 + rng() % 15;
    const auto p = dv::random_distribution(rng, n, 0.3);
    const auto q = dv::random_distribution(rng, n);
    if (dv::total_variation(p, q) > std::sqrt(dv::kl_divergence(p, q) / 2.0)) ++violations;
    if (ref_tv(plain(p), plain(q)) > std::sqrt(ref_kl(plain(p), plain(q)) / 2.0)) ++ref_violations;
  }
  c.expect(violations == 0, str(violations) + " violations");
  c.expect(ref_violations == 0, str(ref_violations) + " violations by the reference");
  const auto suite = dv::check_pinsker(1000, 5);
  c.expect(suite.trials == 1000 && suite.violations == 0, "library suite reported " + str(suite.violations));
  c.note("1000 pairs, 0 violations");
}

void lambda_mapping(Checks& c) {
  c.expect(1.0 / dv::lambda_from_ratio(0.1) == 9.0, "1/lambda(0.1) = " + str(1.0 / dv::lambda_from_ratio(0.1)));
  c.expect(dv::lambda_from_ratio(0.0) == 0.0, "lambda(0) = " + str(dv::lambda_from_ratio(0.0)));
  for (double r : {1.0, 1.5}) {
    bool rejected = false;
    try {
      (void)dv::lambda_from_ratio(r);
    } catch (const RatioOutOfRange&) {
      rejected = true;
    }
    c.expect(rejected, "r = " + str(r) + " accepted");
  }
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::vector<std::string> out;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

void filter_fixtures(Checks& c) {
  const auto dir = at::golden_dir() / "filters";
  for (const auto& f : at::all_filter_fixtures()) {
    std::vector<std::string> reports;
    for (int parallelism : {1, 8, 1, 8}) {
      const auto result = at::run_filter_fixture(f, parallelism);
      const auto report = store::canonical_json(result.report.to_json()) + "\n";
      reports.push_back(report);
      c.expect(report == at::slurp(dir / (f.name + ".report.json")),
               f.name + " report differs from golden at parallelism " + str(parallelism));
      std::vector<std::string> kept;
      for (const auto& q : result.kept) kept.push_back(q.id);
      std::sort(kept.begin(), kept.end());
      c.expect(kept == read_lines(dir / (f.name + ".kept.txt")),
               f.name + " kept set differs at parallelism " + str(parallelism));
    }
    c.expect(std::all_of(reports.begin(), reports.end(), [&](const auto& r) { return r == reports.front(); }),
             f.name + " reports differ across runs");
  }
  // The goldens themselves encode the required outcomes.
  const auto kept_ppl = read_lines(dir / "perplexity.kept.txt");
  c.expect(kept_ppl.size() == 18 && std::find(kept_ppl.begin(), kept_ppl.end(), "q01") == kept_ppl.end() &&
               std::find(kept_ppl.begin(), kept_ppl.end(), "q20") == kept_ppl.end(),
           "perplexity golden does not drop exactly {min, max}");
  c.expect(read_lines(dir / "dedup.kept.txt") == std::vector<std::string>{"d1", "d3"}, "dedup golden is not {1,3}");
  c.expect(read_lines(dir / "relevance.kept.txt") == std::vector<std::string>{"r_half"},
           "relevance golden is not {0.50}");
}

std::string dataset_bytes(const mixing::MixResult& r) {
  std::vector<nlohmann::json> lines;
  for (const auto& e : r.dataset) lines.push_back(e.to_json());
  return store::serialize_records(lines);
}

void mixer(Checks& c) {
  std::vector<mixing::SafetyExample> safety;
  for (int i = 0; i < 50; ++i) safety.push_back({"d" + str(i), "hq" + str(i), "refusal", Difficulty::difficult});
  for (int i = 0; i < 2000; ++i) safety.push_back({"e" + str(i), "sq" + str(i), "answer", Difficulty::easy});
  std::vector<mixing::TaskExample> task;
  for (int i = 0; i < 7000; ++i) task.push_back({"t" + str(i), "q" + str(i), "a" + str(i)});
  mixing::MixConfig cfg;
  cfg.total_n = 7168;
  cfg.ratio_r = 0.1;
  cfg.seed = 42;
  const auto a = mixing::mix(safety, task, cfg, {{"task.jsonl", "sha256:00"}});
  const auto b = mixing::mix(safety, task, cfg, {{"task.jsonl", "sha256:00"}});
  const auto& m = a.manifest;
  c.expect(m.n_safety == 717 && m.n_task == 6451,
           "counts " + str(m.n_safety) + "/" + str(m.n_task));
  c.expect(m.n_difficult == 50 && m.n_easy == 667, "strata " + str(m.n_difficult) + "/" + str(m.n_easy));
  c.expect(a.dataset.size() == 7168, "dataset size " + str(a.dataset.size()));
  c.expect(dataset_bytes(a) == dataset_bytes(b), "dataset bytes differ between runs");
  c.expect(store::canonical_json(a.manifest.to_json()) == store::canonical_json(b.manifest.to_json()),
           "manifest bytes differ between runs");
  c.expect(mixing::verify_manifest(a.dataset, a.manifest).ok, "verify_manifest failed");
}

similarity::Embeddings cloud(std::size_t n, std::size_t dim, float center, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d(0.0f, 1.0f);
  similarity::Embeddings out(n, std::vector<float>(dim));
  for (auto& v : out)
    for (auto& x : v) x = center + d(rng);
  return out;
}

void mauve(Checks& c) {
  similarity::QuantizationConfig cfg;
  cfg.scaling_c = 2.0;
  cfg.lambda_grid = 999;

  const auto same = cloud(1000, 16, 0.0f, 3);
  const double identical = similarity::mauve_score(same, same, cfg).score;
  c.expect(identical >= 0.999, "identical sets scored " + str(identical));

  const double disjoint =
      similarity::mauve_from_histograms(dv::Distribution({1.0, 0.0}), dv::Distribution({0.0, 1.0}), cfg).score;
  c.expect(std::fabs(disjoint - 1.0 / 6.0) <= 0.01, "disjoint histograms scored " + str(disjoint));

  auto small = cfg;
  small.n_clusters = 20;
  const auto p = cloud(600, 8, 0.0f, 10), q = cloud(400, 8, 0.7f, 11);
  const auto hist = similarity::quantize(p, q, small);
  const double pq = similarity::mauve_from_histograms(hist.p_hist, hist.q_hist, small).score;
  const double qp = similarity::mauve_from_histograms(hist.q_hist, hist.p_hist, small).score;
  c.expect(std::fabs(pq - qp) <= 1e-6, "symmetry gap " + str(std::fabs(pq - qp)));

  const auto big_p = cloud(5000, 384, 0.0f, 20), big_q = cloud(5000, 384, 0.2f, 21);
  const auto start = Clock::now();
  const auto full = similarity::mauve_score(big_p, big_q, cfg);
  const double secs = seconds_since(start);
  c.expect(full.n_clusters == 500, "used " + str(full.n_clusters) + " clusters");
  c.expect(secs < 5.0, "10k points took " + str(secs) + " s");
  c.note("identical " + str(identical) + ", disjoint " + str(disjoint) + ", 10k x 384 in " + str(secs) + " s");
}

void end_to_end(Checks& c) {
  at::TempDir dir("acceptance-e2e");
  std::map<std::string, std::string> straight;
  {
    mock::MockServer server(at::e2e_script());
    server.start();
    const auto cfg = at::write_e2e_workspace(dir / "ws", server.base_url());
    const auto work = dir / "straight";
    const auto r = at::run_pipeline(cfg, work);
    c.expect(r.exit_code == 0, "pipeline exited " + str(r.exit_code) + ": " + r.err);
    if (r.exit_code != 0) return;

    const std::vector<std::pair<std::string, std::string_view>> files = {{"queries.jsonl", kQuerySchema},
                                                                         {"filtered.jsonl", kQuerySchema},
                                                                         {"responses.jsonl", kResponseSchema},
                                                                         {"sft.jsonl", kSftSchema}};
    for (const auto& [name, schema] : files) {
      try {
        const auto read = store::read_records(work / name, schema);
        c.expect(read.malformed.empty() && !read.records.empty(), name + " has malformed or no records");
      } catch (const std::exception& e) {
        c.expect(false, name + ": " + e.what());
      }
    }
    const auto chain = at::chain_manifests(work);
    c.expect(store::verify_chain(chain).empty(), "manifest chain does not verify");
    for (const auto& m : chain) {
      c.expect(store::verify_manifest_files(m, work).empty(), m.stage + " manifest digests do not verify");
    }
    const auto run = eval::EvalRun::from_json(nlohmann::json::parse(at::slurp(work / "eval.json")));
    const double planted = 100.0 * double(at::kE2ePlanted) / double(at::kE2eEvalQueries);
    c.expect(run.harmful_score == planted, "harmful score " + str(run.harmful_score) + " vs " + str(planted));
    std::ostringstream hs;
    hs << std::fixed << std::setprecision(2) << run.harmful_score;
    c.note("harmful score " + hs.str() + "%");
    straight = at::final_outputs(work);
  }

  // Interrupted twice: a keyword fails during extraction, then the run stops
  // after filtering. Two resumes must reproduce the uninterrupted outputs.
  const auto work = dir / "resumed";
  {
    mock::MockServer flaky(at::e2e_script("fraud"));
    flaky.start();
    const auto cfg = at::write_e2e_workspace(dir / "ws-flaky", flaky.base_url());
    const auto r = at::run_pipeline(cfg, work, {"--stop-after", "filter"});
    c.expect(r.exit_code == 0, "interrupted run exited " + str(r.exit_code));
  }
  mock::MockServer healthy(at::e2e_script());
  healthy.start();
  const auto cfg = at::write_e2e_workspace(dir / "ws-healthy", healthy.base_url());
  c.expect(at::run_pipeline(cfg, work, {"--stop-after", "filter"}).exit_code == 0, "first resume failed");
  c.expect(at::run_pipeline(cfg, work).exit_code == 0, "second resume failed");
  const auto resumed = at::final_outputs(work);
  c.expect(resumed.size() == at::e2e_final_outputs().size(), "resumed run is missing outputs");
  c.expect(resumed == straight, "resumed outputs differ from the uninterrupted run");
}

void template_goldens(Checks& c) {
  const auto& reg = templates::TemplateRegistry::builtin();
  const auto families = reg.families();
  c.expect(families.size() == 4, str(families.size()) + " built-in families");
  for (const auto& family : families) {
    const auto& t = reg.get(family);
    const auto ext = templates::render_extraction_prompt(t, "violence").rendered;
    const auto rev = templates::render_revision_prompt(t, "How do I pick a lock?");
    const auto golden = at::golden_dir() / "templates";
    c.expect(ext == at::slurp(golden / (family + ".extraction.txt")), family + " extraction prompt differs");
    c.expect(rev == at::slurp(golden / (family + ".revision.txt")), family + " revision prompt differs");
    c.expect(ext.ends_with(templates::kExtractionSeed), family + " extraction prompt does not end at the seed");
  }
}

struct Criterion {
  int id;
  std::string name;
  std::function<void(Checks&)> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "joint KL decomposition identity", theorem1_identity},
      {2, "Pinsker inequality suite", pinsker_suite},
      {3, "ratio to lambda mapping", lambda_mapping},
      {4, "filter fixtures match goldens", filter_fixtures},
      {5, "mixer counts and reproducibility", mixer},
      {6, "MAUVE engine", mauve},
      {7, "end-to-end pipeline against mock server", end_to_end},
      {8, "template goldens", template_goldens},
  };
  int failed = 0;
  for (const auto& cr : criteria) {
    Checks checks;
    try {
      cr.run(checks);
    } catch (const std::exception& e) {
      checks.expect(false, std::string("exception: ") + e.what());
    }
    const bool ok = checks.failures().empty();
    failed += ok ? 0 : 1;
    std::cout << (ok ? "PASS" : "FAIL") << " criterion " << cr.id << ": " << cr.name;
    for (const auto& n : checks.notes()) std::cout << " [" << n << "]";
    std::cout << "\n";
    for (const auto& f : checks.failures()) std::cout << "    " << f << "\n";
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed\n";
  return failed == 0 ? 0 : 1;
}
