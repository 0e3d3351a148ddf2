#include "alignreplay/divergence.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "alignreplay/errors.hpp"
#include "alignreplay/random.hpp"

namespace alignreplay::divergence {

Distribution::Distribution(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.empty()) throw InvalidDistribution("distribution must have at least one outcome");
  double sum = 0.0;
  for (std::size_t i = 0; i < probs_.size(); ++i) {
    const double p = probs_[i];
    if (!std::isfinite(p) || p < 0.0) {
      throw InvalidDistribution("entry " + std::to_string(i) + " is negative or not finite");
    }
    sum += p;
  }
  const double drift = std::abs(sum - 1.0);
  if (drift > kRenormalizeTolerance) {
    throw InvalidDistribution("entries sum to " + std::to_string(sum) + ", not 1");
  }
  if (drift > kSumTolerance) {
    for (double& p : probs_) p /= sum;
  }
}

Distribution Distribution::uniform(std::size_t n) {
  if (n == 0) throw InvalidDistribution("uniform distribution needs n > 0");
  return Distribution(std::vector<double>(n, 1.0 / static_cast<double>(n)));
}

ConditionalTable::ConditionalTable(std::vector<Distribution> rows) : rows_(std::move(rows)) {
  if (rows_.empty()) throw InvalidDistribution("conditional table needs at least one row");
  const std::size_t width = rows_.front().size();
  for (const auto& row : rows_) {
    if (row.size() != width) throw AlphabetMismatch(width, row.size());
  }
}

DiscreteConditionalModel::DiscreteConditionalModel(Distribution marginal,
                                                   ConditionalTable conditional)
    : marginal_(std::move(marginal)), conditional_(std::move(conditional)) {
  if (marginal_.size() != conditional_.input_size()) {
    throw AlphabetMismatch(marginal_.size(), conditional_.input_size());
  }
}

std::vector<double> DiscreteConditionalModel::joint() const {
  const std::size_t ny = output_size();
  std::vector<double> out(input_size() * ny);
  for (std::size_t x = 0; x < input_size(); ++x) {
    const auto& row = conditional_.row(x);
    for (std::size_t y = 0; y < ny; ++y) out[x * ny + y] = marginal_[x] * row[y];
  }
  return out;
}

namespace {

double kl_raw(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw AlphabetMismatch(p.size(), q.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) throw AbsoluteContinuityViolation(i);
    sum += p[i] * std::log(p[i] / q[i]);
  }
  // Rounding can leave a tiny negative value for near-identical inputs.
  return std::max(sum, 0.0);
}

double tv_raw(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw AlphabetMismatch(p.size(), q.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) sum += std::abs(p[i] - q[i]);
  return std::min(0.5 * sum, 1.0);
}

void require_same_shape(const DiscreteConditionalModel& a, const DiscreteConditionalModel& b) {
  if (a.input_size() != b.input_size()) throw AlphabetMismatch(a.input_size(), b.input_size());
  if (a.output_size() != b.output_size()) throw AlphabetMismatch(a.output_size(), b.output_size());
}

}  // namespace

double kl_divergence(const Distribution& p, const Distribution& q) {
  return kl_raw(p.probs(), q.probs());
}

double total_variation(const Distribution& p, const Distribution& q) {
  return tv_raw(p.probs(), q.probs());
}

double joint_kl(const DiscreteConditionalModel& a, const DiscreteConditionalModel& b) {
  require_same_shape(a, b);
  const auto ja = a.joint();
  const auto jb = b.joint();
  return kl_raw(ja, jb);
}

Decomposition decompose_joint_kl(const DiscreteConditionalModel& original,
                                 const DiscreteConditionalModel& proxy) {
  require_same_shape(original, proxy);
  Decomposition d;
  d.query_shift = kl_divergence(original.marginal(), proxy.marginal());
  for (std::size_t x = 0; x < original.input_size(); ++x) {
    const double weight = original.marginal()[x];
    if (weight == 0.0) continue;
    d.alignment_residual +=
        weight * kl_divergence(original.conditional().row(x), proxy.conditional().row(x));
  }
  d.total = d.query_shift + d.alignment_residual;
  return d;
}

double lambda_from_ratio(double r) {
  if (!(r >= 0.0 && r < 1.0)) throw RatioOutOfRange(r);
  return r / (1.0 - r);
}

GapComponentReport gap_components(const DiscreteConditionalModel& original,
                                  const DiscreteConditionalModel& proxy, double r) {
  if (!(r > 0.0 && r < 1.0)) throw RatioOutOfRange(r);
  require_same_shape(original, proxy);

  GapComponentReport report;
  report.inv_lambda = 1.0 / lambda_from_ratio(r);
  report.tv_query = total_variation(proxy.marginal(), original.marginal());
  for (std::size_t x = 0; x < original.input_size(); ++x) {
    const double weight = original.marginal()[x];
    if (weight == 0.0) continue;
    const auto& mu = original.conditional().row(x);
    const auto& policy = proxy.conditional().row(x);
    report.expected_tv += weight * total_variation(mu, policy);
    report.expected_kl += weight * kl_divergence(mu, policy);
  }
  report.pinsker_query_bound =
      std::sqrt(kl_divergence(original.marginal(), proxy.marginal()) / 2.0);
  report.pinsker_joint_bound = std::sqrt(joint_kl(original, proxy) / 2.0);
  report.tv_joint = tv_raw(original.joint(), proxy.joint());

  constexpr double kSlack = 1e-12;
  if (report.tv_query > report.pinsker_query_bound + kSlack) {
    throw Error("Pinsker inequality violated on the query marginals");
  }
  if (report.tv_joint > report.pinsker_joint_bound + kSlack) {
    throw Error("Pinsker inequality violated on the joints");
  }
  return report;
}

Distribution random_distribution(std::mt19937_64& rng, std::size_t n, double zero_fraction) {
  std::vector<double> w(n);
  double sum = 0.0;
  for (auto& v : w) {
    v = -std::log1p(-rng::uniform01(rng));  // Exp(1) => flat Dirichlet after normalizing
    if (v == 0.0) v = 1e-300;
    sum += v;
  }
  if (zero_fraction > 0.0 && n > 1) {
    const auto keep = static_cast<std::size_t>(rng::uniform_index(rng, n));
    for (std::size_t i = 0; i < n; ++i) {
      if (i != keep && rng::uniform01(rng) < zero_fraction) {
        sum -= w[i];
        w[i] = 0.0;
      }
    }
  }
  for (auto& v : w) v /= sum;
  // Division leaves the sum within a few ulps of 1, which the constructor absorbs.
  return Distribution(std::move(w));
}

DiscreteConditionalModel random_model(std::mt19937_64& rng, std::size_t inputs,
                                      std::size_t outputs, double zero_fraction) {
  auto marginal = random_distribution(rng, inputs, zero_fraction);
  std::vector<Distribution> rows;
  rows.reserve(inputs);
  for (std::size_t x = 0; x < inputs; ++x) {
    rows.push_back(random_distribution(rng, outputs, zero_fraction));
  }
  return DiscreteConditionalModel(std::move(marginal), ConditionalTable(std::move(rows)));
}

IdentityCheck check_decomposition_identity(std::size_t trials, std::uint64_t seed,
                                           std::size_t max_inputs, std::size_t max_outputs) {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 engine(seed);
  IdentityCheck check;
  check.trials = trials;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t nx = 1 + rng::uniform_index(engine, max_inputs);
    const std::size_t ny = 1 + rng::uniform_index(engine, max_outputs);
    // Original may carry zeros; the proxy stays strictly positive.
    const auto original = random_model(engine, nx, ny, 0.25);
    const auto proxy = random_model(engine, nx, ny);
    const double brute = joint_kl(original, proxy);
    const auto d = decompose_joint_kl(original, proxy);
    check.max_residual = std::max(check.max_residual, std::abs(brute - d.total));
  }
  check.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return check;
}

PinskerCheck check_pinsker(std::size_t trials, std::uint64_t seed, std::size_t max_alphabet) {
  std::mt19937_64 engine(seed);
  PinskerCheck check;
  check.trials = trials;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t n = 2 + rng::uniform_index(engine, max_alphabet - 1);
    const auto p = random_distribution(engine, n, 0.2);
    const auto q = random_distribution(engine, n);
    const double tv = total_variation(p, q);
    const double kl = kl_divergence(p, q);
    const double bound = std::sqrt(kl / 2.0);
    if (tv > bound + 1e-12) ++check.violations;
    if (kl > 0.0) check.max_ratio = std::max(check.max_ratio, tv / bound);
  }
  return check;
}

DiscreteConditionalModel model_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("marginal") || !j.contains("conditional")) {
    throw InvalidArgument("model JSON needs \"marginal\" and \"conditional\"");
  }
  Distribution marginal(j.at("marginal").get<std::vector<double>>());
  std::vector<Distribution> rows;
  for (const auto& row : j.at("conditional")) rows.emplace_back(row.get<std::vector<double>>());
  return DiscreteConditionalModel(std::move(marginal), ConditionalTable(std::move(rows)));
}

nlohmann::json model_to_json(const DiscreteConditionalModel& model) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : model.conditional().rows()) {
    rows.push_back(std::vector<double>(row.probs().begin(), row.probs().end()));
  }
  const auto m = model.marginal().probs();
  return {{"marginal", std::vector<double>(m.begin(), m.end())}, {"conditional", rows}};
}

nlohmann::json report_to_json(const GapComponentReport& r) {
  return {{"inv_lambda", r.inv_lambda},
          {"tv_query", r.tv_query},
          {"expected_tv", r.expected_tv},
          {"expected_kl", r.expected_kl},
          {"pinsker_query_bound", r.pinsker_query_bound},
          {"pinsker_joint_bound", r.pinsker_joint_bound},
          {"tv_joint", r.tv_joint}};
}

}  // namespace alignreplay::divergence
