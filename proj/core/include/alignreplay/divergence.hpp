#pragma once

// Exact divergence machinery over finite alphabets: KL, total variation, the
// joint-KL decomposition into query shift plus alignment residual, and the
// safety-gap component report with its Pinsker cross-checks. All logs are
// natural (nats).

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

namespace alignreplay::divergence {

/// Probability vector over a finite alphabet.
///
/// Construction validates non-negativity and normalization. A vector whose sum
/// is off by at most 1e-9 is renormalized; anything further off is rejected.
class Distribution {
 public:
  static constexpr double kSumTolerance = 1e-12;
  static constexpr double kRenormalizeTolerance = 1e-9;

  explicit Distribution(std::vector<double> probs);

  static Distribution uniform(std::size_t n);

  std::span<const double> probs() const noexcept { return probs_; }
  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }

  bool operator==(const Distribution&) const = default;

 private:
  std::vector<double> probs_;
};

/// One output distribution per input symbol; all rows share an output alphabet.
class ConditionalTable {
 public:
  explicit ConditionalTable(std::vector<Distribution> rows);

  std::size_t input_size() const noexcept { return rows_.size(); }
  std::size_t output_size() const noexcept { return rows_.empty() ? 0 : rows_.front().size(); }
  const Distribution& row(std::size_t x) const { return rows_.at(x); }
  const std::vector<Distribution>& rows() const noexcept { return rows_; }

 private:
  std::vector<Distribution> rows_;
};

/// Joint model C(x, y) = marginal(x) * conditional(y | x).
class DiscreteConditionalModel {
 public:
  DiscreteConditionalModel(Distribution marginal, ConditionalTable conditional);

  const Distribution& marginal() const noexcept { return marginal_; }
  const ConditionalTable& conditional() const noexcept { return conditional_; }
  std::size_t input_size() const noexcept { return marginal_.size(); }
  std::size_t output_size() const noexcept { return conditional_.output_size(); }

  /// Row-major flattening of the joint, index x * output_size() + y.
  std::vector<double> joint() const;

 private:
  Distribution marginal_;
  ConditionalTable conditional_;
};

struct Decomposition {
  double total = 0.0;
  double query_shift = 0.0;
  double alignment_residual = 0.0;
};

/// Raw components of the post-fine-tuning safety gap bound. The asymptotic
/// constants are not modeled; each field is reported as computed.
struct GapComponentReport {
  double inv_lambda = 0.0;
  double tv_query = 0.0;
  double expected_tv = 0.0;
  double expected_kl = 0.0;
  double pinsker_query_bound = 0.0;
  double pinsker_joint_bound = 0.0;
  double tv_joint = 0.0;
};

/// KL(p || q) in nats. 0 * ln(0 / q) is taken as 0; p > 0 with q = 0 throws
/// AbsoluteContinuityViolation.
double kl_divergence(const Distribution& p, const Distribution& q);

double total_variation(const Distribution& p, const Distribution& q);

/// KL between the flattened joints of two models.
double joint_kl(const DiscreteConditionalModel& a, const DiscreteConditionalModel& b);

/// Splits KL(C_original || C_proxy) into KL of the marginals plus the
/// expected conditional KL under the original marginal.
Decomposition decompose_joint_kl(const DiscreteConditionalModel& original,
                                 const DiscreteConditionalModel& proxy);

/// r / (1 - r). Throws RatioOutOfRange unless 0 <= r < 1.
double lambda_from_ratio(double r);

/// Requires r in (0, 1). Throws Error if either Pinsker inequality fails,
/// which would indicate a numerical defect rather than bad input.
GapComponentReport gap_components(const DiscreteConditionalModel& original,
                                  const DiscreteConditionalModel& proxy, double r);

// Random instances for the self-check suites.

/// Strictly positive distribution drawn from a flat Dirichlet. When
/// `zero_fraction` > 0 that share of entries (never all) is zeroed first.
Distribution random_distribution(std::mt19937_64& rng, std::size_t n, double zero_fraction = 0.0);

DiscreteConditionalModel random_model(std::mt19937_64& rng, std::size_t inputs, std::size_t outputs,
                                      double zero_fraction = 0.0);

struct IdentityCheck {
  std::size_t trials = 0;
  double max_residual = 0.0;
  double seconds = 0.0;
};

/// Draws `trials` random (original, proxy) pairs with alphabets up to
/// max_inputs x max_outputs and records the worst |joint_kl - decomposition|.
IdentityCheck check_decomposition_identity(std::size_t trials, std::uint64_t seed,
                                           std::size_t max_inputs = 8, std::size_t max_outputs = 8);

struct PinskerCheck {
  std::size_t trials = 0;
  std::size_t violations = 0;
  double max_ratio = 0.0;  // max TV / sqrt(KL / 2) over pairs with KL > 0
};

PinskerCheck check_pinsker(std::size_t trials, std::uint64_t seed, std::size_t max_alphabet = 16);

// {"marginal": [...], "conditional": [[...], ...]}
DiscreteConditionalModel model_from_json(const nlohmann::json& j);
nlohmann::json model_to_json(const DiscreteConditionalModel& model);
nlohmann::json report_to_json(const GapComponentReport& report);

}  // namespace alignreplay::divergence
