#pragma once

// MAUVE-style dataset comparison: quantize both embedding sets with a shared
// k-means, trace the divergence frontier of the two cluster histograms, and
// report the area under it.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "alignreplay/divergence.hpp"

namespace alignreplay::similarity {

using Embeddings = std::vector<std::vector<float>>;

struct QuantizationConfig {
  std::optional<std::size_t> n_clusters;  // default min(500, (n_p + n_q) / 10)
  int kmeans_iters = 50;
  std::uint64_t kmeans_seed = 0;
  std::size_t sample_cap = 10'000;
  double scaling_c = 2.0;
  std::size_t lambda_grid = 999;

  void validate() const;
  std::size_t resolve_clusters(std::size_t n_p, std::size_t n_q) const;

  static QuantizationConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct Quantization {
  divergence::Distribution p_hist;
  divergence::Distribution q_hist;
  std::size_t n_clusters = 0;
  std::size_t empty_clusters = 0;
  /// More than half of the clusters hold no point from either set.
  bool degenerate = false;
  int kmeans_iterations = 0;
};

/// Throws EmptyInput when either set is empty, DimensionMismatch on ragged
/// vectors.
Quantization quantize(const Embeddings& p, const Embeddings& q, const QuantizationConfig& cfg);

struct FrontierPoint {
  double lambda = 0.0;
  double x = 0.0;  // exp(-c * KL(q || R))
  double y = 0.0;  // exp(-c * KL(p || R))
};

struct FrontierCurve {
  std::vector<FrontierPoint> points;
};

/// R = lambda * p + (1 - lambda) * q over the interior grid
/// lambda_i = i / (grid + 1), i = 1..grid.
FrontierCurve divergence_frontier(const divergence::Distribution& p, const divergence::Distribution& q,
                                  double scaling_c, std::size_t grid);

/// Trapezoidal area under the curve with the (0, 1) and (1, 0) anchors added.
double frontier_area(const FrontierCurve& curve);

struct MauveResult {
  double score = 0.0;
  FrontierCurve curve;
  QuantizationConfig config;
  std::size_t n_clusters = 0;
  bool degenerate = false;

  nlohmann::json to_json(bool include_curve = false) const;
  std::string frontier_csv() const;
};

MauveResult mauve_from_histograms(const divergence::Distribution& p_hist,
                                  const divergence::Distribution& q_hist,
                                  const QuantizationConfig& cfg);

/// Caps each set at sample_cap (seeded), quantizes and scores.
MauveResult mauve_score(const Embeddings& p, const Embeddings& q, const QuantizationConfig& cfg);

/// Seeded subsample without replacement; original order is preserved.
Embeddings subsample(const Embeddings& items, std::size_t cap, std::uint64_t seed);

}  // namespace alignreplay::similarity
