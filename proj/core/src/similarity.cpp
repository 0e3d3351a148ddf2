#include "alignreplay/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "alignreplay/errors.hpp"
#include "alignreplay/kmeans.hpp"
#include "alignreplay/random.hpp"

namespace alignreplay::similarity {

void QuantizationConfig::validate() const {
  if (n_clusters && *n_clusters == 0) throw InvalidArgument("n_clusters must be positive");
  if (kmeans_iters <= 0) throw InvalidArgument("kmeans_iters must be positive");
  if (sample_cap == 0) throw InvalidArgument("sample_cap must be positive");
  if (!(scaling_c > 0.0)) throw InvalidArgument("scaling factor must be positive");
  if (lambda_grid == 0) throw InvalidArgument("lambda grid needs at least one point");
}

std::size_t QuantizationConfig::resolve_clusters(std::size_t n_p, std::size_t n_q) const {
  if (n_clusters) return *n_clusters;
  return std::max<std::size_t>(1, std::min<std::size_t>(500, (n_p + n_q) / 10));
}

QuantizationConfig QuantizationConfig::from_json(const nlohmann::json& j) {
  QuantizationConfig c;
  if (j.contains("n_clusters") && !j.at("n_clusters").is_null()) {
    c.n_clusters = j.at("n_clusters").get<std::size_t>();
  }
  c.kmeans_iters = j.value("kmeans_iters", c.kmeans_iters);
  c.kmeans_seed = j.value("kmeans_seed", c.kmeans_seed);
  c.sample_cap = j.value("sample_cap", c.sample_cap);
  c.scaling_c = j.value("scaling_c", c.scaling_c);
  c.lambda_grid = j.value("lambda_grid", c.lambda_grid);
  c.validate();
  return c;
}

nlohmann::json QuantizationConfig::to_json() const {
  return {{"n_clusters", n_clusters ? nlohmann::json(*n_clusters) : nlohmann::json()},
          {"kmeans_iters", kmeans_iters},
          {"kmeans_seed", kmeans_seed},
          {"sample_cap", sample_cap},
          {"scaling_c", scaling_c},
          {"lambda_grid", lambda_grid}};
}

Quantization quantize(const Embeddings& p, const Embeddings& q, const QuantizationConfig& cfg) {
  cfg.validate();
  if (p.empty() || q.empty()) throw EmptyInput("both embedding sets must be non-empty");
  const std::size_t dim = p.front().size();
  if (dim == 0) throw InvalidArgument("embeddings must have at least one dimension");

  std::vector<float> flat;
  flat.reserve((p.size() + q.size()) * dim);
  for (const auto* set : {&p, &q}) {
    for (const auto& v : *set) {
      if (v.size() != dim) {
        throw DimensionMismatch("embedding of size " + std::to_string(v.size()) + ", expected " +
                                std::to_string(dim));
      }
      flat.insert(flat.end(), v.begin(), v.end());
    }
  }
  const std::size_t k = cfg.resolve_clusters(p.size(), q.size());
  if (k > p.size() + q.size()) {
    throw InvalidArgument("n_clusters exceeds the number of embedded points");
  }
  const auto km = kmeans(flat, dim, k, cfg.kmeans_iters, cfg.kmeans_seed);

  std::vector<double> p_counts(k, 0.0), q_counts(k, 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) p_counts[km.assignments[i]] += 1.0;
  for (std::size_t i = 0; i < q.size(); ++i) q_counts[km.assignments[p.size() + i]] += 1.0;

  std::size_t empty = 0;
  for (std::size_t c = 0; c < k; ++c) {
    if (p_counts[c] == 0.0 && q_counts[c] == 0.0) ++empty;
  }
  for (auto& v : p_counts) v /= static_cast<double>(p.size());
  for (auto& v : q_counts) v /= static_cast<double>(q.size());

  return Quantization{divergence::Distribution(std::move(p_counts)),
                      divergence::Distribution(std::move(q_counts)), k, empty, 2 * empty > k,
                      km.iterations};
}

FrontierCurve divergence_frontier(const divergence::Distribution& p, const divergence::Distribution& q,
                                  double scaling_c, std::size_t grid) {
  if (p.size() != q.size()) throw AlphabetMismatch(p.size(), q.size());
  if (!(scaling_c > 0.0)) throw InvalidArgument("scaling factor must be positive");
  if (grid == 0) throw InvalidArgument("lambda grid needs at least one point");

  FrontierCurve curve;
  curve.points.reserve(grid);
  std::vector<double> mixture(p.size());
  for (std::size_t i = 1; i <= grid; ++i) {
    const double lambda = static_cast<double>(i) / static_cast<double>(grid + 1);
    for (std::size_t j = 0; j < p.size(); ++j) mixture[j] = lambda * p[j] + (1.0 - lambda) * q[j];
    // The mixture dominates both p and q for interior lambda, so both KLs are finite.
    const divergence::Distribution r(mixture);
    curve.points.push_back({lambda, std::exp(-scaling_c * divergence::kl_divergence(q, r)),
                            std::exp(-scaling_c * divergence::kl_divergence(p, r))});
  }
  return curve;
}

double frontier_area(const FrontierCurve& curve) {
  std::vector<std::pair<double, double>> pts;
  pts.reserve(curve.points.size() + 2);
  pts.emplace_back(0.0, 1.0);
  for (const auto& pt : curve.points) pts.emplace_back(pt.x, pt.y);
  pts.emplace_back(1.0, 0.0);
  std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first < b.first : a.second > b.second;
  });
  double area = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    area += (pts[i].first - pts[i - 1].first) * (pts[i].second + pts[i - 1].second) / 2.0;
  }
  return std::clamp(area, 0.0, 1.0);
}

nlohmann::json MauveResult::to_json(bool include_curve) const {
  nlohmann::json j = {{"score", score},
                      {"n_clusters", n_clusters},
                      {"degenerate_clustering", degenerate},
                      {"config", config.to_json()}};
  if (include_curve) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : curve.points) pts.push_back({p.lambda, p.x, p.y});
    j["frontier"] = pts;
  }
  return j;
}

std::string MauveResult::frontier_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "lambda,x,y\n";
  for (const auto& p : curve.points) out << p.lambda << ',' << p.x << ',' << p.y << '\n';
  return out.str();
}

MauveResult mauve_from_histograms(const divergence::Distribution& p_hist,
                                  const divergence::Distribution& q_hist,
                                  const QuantizationConfig& cfg) {
  cfg.validate();
  MauveResult result;
  result.config = cfg;
  result.n_clusters = p_hist.size();
  result.curve = divergence_frontier(p_hist, q_hist, cfg.scaling_c, cfg.lambda_grid);
  result.score = frontier_area(result.curve);
  return result;
}

MauveResult mauve_score(const Embeddings& p, const Embeddings& q, const QuantizationConfig& cfg) {
  cfg.validate();
  // Distinct streams so p and q of equal size are not subsampled identically by accident.
  const auto ps = subsample(p, cfg.sample_cap, cfg.kmeans_seed);
  const auto qs = subsample(q, cfg.sample_cap, cfg.kmeans_seed + 1);
  const auto quant = quantize(ps, qs, cfg);
  auto result = mauve_from_histograms(quant.p_hist, quant.q_hist, cfg);
  result.degenerate = quant.degenerate;
  return result;
}

Embeddings subsample(const Embeddings& items, std::size_t cap, std::uint64_t seed) {
  if (items.size() <= cap) return items;
  rng::Engine engine(seed);
  auto picks = rng::sample_without_replacement(engine, items.size(), cap);
  std::sort(picks.begin(), picks.end());
  Embeddings out;
  out.reserve(cap);
  for (auto i : picks) out.push_back(items[i]);
  return out;
}

}  // namespace alignreplay::similarity
