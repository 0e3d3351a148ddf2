#include "alignreplay/kmeans.hpp"

#include <Eigen/Dense>

#include <limits>

#include "alignreplay/errors.hpp"
#include "alignreplay/random.hpp"

namespace alignreplay::similarity {

namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;

// k-means++: each new center is drawn with probability proportional to the
// squared distance to the nearest center chosen so far.
RowMatrix seed_centers(const ConstMap& x, std::size_t k, rng::Engine& engine) {
  const auto n = static_cast<Eigen::Index>(x.rows());
  RowMatrix centers(static_cast<Eigen::Index>(k), x.cols());
  const Eigen::VectorXf norms = x.rowwise().squaredNorm();

  auto first = static_cast<Eigen::Index>(rng::uniform_index(engine, static_cast<std::uint64_t>(n)));
  centers.row(0) = x.row(first);
  Eigen::VectorXd nearest(n);
  {
    const Eigen::VectorXf dots = x * centers.row(0).transpose();
    const float cn = centers.row(0).squaredNorm();
    for (Eigen::Index i = 0; i < n; ++i) {
      nearest[i] = std::max(0.0, static_cast<double>(norms[i] - 2.0f * dots[i] + cn));
    }
  }
  for (std::size_t c = 1; c < k; ++c) {
    const double total = nearest.sum();
    Eigen::Index pick = n - 1;
    if (total > 0.0) {
      const double target = rng::uniform01(engine) * total;
      double acc = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += nearest[i];
        if (acc > target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Eigen::Index>(rng::uniform_index(engine, static_cast<std::uint64_t>(n)));
    }
    const auto row = static_cast<Eigen::Index>(c);
    centers.row(row) = x.row(pick);
    const Eigen::VectorXf dots = x * centers.row(row).transpose();
    const float cn = centers.row(row).squaredNorm();
    for (Eigen::Index i = 0; i < n; ++i) {
      const double d = std::max(0.0, static_cast<double>(norms[i] - 2.0f * dots[i] + cn));
      if (d < nearest[i]) nearest[i] = d;
    }
  }
  return centers;
}

}  // namespace

KMeansResult kmeans(std::span<const float> points, std::size_t dim, std::size_t k, int max_iters,
                    std::uint64_t seed) {
  if (dim == 0 || points.empty() || points.size() % dim != 0) {
    throw InvalidArgument("points must be a non-empty n x dim matrix");
  }
  const std::size_t n = points.size() / dim;
  if (k == 0 || k > n) throw InvalidArgument("cluster count must lie in [1, n]");
  if (max_iters <= 0) throw InvalidArgument("max_iters must be positive");

  const ConstMap x(points.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  rng::Engine engine(seed);
  RowMatrix centers = seed_centers(x, k, engine);
  const Eigen::VectorXf norms = x.rowwise().squaredNorm();

  KMeansResult result;
  result.k = k;
  result.dim = dim;
  result.assignments.assign(n, std::numeric_limits<std::uint32_t>::max());

  RowMatrix dots;
  Eigen::MatrixXd sums(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(dim));
  std::vector<std::size_t> counts(k);
  for (int iter = 0; iter < max_iters; ++iter) {
    dots.noalias() = x * centers.transpose();
    const Eigen::VectorXf center_norms = centers.rowwise().squaredNorm();
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      std::uint32_t best = 0;
      float best_d = std::numeric_limits<float>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const auto col = static_cast<Eigen::Index>(c);
        const float d = norms[row] - 2.0f * dots(row, col) + center_norms[col];
        if (d < best_d) {
          best_d = d;
          best = static_cast<std::uint32_t>(c);
        }
      }
      if (result.assignments[i] != best) {
        result.assignments[i] = best;
        changed = true;
      }
    }
    result.iterations = iter + 1;
    if (!changed) {
      // Same assignments give the same centroids: every later pass is a no-op.
      result.converged = true;
      break;
    }
    sums.setZero();
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = result.assignments[i];
      sums.row(c) += x.row(static_cast<Eigen::Index>(i)).cast<double>();
      ++counts[c];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      const auto row = static_cast<Eigen::Index>(c);
      centers.row(row) = (sums.row(row) / static_cast<double>(counts[c])).cast<float>();
    }
  }

  result.centroids.assign(centers.data(), centers.data() + centers.size());
  return result;
}

}  // namespace alignreplay::similarity
