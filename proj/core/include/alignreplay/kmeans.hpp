#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace alignreplay::similarity {

struct KMeansResult {
  std::vector<std::uint32_t> assignments;  // one per point
  std::vector<float> centroids;            // k x dim, row-major
  std::size_t k = 0;
  std::size_t dim = 0;
  int iterations = 0;
  bool converged = false;
};

/// Lloyd's algorithm from a k-means++ seeding. `points` is n x dim row-major.
/// Iterates until assignments stop changing or `max_iters` is reached; a
/// centroid that loses all of its points keeps its previous position. Ties go
/// to the lowest cluster index. Fully determined by (points, k, seed).
KMeansResult kmeans(std::span<const float> points, std::size_t dim, std::size_t k, int max_iters,
                    std::uint64_t seed);

}  // namespace alignreplay::similarity
