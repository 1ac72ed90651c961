#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace gcl {

/// Per-anchor positive and negative sets for one batch.
///
/// For anchor i the other indices are ordered by (|hs_i - hs_j|, j). The first
/// floor((B-1)/2) are positives, the last floor((B-1)/2) are negatives; when
/// B-1 is odd the middle candidate is left out.
struct MiningResult {
  std::vector<std::vector<int>> positives;
  std::vector<std::vector<int>> negatives;
  /// Row-major B x B matrix of |hs_i - hs_j|.
  std::vector<double> distances;

  std::size_t batch_size() const { return positives.size(); }
  double distance(std::size_t i, std::size_t j) const { return distances[i * batch_size() + j]; }
};

/// Requires at least three scores.
MiningResult mine_batch(std::span<const double> scores);

}  // namespace gcl
