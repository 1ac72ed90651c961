#include "gcl/mining.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "gcl/errors.hpp"
#include "gcl/losses.hpp"

namespace gcl {

MiningResult mine_batch(std::span<const double> scores) {
  const std::size_t n = scores.size();
  if (n < 3) throw UsageError("mine_batch: batch of " + std::to_string(n) + " has no valid positive/negative split");

  MiningResult result;
  result.positives.resize(n);
  result.negatives.resize(n);
  result.distances.resize(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) result.distances[i * n + j] = std::abs(scores[i] - scores[j]);

  const std::size_t per_side = (n - 1) / 2;
  std::vector<int> order;
  order.reserve(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    order.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) order.push_back(static_cast<int>(j));
    const double* d = &result.distances[i * n];
    std::stable_sort(order.begin(), order.end(), [d](int a, int b) { return d[a] < d[b]; });
    result.positives[i].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(per_side));
    result.negatives[i].assign(order.end() - static_cast<std::ptrdiff_t>(per_side), order.end());
  }
  return result;
}

void LossConfig::validate() const {
  if (!(epsilon > 0)) throw ConfigError("loss epsilon must be positive");
  if (!(sim_floor > 0 && sim_floor < 1)) throw ConfigError("similarity floor must lie in (0, 1)");
  if (!(alpha >= 0)) throw ConfigError("contrastive weight alpha must be non-negative");
}

std::string to_string(LossMode mode) {
  switch (mode) {
    case LossMode::mse: return "mse";
    case LossMode::mse_cl: return "mse+cl";
    case LossMode::mse_wcl: return "mse+wcl";
  }
  return "?";
}

std::string to_string(SimilarityKind kind) { return kind == SimilarityKind::cosine ? "cos" : "l2"; }

LossMode parse_loss_mode(const std::string& text) {
  if (text == "mse") return LossMode::mse;
  if (text == "mse+cl") return LossMode::mse_cl;
  if (text == "mse+wcl") return LossMode::mse_wcl;
  throw ConfigError("unknown loss mode '" + text + "' (expected mse, mse+cl or mse+wcl)");
}

SimilarityKind parse_similarity(const std::string& text) {
  if (text == "cos") return SimilarityKind::cosine;
  if (text == "l2") return SimilarityKind::l2;
  throw ConfigError("unknown similarity '" + text + "' (expected cos or l2)");
}

}  // namespace gcl
