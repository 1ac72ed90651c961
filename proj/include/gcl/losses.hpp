#pragma once

// Training objectives over graph variables.
//
//   mse      sum_i (y_i - yhat_i)^2
//   cl       sum_i sum_{j in neg(i)} log s_ij  -  sum_i sum_{j in pos(i)} log s_ij
//   wcl      sum_i sum_{j in neg(i)} log(s_ij (d_ij + eps))  -  sum_i sum_{j in pos(i)} log(s_ij) / (d_ij + eps)
//
// s_ij is a similarity clamped into [sim_floor, 1]; positive and negative sets
// come from mine_batch.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gcl/mining.hpp"
#include "gcl/tensor.hpp"

namespace gcl {

enum class LossMode { mse, mse_cl, mse_wcl };
enum class SimilarityKind { cosine, l2 };

struct LossConfig {
  LossMode mode = LossMode::mse_cl;
  SimilarityKind similarity = SimilarityKind::cosine;
  double epsilon = 1e-2;
  double sim_floor = 1e-6;
  double alpha = 1.0;

  void validate() const;
};

std::string to_string(LossMode mode);
std::string to_string(SimilarityKind kind);
LossMode parse_loss_mode(const std::string& text);
SimilarityKind parse_similarity(const std::string& text);

/// Sum of squared residuals between targets and predictions (rank-1, equal length).
template <typename Scalar>
BasicVar<Scalar> mse_loss(std::span<const Scalar> targets, const BasicVar<Scalar>& pred) {
  if (pred.rank() != 1 || pred.shape()[0] != static_cast<Index>(targets.size()))
    throw ShapeError("mse_loss", Shape{static_cast<Index>(targets.size())}, pred.shape());
  MatrixR<Scalar> y(1, static_cast<Index>(targets.size()));
  for (std::size_t i = 0; i < targets.size(); ++i) y(0, static_cast<Index>(i)) = targets[i];
  auto& g = pred.graph();
  Shape shape{y.cols()};
  auto t = g.constant(BasicTensor<Scalar>(std::move(shape), std::move(y)));
  return sum(square(t - pred));
}

/// Similarity in (0, 1]: cosine maps (1 + cos)/2, l2 maps 1/(1 + |u - v|); both clamped below at `floor`.
template <typename Scalar>
BasicVar<Scalar> similarity(const BasicVar<Scalar>& u, const BasicVar<Scalar>& v, SimilarityKind kind,
                            Scalar floor) {
  if (kind == SimilarityKind::cosine) {
    if (u.value().isZero(0) || v.value().isZero(0)) throw DomainError("cosine similarity of a zero vector");
    auto cosine = dot(u, v) / (norm(u) * norm(v));
    return clamp(scale(shift(cosine, Scalar(1)), Scalar(0.5)), floor, Scalar(1));
  }
  auto& g = u.graph();
  auto raw = g.constant(Scalar(1)) / shift(norm(u - v), Scalar(1));
  return clamp(raw, floor, Scalar(1));
}

namespace detail {

template <typename Scalar>
BasicVar<Scalar> contrastive(const BasicVar<Scalar>& embeddings, const MiningResult& mining,
                             const std::vector<double>* distances, const LossConfig& config) {
  if (embeddings.rank() != 2 || embeddings.shape()[0] != static_cast<Index>(mining.batch_size()))
    throw ShapeError("contrastive loss", embeddings.shape(), Shape{static_cast<Index>(mining.batch_size())});
  const auto n = mining.batch_size();
  const Scalar floor = static_cast<Scalar>(config.sim_floor);
  const Scalar eps = static_cast<Scalar>(config.epsilon);

  std::vector<BasicVar<Scalar>> rows;
  rows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) rows.push_back(row(embeddings, static_cast<Index>(i)));

  auto& g = embeddings.graph();
  std::vector<BasicVar<Scalar>> terms;
  for (std::size_t i = 0; i < n; ++i) {
    for (int j : mining.negatives[i]) {
      auto s = similarity(rows[i], rows[static_cast<std::size_t>(j)], config.similarity, floor);
      if (distances) s = scale(s, static_cast<Scalar>((*distances)[i * n + static_cast<std::size_t>(j)]) + eps);
      terms.push_back(log(s));
    }
    for (int j : mining.positives[i]) {
      auto s = log(similarity(rows[i], rows[static_cast<std::size_t>(j)], config.similarity, floor));
      if (distances) s = scale(s, Scalar(1) / (static_cast<Scalar>((*distances)[i * n + static_cast<std::size_t>(j)]) + eps));
      terms.push_back(-s);
    }
  }
  if (terms.empty()) return g.constant(Scalar(0));
  BasicVar<Scalar> total = terms.front();
  for (std::size_t k = 1; k < terms.size(); ++k) total = total + terms[k];
  return total;
}

}  // namespace detail

/// Unweighted contrastive loss over a mined batch.
template <typename Scalar>
BasicVar<Scalar> cl_loss(const BasicVar<Scalar>& embeddings, const MiningResult& mining, const LossConfig& config) {
  return detail::contrastive(embeddings, mining, nullptr, config);
}

/// Contrastive loss with each pair term scaled by its health-score distance d_ij + epsilon.
template <typename Scalar>
BasicVar<Scalar> wcl_loss(const BasicVar<Scalar>& embeddings, const MiningResult& mining,
                          std::span<const double> scores, const LossConfig& config) {
  if (scores.size() != mining.batch_size())
    throw ShapeError("wcl_loss", Shape{static_cast<Index>(scores.size())},
                     Shape{static_cast<Index>(mining.batch_size())});
  const auto n = scores.size();
  std::vector<double> distances(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) distances[i * n + j] = std::abs(scores[i] - scores[j]);
  return detail::contrastive(embeddings, mining, &distances, config);
}

/// Components of the pre-training objective; `contrastive` is already scaled by alpha.
template <typename Scalar>
struct LossTerms {
  BasicVar<Scalar> total;
  BasicVar<Scalar> mse;
  std::optional<BasicVar<Scalar>> contrastive;
};

template <typename Scalar>
LossTerms<Scalar> loss_terms(std::span<const Scalar> targets, const BasicVar<Scalar>& pred,
                             const BasicVar<Scalar>& embeddings, const MiningResult& mining,
                             std::span<const double> scores, const LossConfig& config) {
  auto mse = mse_loss(targets, pred);
  if (config.mode == LossMode::mse) return {mse, mse, std::nullopt};
  auto contrast = config.mode == LossMode::mse_cl ? cl_loss(embeddings, mining, config)
                                                  : wcl_loss(embeddings, mining, scores, config);
  auto weighted = scale(contrast, static_cast<Scalar>(config.alpha));
  return {mse + weighted, mse, weighted};
}

/// Loss selected by config.mode: mse, mse + alpha*cl, or mse + alpha*wcl.
template <typename Scalar>
BasicVar<Scalar> combined_loss(std::span<const Scalar> targets, const BasicVar<Scalar>& pred,
                               const BasicVar<Scalar>& embeddings, const MiningResult& mining,
                               std::span<const double> scores, const LossConfig& config) {
  return loss_terms(targets, pred, embeddings, mining, scores, config).total;
}

/// Mean negative log-likelihood of `labels` under softmax(logits); logits are [batch, classes].
template <typename Scalar>
BasicVar<Scalar> cross_entropy(const BasicVar<Scalar>& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.shape()[0] != static_cast<Index>(labels.size()))
    throw ShapeError("cross_entropy", logits.shape(), Shape{static_cast<Index>(labels.size())});
  for (int l : labels)
    if (l < 0 || l >= logits.shape()[1]) throw UsageError("cross_entropy: label " + std::to_string(l) + " out of range");
  return -mean(select(log_softmax(logits), labels));
}

}  // namespace gcl
