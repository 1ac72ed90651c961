#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gcl/tensor.hpp"

namespace gcl {

enum class Activation { relu, tanh };
enum class Pooling { mean, last };

std::string to_string(Activation a);
std::string to_string(Pooling p);
Activation parse_activation(const std::string& text);
Pooling parse_pooling(const std::string& text);

/// Weight [in, out] and bias [out].
struct DenseLayer {
  Tensor weight;
  Tensor bias;
};

/// Stack of dense layers; `widths` lists every layer width including the input.
/// The activation follows every layer except the last.
struct Mlp {
  std::vector<Index> widths;
  Activation activation = Activation::relu;
  std::vector<DenseLayer> layers;

  Index input_dim() const { return widths.front(); }
  Index output_dim() const { return widths.back(); }
  std::vector<Tensor*> parameters();
  void set_requires_grad(bool on);
  void zero_grad();
};

/// Encoder theta_V: per-scan features -> embedding u.
struct EncoderParams {
  Mlp net;
  Pooling pooling = Pooling::mean;

  Index input_dim() const { return net.input_dim(); }
  Index embedding_dim() const { return net.output_dim(); }
};

/// Single affine layer embedding -> scalar health-score prediction.
struct RegressionHead {
  DenseLayer layer;
};

/// 3-way classifier over the concatenated pair [u_prev ; u_next].
struct ClassifierHead {
  Mlp net;
};

/// Glorot-uniform weights in (-s, s), s = sqrt(6 / (fan_in + fan_out)); zero biases.
Mlp init_mlp(const std::vector<Index>& widths, std::uint64_t seed, Activation activation = Activation::relu);
EncoderParams init_encoder(const std::vector<Index>& widths, std::uint64_t seed,
                           Activation activation = Activation::relu, Pooling pooling = Pooling::mean);
RegressionHead init_regression_head(Index embedding_dim, std::uint64_t seed);
/// `hidden` lists the hidden widths between the 2*embedding_dim input and the 3 logits.
ClassifierHead init_classifier_head(Index embedding_dim, const std::vector<Index>& hidden, std::uint64_t seed,
                                    Activation activation = Activation::relu);

struct BoundLayer {
  Var weight;
  Var bias;
};

/// Registers the layers as graph leaves (gradients flow to tensors that require them).
std::vector<BoundLayer> bind(Graph& g, std::vector<DenseLayer>& layers);
/// Registers copies of the layers as constants.
std::vector<BoundLayer> bind_constant(Graph& g, const std::vector<DenseLayer>& layers);

Var mlp_forward(std::span<const BoundLayer> layers, Activation activation, const Var& x);

/// U = encoder(batch) for a [B, F] batch.
Var encode(Graph& g, EncoderParams& params, const Matrix& batch);
/// Sequence input: `steps[t]` is the [B, F] slice at time t, pooled per params.pooling.
Var encode(Graph& g, EncoderParams& params, std::span<const Matrix> steps);
Var encode(std::span<const BoundLayer> layers, const EncoderParams& params, const Var& batch);

/// Embeddings without recording gradients.
Matrix embed(const EncoderParams& params, const Matrix& batch);

/// Rank-1 [B] predictions.
Var predict_hs(Graph& g, RegressionHead& head, const Var& embeddings);
Var predict_hs(const BoundLayer& head, const Var& embeddings);

/// Logits [3] for vectors or [B, 3] for row-stacked embeddings.
Var classify_pair(Graph& g, ClassifierHead& head, const Var& u_prev, const Var& u_next);
Var classify_pair(std::span<const BoundLayer> head, Activation activation, const Var& u_prev, const Var& u_next);

/// Argmax with the lowest index winning ties.
int predicted_class(const Eigen::Ref<const Eigen::RowVectorXd>& logits);

/// Stacks scan feature rows into a [B, F] matrix.
template <typename Records>
Matrix feature_matrix(const Records& records) {
  if (records.empty()) return Matrix(0, 0);
  Matrix m(static_cast<Index>(records.size()), records.begin()->features.size());
  Index r = 0;
  for (const auto& rec : records) {
    if (rec.features.size() != m.cols()) throw ShapeError("feature_matrix: inconsistent feature widths");
    m.row(r++) = rec.features;
  }
  return m;
}

}  // namespace gcl
