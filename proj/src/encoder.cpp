#include "gcl/encoder.hpp"

#include <cmath>
#include <random>

namespace gcl {

std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }
std::string to_string(Pooling p) { return p == Pooling::mean ? "mean" : "last"; }

Activation parse_activation(const std::string& text) {
  if (text == "relu") return Activation::relu;
  if (text == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + text + "' (expected relu or tanh)");
}

Pooling parse_pooling(const std::string& text) {
  if (text == "mean") return Pooling::mean;
  if (text == "last") return Pooling::last;
  throw ConfigError("unknown pooling '" + text + "' (expected mean or last)");
}

std::vector<Tensor*> Mlp::parameters() {
  std::vector<Tensor*> out;
  for (auto& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

void Mlp::set_requires_grad(bool on) {
  for (Tensor* t : parameters()) t->set_requires_grad(on);
}

void Mlp::zero_grad() {
  for (Tensor* t : parameters()) t->zero_grad();
}

namespace {

DenseLayer glorot_layer(Index fan_in, Index fan_out, std::mt19937_64& rng) {
  const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-s, s);
  Matrix w(fan_in, fan_out);
  for (Index k = 0; k < w.size(); ++k) w.data()[k] = dist(rng);
  return DenseLayer{Tensor({fan_in, fan_out}, std::move(w), true), Tensor::zeros({fan_out}, true)};
}

}  // namespace

Mlp init_mlp(const std::vector<Index>& widths, std::uint64_t seed, Activation activation) {
  if (widths.size() < 2) throw UsageError("an MLP needs at least an input and an output width");
  for (Index w : widths)
    if (w <= 0) throw UsageError("layer widths must be positive");
  std::mt19937_64 rng(seed);
  Mlp net{widths, activation, {}};
  for (std::size_t k = 0; k + 1 < widths.size(); ++k) net.layers.push_back(glorot_layer(widths[k], widths[k + 1], rng));
  return net;
}

EncoderParams init_encoder(const std::vector<Index>& widths, std::uint64_t seed, Activation activation,
                           Pooling pooling) {
  return EncoderParams{init_mlp(widths, seed, activation), pooling};
}

RegressionHead init_regression_head(Index embedding_dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return RegressionHead{glorot_layer(embedding_dim, 1, rng)};
}

ClassifierHead init_classifier_head(Index embedding_dim, const std::vector<Index>& hidden, std::uint64_t seed,
                                    Activation activation) {
  std::vector<Index> widths{2 * embedding_dim};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(3);
  return ClassifierHead{init_mlp(widths, seed, activation)};
}

std::vector<BoundLayer> bind(Graph& g, std::vector<DenseLayer>& layers) {
  std::vector<BoundLayer> out;
  out.reserve(layers.size());
  for (auto& l : layers) out.push_back({g.leaf(l.weight), g.leaf(l.bias)});
  return out;
}

std::vector<BoundLayer> bind_constant(Graph& g, const std::vector<DenseLayer>& layers) {
  std::vector<BoundLayer> out;
  out.reserve(layers.size());
  for (const auto& l : layers) out.push_back({g.constant(l.weight), g.constant(l.bias)});
  return out;
}

Var mlp_forward(std::span<const BoundLayer> layers, Activation activation, const Var& x) {
  Var h = x;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    h = affine(h, layers[k].weight, layers[k].bias);
    if (k + 1 < layers.size()) h = activation == Activation::relu ? relu(h) : tanh(h);
  }
  return h;
}

Var encode(std::span<const BoundLayer> layers, const EncoderParams& params, const Var& batch) {
  if (batch.rank() != 2 || batch.shape()[1] != params.input_dim())
    throw ShapeError("encode", batch.shape(), Shape{params.input_dim(), params.embedding_dim()});
  return mlp_forward(layers, params.net.activation, batch);
}

Var encode(Graph& g, EncoderParams& params, const Matrix& batch) {
  auto layers = bind(g, params.net.layers);
  return encode(layers, params, g.constant(Tensor::matrix(batch)));
}

Var encode(Graph& g, EncoderParams& params, std::span<const Matrix> steps) {
  if (steps.empty()) throw UsageError("encode: sequence input needs at least one time step");
  auto layers = bind(g, params.net.layers);
  if (params.pooling == Pooling::last) return encode(layers, params, g.constant(Tensor::matrix(steps.back())));
  Var total = encode(layers, params, g.constant(Tensor::matrix(steps.front())));
  for (std::size_t t = 1; t < steps.size(); ++t) {
    if (steps[t].rows() != steps.front().rows()) throw ShapeError("encode: time steps differ in batch size");
    total = total + encode(layers, params, g.constant(Tensor::matrix(steps[t])));
  }
  return scale(total, 1.0 / static_cast<double>(steps.size()));
}

Matrix embed(const EncoderParams& params, const Matrix& batch) {
  Graph g;
  auto layers = bind_constant(g, params.net.layers);
  return encode(layers, params, g.constant(Tensor::matrix(batch))).value();
}

Var predict_hs(const BoundLayer& head, const Var& embeddings) {
  if (embeddings.rank() != 2) throw ShapeError("predict_hs: expected [B, D] embeddings, got " + to_string(embeddings.shape()));
  Var out = affine(embeddings, head.weight, head.bias);
  return reshape(out, Shape{embeddings.shape()[0]});
}

Var predict_hs(Graph& g, RegressionHead& head, const Var& embeddings) {
  BoundLayer bound{g.leaf(head.layer.weight), g.leaf(head.layer.bias)};
  return predict_hs(bound, embeddings);
}

Var classify_pair(std::span<const BoundLayer> head, Activation activation, const Var& u_prev, const Var& u_next) {
  if (u_prev.shape() != u_next.shape()) throw ShapeError("classify_pair", u_prev.shape(), u_next.shape());
  const Index in = head.front().weight.shape()[0];
  if (u_prev.shape().back() * 2 != in) throw ShapeError("classify_pair", u_prev.shape(), head.front().weight.shape());
  return mlp_forward(head, activation, concat(u_prev, u_next));
}

Var classify_pair(Graph& g, ClassifierHead& head, const Var& u_prev, const Var& u_next) {
  auto layers = bind(g, head.net.layers);
  return classify_pair(layers, head.net.activation, u_prev, u_next);
}

int predicted_class(const Eigen::Ref<const Eigen::RowVectorXd>& logits) {
  int best = 0;
  for (Index k = 1; k < logits.size(); ++k)
    if (logits(k) > logits(best)) best = static_cast<int>(k);
  return best;
}

}  // namespace gcl
