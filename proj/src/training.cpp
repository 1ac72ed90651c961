#include "gcl/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace gcl {

void TrainConfig::validate() const {
  if (batch_size < 3) throw ConfigError("batch size must be at least 3");
  if (!(lr > 0)) throw ConfigError("initial learning rate must be positive");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (!(eta_min >= 0) || eta_min > lr) throw ConfigError("eta_min must lie in [0, lr]");
  if (!(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1 && adam.eps > 0))
    throw ConfigError("invalid Adam hyperparameters");
  loss.validate();
}

void adam_step(std::span<Tensor* const> params, AdamState& state, double lr, const AdamConfig& config) {
  if (state.m.empty() && state.step == 0) {
    for (const Tensor* p : params) {
      state.m.push_back(Matrix::Zero(p->values().rows(), p->values().cols()));
      state.v.push_back(Matrix::Zero(p->values().rows(), p->values().cols()));
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: optimizer state tracks a different parameter set");
  ++state.step;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    Matrix& m = state.m[k];
    Matrix& v = state.v[k];
    if (m.rows() != p.values().rows() || m.cols() != p.values().cols())
      throw ShapeError("adam_step", p.shape(), Shape{m.rows(), m.cols()});
    if (p.grad()) {
      const Matrix& g = *p.grad();
      m = config.beta1 * m + (1.0 - config.beta1) * g;
      v = config.beta2 * v + (1.0 - config.beta2) * g.cwiseProduct(g);
    } else {
      m *= config.beta1;
      v *= config.beta2;
    }
    p.values().array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + config.eps);
  }
}

double cosine_lr(int epoch, const TrainConfig& config) {
  if (epoch < 0) throw UsageError("cosine_lr: negative epoch");
  if (epoch >= config.epochs) return config.eta_min;
  if (epoch == 0) return config.lr;
  const double phase = std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(config.epochs);
  return config.eta_min + (config.lr - config.eta_min) * (1.0 + std::cos(phase)) / 2.0;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(seed, 1000 + static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

nlohmann::json to_json(const EpochRecord& r) {
  nlohmann::json j;
  j["epoch"] = r.epoch;
  j["lr"] = r.lr;
  auto opt = [&](const char* key, const std::optional<double>& v) {
    if (v) j[key] = *v;
  };
  opt("loss", r.loss);
  opt("mse", r.mse);
  opt("contrastive", r.contrastive);
  opt("val_mse", r.val_mse);
  opt("val_accuracy", r.val_accuracy);
  opt("val_macro_f1", r.val_macro_f1);
  if (r.end) j["end"] = true;
  return j;
}

void write_trace(std::span<const EpochRecord> trace, const std::filesystem::path& path) {
  std::ostringstream out;
  for (const auto& r : trace) out << to_json(r).dump() << '\n';
  std::ofstream file(path, std::ios::binary);
  if (!file) throw Error("cannot write trace '" + path.string() + "'");
  file << out.str();
}

namespace {

template <typename Records>
Matrix gather_features(const Records& records, std::span<const std::size_t> idx) {
  Matrix X(static_cast<Index>(idx.size()), records[idx.front()].features.size());
  for (std::size_t r = 0; r < idx.size(); ++r) X.row(static_cast<Index>(r)) = records[idx[r]].features;
  return X;
}

std::vector<Tensor*> concat_params(std::vector<Tensor*> a, const std::vector<Tensor*>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

void zero_grads(std::span<Tensor* const> params) {
  for (Tensor* p : params) p->zero_grad();
}

Checkpoint pretrain_checkpoint(const EncoderParams& encoder, const RegressionHead& head, const AdamState& state,
                               int epoch, const TrainConfig& config) {
  Checkpoint ck;
  store_encoder(ck, encoder);
  store_regression_head(ck, head);
  store_adam(ck, "adam", state);
  ck.put("meta.epoch", Tensor::scalar(epoch));
  store_train_config(ck, config);
  return ck;
}

}  // namespace

double regression_mse(const EncoderParams& encoder, const RegressionHead& head, std::span<const ScanRecord> scans) {
  if (scans.empty()) return std::numeric_limits<double>::quiet_NaN();
  const Matrix U = embed(encoder, feature_matrix(scans));
  Eigen::VectorXd pred = (U * head.layer.weight.values()).col(0).array() + head.layer.bias.values()(0, 0);
  double total = 0;
  for (std::size_t k = 0; k < scans.size(); ++k) {
    const double r = pred(static_cast<Index>(k)) - scans[k].health_score;
    total += r * r;
  }
  return total / static_cast<double>(scans.size());
}

PretrainResult pretrain(std::span<const ScanRecord> train, std::span<const ScanRecord> val, const TrainConfig& config,
                        const ModelConfig& model) {
  config.validate();
  if (train.size() < static_cast<std::size_t>(config.batch_size))
    throw ConfigError("training split has " + std::to_string(train.size()) + " scans, fewer than batch size " +
                      std::to_string(config.batch_size));

  std::vector<Index> widths{train.front().features.size()};
  widths.insert(widths.end(), model.encoder_widths.begin(), model.encoder_widths.end());
  PretrainResult result;
  result.encoder = init_encoder(widths, derive_seed(config.seed, 1), model.activation, model.pooling);
  result.head = init_regression_head(result.encoder.embedding_dim(), derive_seed(config.seed, 2));
  EncoderParams& encoder = result.encoder;
  RegressionHead& head = result.head;
  const auto params = concat_params(encoder.net.parameters(), {&head.layer.weight, &head.layer.bias});

  AdamState state;
  const std::size_t B = static_cast<std::size_t>(config.batch_size);
  const std::size_t n_batches = train.size() / B;
  double best_val = std::numeric_limits<double>::infinity();
  EncoderParams best_encoder = encoder;
  RegressionHead best_head = head;
  AdamState best_state = state;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, config);
    const auto order = epoch_order(train.size(), config.seed, epoch);
    double sum_loss = 0, sum_mse = 0, sum_contrast = 0;
    for (std::size_t b = 0; b < n_batches; ++b) {
      std::span<const std::size_t> idx(order.data() + b * B, B);
      std::vector<double> scores(B);
      for (std::size_t k = 0; k < B; ++k) scores[k] = train[idx[k]].health_score;

      Graph g;
      auto enc = bind(g, encoder.net.layers);
      BoundLayer reg{g.leaf(head.layer.weight), g.leaf(head.layer.bias)};
      Var U = encode(enc, encoder, g.constant(Tensor::matrix(gather_features(train, idx))));
      Var pred = predict_hs(reg, U);
      MiningResult mining;
      if (config.loss.mode != LossMode::mse) mining = mine_batch(scores);
      auto terms = loss_terms<double>(scores, pred, U, mining, scores, config.loss);

      const double loss = terms.total.item();
      const double mse = terms.mse.item();
      const double contrast = terms.contrastive ? terms.contrastive->item() : 0.0;
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch << " batch " << b << ": total=" << loss << " mse=" << mse
            << " contrastive=" << contrast;
        throw TrainingError(msg.str());
      }
      zero_grads(params);
      g.backward(terms.total);
      adam_step(params, state, lr, config.adam);
      sum_loss += loss;
      sum_mse += mse;
      sum_contrast += contrast;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.loss = sum_loss / static_cast<double>(n_batches);
    rec.mse = sum_mse / static_cast<double>(n_batches);
    rec.contrastive = sum_contrast / static_cast<double>(n_batches);
    if (!val.empty()) {
      rec.val_mse = regression_mse(encoder, head, val);
      if (*rec.val_mse < best_val) {
        best_val = *rec.val_mse;
        result.best_epoch = epoch;
        best_encoder = encoder;
        best_head = head;
        best_state = state;
      }
    }
    result.trace.push_back(rec);
  }
  zero_grads(params);

  EpochRecord closing;
  closing.epoch = config.epochs;
  closing.lr = cosine_lr(config.epochs, config);
  if (!val.empty()) closing.val_mse = regression_mse(encoder, head, val);
  closing.end = true;
  result.trace.push_back(closing);

  result.final_checkpoint = pretrain_checkpoint(encoder, head, state, config.epochs, config);
  if (result.best_epoch < 0) {
    result.best_epoch = config.epochs - 1;
    result.best_checkpoint = result.final_checkpoint;
  } else {
    result.best_checkpoint = pretrain_checkpoint(best_encoder, best_head, best_state, result.best_epoch + 1, config);
  }
  return result;
}

std::vector<int> pair_labels(std::span<const PairExample> pairs) {
  std::vector<int> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(static_cast<int>(p.label));
  return out;
}

namespace {

struct PairFeatures {
  Matrix prev;
  Matrix next;
};

PairFeatures pair_features(std::span<const PairExample> pairs) {
  PairFeatures f;
  if (pairs.empty()) return f;
  const Index F = pairs.front().prev.features.size();
  f.prev.resize(static_cast<Index>(pairs.size()), F);
  f.next.resize(static_cast<Index>(pairs.size()), F);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    f.prev.row(static_cast<Index>(k)) = pairs[k].prev.features;
    f.next.row(static_cast<Index>(k)) = pairs[k].next.features;
  }
  return f;
}

Matrix rows_of(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(static_cast<Index>(idx.size()), m.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Index>(r)) = m.row(static_cast<Index>(idx[r]));
  return out;
}

std::vector<int> predict_from_embeddings(const ClassifierHead& head, const Matrix& prev, const Matrix& next) {
  Graph g;
  auto layers = bind_constant(g, head.net.layers);
  Var logits = classify_pair(layers, head.net.activation, g.constant(Tensor::matrix(prev)),
                             g.constant(Tensor::matrix(next)));
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(logits.value().rows()));
  for (Index r = 0; r < logits.value().rows(); ++r) out.push_back(predicted_class(logits.value().row(r)));
  return out;
}

Checkpoint finetune_checkpoint(const Checkpoint& pretrained, const EncoderParams& encoder, const ClassifierHead& head,
                               const AdamState& state, int epoch, const TrainConfig& config) {
  Checkpoint ck;
  store_encoder(ck, encoder);
  if (pretrained.find("regression.weight")) store_regression_head(ck, load_regression_head(pretrained));
  store_classifier(ck, head);
  store_adam(ck, "adam", state);
  ck.put("meta.epoch", Tensor::scalar(epoch));
  store_train_config(ck, config);
  if (pretrained.find("meta.data_config")) ck.put("meta.data_config", pretrained.at("meta.data_config"));
  return ck;
}

}  // namespace

std::vector<int> predict_pairs(const EncoderParams& encoder, const ClassifierHead& head,
                               std::span<const PairExample> pairs) {
  if (pairs.empty()) return {};
  const auto f = pair_features(pairs);
  return predict_from_embeddings(head, embed(encoder, f.prev), embed(encoder, f.next));
}

MetricsReport evaluate_pairs(const EncoderParams& encoder, const ClassifierHead& head,
                             std::span<const PairExample> pairs) {
  const auto pred = predict_pairs(encoder, head, pairs);
  const auto labels = pair_labels(pairs);
  return compute_metrics(pred, labels);
}

FinetuneResult finetune(const Checkpoint& pretrained, std::span<const PairExample> train,
                        std::span<const PairExample> val, const TrainConfig& config, const ModelConfig& model) {
  config.validate();
  if (train.size() < static_cast<std::size_t>(config.batch_size))
    throw ConfigError("fine-tuning split has " + std::to_string(train.size()) + " pairs, fewer than batch size " +
                      std::to_string(config.batch_size));

  FinetuneResult result;
  result.encoder = load_encoder(pretrained);
  EncoderParams& encoder = result.encoder;
  if (encoder.input_dim() != train.front().prev.features.size())
    throw ShapeError("incompatible checkpoint: encoder expects " + std::to_string(encoder.input_dim()) +
                     " features, data has " + std::to_string(train.front().prev.features.size()));
  result.head = init_classifier_head(encoder.embedding_dim(), model.classifier_hidden, derive_seed(config.seed, 3),
                                     model.activation);
  ClassifierHead& head = result.head;
  encoder.net.set_requires_grad(!config.freeze_encoder);

  const auto params =
      config.freeze_encoder ? head.net.parameters() : concat_params(head.net.parameters(), encoder.net.parameters());
  const auto features = pair_features(train);
  const auto labels = pair_labels(train);
  Matrix frozen_prev, frozen_next;
  if (config.freeze_encoder) {
    frozen_prev = embed(encoder, features.prev);
    frozen_next = embed(encoder, features.next);
  }

  AdamState state;
  const std::size_t B = static_cast<std::size_t>(config.batch_size);
  const std::size_t n_batches = train.size() / B;
  double best_f1 = -1;
  ClassifierHead best_head = head;
  EncoderParams best_encoder = encoder;
  AdamState best_state = state;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, config);
    const auto order = epoch_order(train.size(), config.seed, epoch);
    double sum_loss = 0;
    for (std::size_t b = 0; b < n_batches; ++b) {
      std::span<const std::size_t> idx(order.data() + b * B, B);
      std::vector<int> batch_labels(B);
      for (std::size_t k = 0; k < B; ++k) batch_labels[k] = labels[idx[k]];

      Graph g;
      Var u_prev, u_next;
      if (config.freeze_encoder) {
        u_prev = g.constant(Tensor::matrix(rows_of(frozen_prev, idx)));
        u_next = g.constant(Tensor::matrix(rows_of(frozen_next, idx)));
      } else {
        auto enc = bind(g, encoder.net.layers);
        u_prev = encode(enc, encoder, g.constant(Tensor::matrix(rows_of(features.prev, idx))));
        u_next = encode(enc, encoder, g.constant(Tensor::matrix(rows_of(features.next, idx))));
      }
      auto layers = bind(g, head.net.layers);
      Var loss = cross_entropy(classify_pair(layers, head.net.activation, u_prev, u_next), batch_labels);
      if (!std::isfinite(loss.item()))
        throw TrainingError("non-finite cross-entropy at epoch " + std::to_string(epoch) + " batch " +
                            std::to_string(b));
      zero_grads(params);
      g.backward(loss);
      adam_step(params, state, lr, config.adam);
      sum_loss += loss.item();
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.loss = sum_loss / static_cast<double>(n_batches);
    if (!val.empty()) {
      const auto m = evaluate_pairs(encoder, head, val);
      rec.val_accuracy = m.accuracy;
      rec.val_macro_f1 = m.macro_f1;
      if (m.macro_f1 > best_f1) {
        best_f1 = m.macro_f1;
        result.best_epoch = epoch;
        best_head = head;
        best_encoder = encoder;
        best_state = state;
      }
    }
    result.trace.push_back(rec);
  }
  zero_grads(params);

  EpochRecord closing;
  closing.epoch = config.epochs;
  closing.lr = cosine_lr(config.epochs, config);
  closing.end = true;
  if (!val.empty()) {
    const auto m = evaluate_pairs(encoder, head, val);
    closing.val_accuracy = m.accuracy;
    closing.val_macro_f1 = m.macro_f1;
  }
  result.trace.push_back(closing);

  result.final_checkpoint = finetune_checkpoint(pretrained, encoder, head, state, config.epochs, config);
  if (result.best_epoch < 0) {
    result.best_epoch = config.epochs - 1;
    result.best_checkpoint = result.final_checkpoint;
  } else {
    result.best_checkpoint =
        finetune_checkpoint(pretrained, best_encoder, best_head, best_state, result.best_epoch + 1, config);
  }
  return result;
}

}  // namespace gcl
