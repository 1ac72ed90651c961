#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "gcl/data.hpp"
#include "gcl/encoder.hpp"
#include "gcl/losses.hpp"
#include "gcl/metrics.hpp"

namespace gcl {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  int batch_size = 8;
  double lr = 0.001;
  int epochs = 100;
  double eta_min = 0.0;
  AdamConfig adam;
  std::uint64_t seed = 0;
  LossConfig loss;
  bool freeze_encoder = true;

  void validate() const;
};

/// Architecture choices that are not optimization settings.
struct ModelConfig {
  /// Encoder widths after the input layer; the last entry is the embedding size.
  std::vector<Index> encoder_widths{64, 32, 16};
  Activation activation = Activation::relu;
  Pooling pooling = Pooling::mean;
  std::vector<Index> classifier_hidden{32};
};

/// First and second moments per parameter, in parameter order.
struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::int64_t step = 0;
};

/// One bias-corrected Adam update. Parameters without a gradient are treated as having zero gradient.
void adam_step(std::span<Tensor* const> params, AdamState& state, double lr, const AdamConfig& config = {});

/// Cosine annealing from config.lr at epoch 0 to config.eta_min at epoch config.epochs; later epochs stay at eta_min.
double cosine_lr(int epoch, const TrainConfig& config);

/// Seed for an independent random stream derived from a base seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Batch composition for one epoch; depends only on (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Named tensors plus a format version. Metadata (epoch, configs) is stored as tensors too.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::uint32_t version = kVersion;
  std::vector<NamedTensor> tensors;

  const Tensor* find(std::string_view name) const;
  const Tensor& at(std::string_view name) const;
  /// Inserts or replaces.
  void put(std::string name, Tensor tensor);
};

/// Little-endian: "GCCK", u32 version, per tensor (u32 name length, name, u32 rank,
/// u64 dims, f64 values), trailing CRC32 of everything before it.
std::string serialize_checkpoint(const Checkpoint& ck);
Checkpoint deserialize_checkpoint(std::string_view bytes);
void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::uint32_t crc32_of(std::string_view bytes);

void store_encoder(Checkpoint& ck, const EncoderParams& encoder);
EncoderParams load_encoder(const Checkpoint& ck);
void store_regression_head(Checkpoint& ck, const RegressionHead& head);
RegressionHead load_regression_head(const Checkpoint& ck);
void store_classifier(Checkpoint& ck, const ClassifierHead& head);
bool has_classifier(const Checkpoint& ck);
ClassifierHead load_classifier(const Checkpoint& ck);
void store_adam(Checkpoint& ck, std::string_view prefix, const AdamState& state);
void store_train_config(Checkpoint& ck, const TrainConfig& config);
TrainConfig load_train_config(const Checkpoint& ck);

/// Data-pipeline settings carried from pre-training into fine-tuning and evaluation.
struct DataConfig {
  NormalizationStats stats;
  SplitFractions fractions;
  std::uint64_t split_seed = 0;
  LabelConfig labels;
};
void store_data_config(Checkpoint& ck, const DataConfig& config);
DataConfig load_data_config(const Checkpoint& ck);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  /// Mean over batches; absent in the closing record.
  std::optional<double> loss;
  std::optional<double> mse;
  std::optional<double> contrastive;
  std::optional<double> val_mse;
  std::optional<double> val_accuracy;
  std::optional<double> val_macro_f1;
  bool end = false;
};

nlohmann::json to_json(const EpochRecord& r);
/// One JSON object per line.
void write_trace(std::span<const EpochRecord> trace, const std::filesystem::path& path);

struct PretrainResult {
  EncoderParams encoder;
  RegressionHead head;
  Checkpoint final_checkpoint;
  Checkpoint best_checkpoint;
  int best_epoch = -1;
  /// One record per epoch plus a closing record at epoch == epochs.
  std::vector<EpochRecord> trace;
};

/// Regression pre-training with optional contrastive terms. Scans must carry
/// normalized health scores, which serve both as regression targets and as the
/// mining distance scale.
PretrainResult pretrain(std::span<const ScanRecord> train, std::span<const ScanRecord> val,
                        const TrainConfig& config, const ModelConfig& model = {});

/// Mean squared regression error per scan.
double regression_mse(const EncoderParams& encoder, const RegressionHead& head, std::span<const ScanRecord> scans);

struct FinetuneResult {
  EncoderParams encoder;
  ClassifierHead head;
  Checkpoint final_checkpoint;
  Checkpoint best_checkpoint;
  int best_epoch = -1;
  std::vector<EpochRecord> trace;
};

/// Trains the 3-way classifier on pair embeddings, starting from the encoder in `pretrained`.
FinetuneResult finetune(const Checkpoint& pretrained, std::span<const PairExample> train,
                        std::span<const PairExample> val, const TrainConfig& config, const ModelConfig& model = {});

std::vector<int> predict_pairs(const EncoderParams& encoder, const ClassifierHead& head,
                               std::span<const PairExample> pairs);
std::vector<int> pair_labels(std::span<const PairExample> pairs);
MetricsReport evaluate_pairs(const EncoderParams& encoder, const ClassifierHead& head,
                             std::span<const PairExample> pairs);

}  // namespace gcl
