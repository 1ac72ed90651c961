#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gcl/data.hpp"
#include "gcl/metrics.hpp"
#include "gcl/training.hpp"

namespace gcl {

/// Splits, normalization and pair construction shared by every stage.
struct PreparedData {
  DataConfig config;
  DatasetSplits raw;
  /// Scans with normalized health scores.
  std::vector<ScanRecord> train_scans;
  std::vector<ScanRecord> val_scans;
  std::vector<ScanRecord> test_scans;
  std::vector<PairExample> train_pairs;
  std::vector<PairExample> val_pairs;
  std::vector<PairExample> test_pairs;
};

/// Splits at patient level, fits normalization on the training split and labels consecutive pairs.
PreparedData prepare_data(const Dataset& data, const SplitFractions& fractions, std::uint64_t split_seed,
                          const LabelConfig& labels);
/// Same, reusing the normalization and split recorded in a checkpoint.
PreparedData prepare_data(const Dataset& data, const DataConfig& config);

struct PipelineConfig {
  TrainConfig pretrain;
  TrainConfig finetune;
  ModelConfig model;
  std::size_t spread_sample = 2000;
};

struct PipelineResult {
  PretrainResult pretrain;
  FinetuneResult finetune;
  MetricsReport test;
  SpreadProfile spread;
};

/// Pre-train, fine-tune from the best pre-training checkpoint, evaluate the best
/// fine-tuned model on the test pairs and profile the test-scan embeddings.
PipelineResult run_pipeline(const PreparedData& data, const PipelineConfig& config);

struct CompareRow {
  std::uint64_t seed = 0;
  LossMode mode = LossMode::mse;
  bool ok = false;
  std::string error;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double distance_std = 0.0;
  double rho = 0.0;
};

struct CompareSummary {
  LossMode mode = LossMode::mse;
  int runs = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double distance_std = 0.0;
  double rho = 0.0;
};

struct CompareReport {
  std::vector<CompareRow> rows;
  /// Medians per mode over successful seeds, in mode order.
  std::vector<CompareSummary> medians;
};

struct CompareConfig {
  PipelineConfig pipeline;
  SplitFractions fractions;
  LabelConfig labels;
  std::vector<LossMode> modes{LossMode::mse, LossMode::mse_cl, LossMode::mse_wcl};
  /// When set, final pre-training and fine-tuning checkpoints are written here.
  std::optional<std::filesystem::path> checkpoint_dir;
};

/// Runs every mode for every seed (the seed drives the split, initialization and shuffling).
/// A failing (seed, mode) run is recorded and the rest continue.
CompareReport run_compare(const Dataset& data, const std::vector<std::uint64_t>& seeds, const CompareConfig& config);

std::string report_to_text(const CompareReport& report);
nlohmann::json report_to_json(const CompareReport& report);

}  // namespace gcl
