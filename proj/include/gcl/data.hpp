#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace gcl {

struct ScanRecord {
  std::string patient_id;
  int seq_index = 0;
  Eigen::RowVectorXd features;
  double health_score = 0.0;
};

/// Scans of one patient in strictly increasing seq_index order.
struct PatientSeries {
  std::string patient_id;
  std::vector<ScanRecord> scans;
};

struct Dataset {
  std::vector<PatientSeries> patients;

  std::size_t scan_count() const;
  std::size_t pair_count() const;
  Eigen::Index feature_dim() const;
  /// All scans flattened in patient order.
  std::vector<ScanRecord> scans() const;
};

enum class ChangeLabel : int { improved = 0, same = 1, deteriorated = 2 };
inline constexpr int kNumChangeLabels = 3;

std::string to_string(ChangeLabel label);

struct PairExample {
  ScanRecord prev;
  ScanRecord next;
  ChangeLabel label = ChangeLabel::same;
};

/// Health-score scale taken from the training split.
struct NormalizationStats {
  double hs_min = 0.0;
  double hs_max = 1.0;
  bool higher_is_better = true;

  void validate() const;
  /// Maps into [0, 1], clamping values outside the training range.
  double normalize(double hs) const;
};

NormalizationStats compute_stats(const Dataset& train, bool higher_is_better = true);

/// Returns a copy with every health score mapped by stats.normalize.
Dataset normalize_hs(const Dataset& data, const NormalizationStats& stats);
std::vector<ScanRecord> normalize_hs(std::vector<ScanRecord> records, const NormalizationStats& stats);

/// S/F ratio bin: 0 for > 430, 1 for [275, 430], 2 for [180, 275), 3 for < 180.
int categorize_sf(double sf);

enum class LabelMode { bin, threshold };

struct LabelConfig {
  LabelMode mode = LabelMode::threshold;
  /// Minimum normalized change counted as improvement or deterioration.
  double tau = 0.05;
};

LabelMode parse_label_mode(const std::string& text);
std::string to_string(LabelMode mode);

/// Labels a change between two raw health scores.
ChangeLabel change_label(double prev_hs, double next_hs, const NormalizationStats& stats, const LabelConfig& config);

struct SyntheticSpec {
  int n_patients = 100;
  int scans_per_patient = 4;
  int features = 12;
  int latent_dim = 4;
  double noise = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Longitudinal patients driven by a latent random walk with per-patient drift.
///
/// Health scores live on an S/F-like scale and features are a fixed linear
/// image of the latent state plus Gaussian noise. Patients differ far more
/// from each other than consecutive scans of one patient do.
Dataset generate_synthetic(const SyntheticSpec& spec);

/// Tabular text: header `patient_id,seq_index,health_score,f0..f{F-1}`, one scan per line.
Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& data, const std::filesystem::path& path);

struct SplitFractions {
  std::array<double, 3> values{0.543, 0.247, 0.210};
};

struct DatasetSplits {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Patient-level seeded split. Counts use largest-remainder rounding with ties
/// going to the earlier split.
DatasetSplits split_patients(const Dataset& data, const SplitFractions& fractions, std::uint64_t seed);
std::array<int, 3> split_counts(int n_patients, const SplitFractions& fractions);

/// One example per consecutive pair of scans within each patient.
std::vector<PairExample> make_pairs(const Dataset& data, const NormalizationStats& stats, const LabelConfig& config);

}  // namespace gcl
