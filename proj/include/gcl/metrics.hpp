#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "gcl/data.hpp"
#include "gcl/encoder.hpp"

namespace gcl {

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int support = 0;
};

struct MetricsReport {
  double accuracy = 0.0;  ///< percent
  double macro_f1 = 0.0;
  std::array<ClassScores, 3> per_class{};
  /// confusion[true][predicted]
  std::array<std::array<int, 3>, 3> confusion{};
  int n_examples = 0;
};

/// Accuracy and macro-F1 over 3-way labels; a class with no predictions and no
/// support contributes F1 = 0.
MetricsReport compute_metrics(std::span<const int> predictions, std::span<const int> labels);

/// `key: value` lines.
std::string metrics_to_text(const MetricsReport& report);
nlohmann::json metrics_to_json(const MetricsReport& report);
/// Writes `<stem>.txt` and `<stem>.json` next to each other.
void write_metrics(const MetricsReport& report, const std::filesystem::path& path);

struct SpearmanResult {
  double rho = 0.0;
  bool degenerate = false;
};

/// Rank correlation with average ranks for ties; zero variance in either
/// coordinate yields rho = 0 and degenerate = true.
SpearmanResult spearman(std::span<const double> x, std::span<const double> y);

double standard_deviation(std::span<const double> values);

struct SpreadPoint {
  double delta_hs = 0.0;
  double cos_distance = 0.0;
};

struct SpreadProfile {
  std::vector<SpreadPoint> points;
  double distance_std = 0.0;
  double rho = 0.0;
  bool degenerate = false;
  /// Pairs that were requested but not available.
  std::size_t capped = 0;
};

/// Cosine distance 1 - cos(u, v) in [0, 2]; 0 when either vector is zero.
double cosine_distance(const Eigen::Ref<const Eigen::RowVectorXd>& u, const Eigen::Ref<const Eigen::RowVectorXd>& v);

/// Samples scan pairs without replacement and records (|dHS|, cosine distance).
/// `scans` should carry normalized health scores.
SpreadProfile embedding_spread(const EncoderParams& encoder, std::span<const ScanRecord> scans,
                               std::size_t sample_size, std::uint64_t seed);
/// Same analysis over precomputed embeddings (row i belongs to scores[i]).
SpreadProfile embedding_spread(const Matrix& embeddings, std::span<const double> scores, std::size_t sample_size,
                               std::uint64_t seed);

void export_profile(const SpreadProfile& profile, const std::filesystem::path& path);
std::string profile_to_text(const SpreadProfile& profile);

/// Median with the even-count rule (mean of the two middle values).
double median(std::vector<double> values);

}  // namespace gcl
