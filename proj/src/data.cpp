#include "gcl/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "gcl/errors.hpp"

namespace gcl {

std::size_t Dataset::scan_count() const {
  std::size_t n = 0;
  for (const auto& p : patients) n += p.scans.size();
  return n;
}

std::size_t Dataset::pair_count() const {
  std::size_t n = 0;
  for (const auto& p : patients) n += p.scans.empty() ? 0 : p.scans.size() - 1;
  return n;
}

Eigen::Index Dataset::feature_dim() const {
  for (const auto& p : patients)
    if (!p.scans.empty()) return p.scans.front().features.size();
  return 0;
}

std::vector<ScanRecord> Dataset::scans() const {
  std::vector<ScanRecord> out;
  out.reserve(scan_count());
  for (const auto& p : patients) out.insert(out.end(), p.scans.begin(), p.scans.end());
  return out;
}

std::string to_string(ChangeLabel label) {
  switch (label) {
    case ChangeLabel::improved: return "improved";
    case ChangeLabel::same: return "same";
    case ChangeLabel::deteriorated: return "deteriorated";
  }
  return "?";
}

void NormalizationStats::validate() const {
  if (!(std::isfinite(hs_min) && std::isfinite(hs_max) && hs_max > hs_min))
    throw ConfigError("degenerate normalization stats: hs_max must exceed hs_min");
}

double NormalizationStats::normalize(double hs) const {
  return std::clamp((hs - hs_min) / (hs_max - hs_min), 0.0, 1.0);
}

NormalizationStats compute_stats(const Dataset& train, bool higher_is_better) {
  NormalizationStats stats{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
                           higher_is_better};
  for (const auto& p : train.patients)
    for (const auto& s : p.scans) {
      stats.hs_min = std::min(stats.hs_min, s.health_score);
      stats.hs_max = std::max(stats.hs_max, s.health_score);
    }
  stats.validate();
  return stats;
}

std::vector<ScanRecord> normalize_hs(std::vector<ScanRecord> records, const NormalizationStats& stats) {
  stats.validate();
  for (auto& r : records) r.health_score = stats.normalize(r.health_score);
  return records;
}

Dataset normalize_hs(const Dataset& data, const NormalizationStats& stats) {
  stats.validate();
  Dataset out = data;
  for (auto& p : out.patients)
    for (auto& s : p.scans) s.health_score = stats.normalize(s.health_score);
  return out;
}

int categorize_sf(double sf) {
  if (!(sf > 0)) throw DomainError("S/F ratio must be positive");
  if (sf > 430) return 0;
  if (sf >= 275) return 1;
  if (sf >= 180) return 2;
  return 3;
}

LabelMode parse_label_mode(const std::string& text) {
  if (text == "bin") return LabelMode::bin;
  if (text == "threshold") return LabelMode::threshold;
  throw ConfigError("unknown label mode '" + text + "' (expected bin or threshold)");
}

std::string to_string(LabelMode mode) { return mode == LabelMode::bin ? "bin" : "threshold"; }

ChangeLabel change_label(double prev_hs, double next_hs, const NormalizationStats& stats, const LabelConfig& config) {
  if (!std::isfinite(prev_hs) || !std::isfinite(next_hs)) throw DomainError("change_label: non-finite health score");
  switch (config.mode) {
    case LabelMode::bin: {
      const int before = categorize_sf(prev_hs);
      const int after = categorize_sf(next_hs);
      if (after < before) return ChangeLabel::improved;
      if (after > before) return ChangeLabel::deteriorated;
      return ChangeLabel::same;
    }
    case LabelMode::threshold: {
      stats.validate();
      const double sign = stats.higher_is_better ? 1.0 : -1.0;
      const double delta = sign * (next_hs - prev_hs) / (stats.hs_max - stats.hs_min);
      if (delta > config.tau) return ChangeLabel::improved;
      if (delta < -config.tau) return ChangeLabel::deteriorated;
      return ChangeLabel::same;
    }
  }
  throw ConfigError("unknown label mode");
}

void SyntheticSpec::validate() const {
  if (n_patients < 3) throw ConfigError("synthetic data needs at least 3 patients");
  if (scans_per_patient < 2) throw ConfigError("synthetic data needs at least 2 scans per patient");
  if (features < 1 || latent_dim < 1) throw ConfigError("feature and latent dimensions must be positive");
  if (!(noise >= 0) || !std::isfinite(noise)) throw ConfigError("noise must be a finite non-negative value");
}

namespace {

// Scale of the latent walk relative to the between-patient spread of z_0.
constexpr double kDriftScale = 0.7;
constexpr double kStepScale = 0.05;
constexpr double kScoreCenter = 300.0;
constexpr double kScoreScale = 100.0;
constexpr double kOffsetScale = 20.0;
constexpr double kScoreFloor = 20.0;

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto gaussian = [&](Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    return m;
  };

  const Eigen::Index L = spec.latent_dim;
  Eigen::MatrixXd mixing = gaussian(spec.features, L) / std::sqrt(static_cast<double>(L));
  Eigen::VectorXd readout = gaussian(L, 1);
  readout.normalize();

  Dataset data;
  data.patients.reserve(static_cast<std::size_t>(spec.n_patients));
  for (int p = 0; p < spec.n_patients; ++p) {
    PatientSeries series;
    series.patient_id = "P" + std::to_string(p);
    Eigen::VectorXd z = gaussian(L, 1);
    const Eigen::VectorXd drift = kDriftScale * gaussian(L, 1);
    const double offset = kOffsetScale * normal(rng);
    for (int t = 0; t < spec.scans_per_patient; ++t) {
      if (t > 0) z += drift + kStepScale * gaussian(L, 1);
      ScanRecord scan;
      scan.patient_id = series.patient_id;
      scan.seq_index = t;
      scan.health_score = std::max(kScoreFloor, kScoreCenter + kScoreScale * readout.dot(z) + offset);
      Eigen::VectorXd f = mixing * z + spec.noise * gaussian(spec.features, 1);
      scan.features = f.transpose();
      series.scans.push_back(std::move(scan));
    }
    data.patients.push_back(std::move(series));
  }
  return data;
}

namespace {

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_number(std::string_view text, const char* column, std::size_t line) {
  text = trim(text);
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw ParseError(std::string("invalid ") + column + " '" + std::string(text) + "'", line);
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(value)) throw ParseError(std::string("non-finite ") + column, line);
  }
  return value;
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open dataset '" + path.string() + "'");

  std::string line;
  std::size_t line_no = 0;
  std::size_t n_features = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cols = split_csv(line);
    if (cols.size() < 4 || trim(cols[0]) != "patient_id" || trim(cols[1]) != "seq_index" ||
        trim(cols[2]) != "health_score")
      throw ParseError("expected header 'patient_id,seq_index,health_score,f0,...'", line_no);
    for (std::size_t k = 3; k < cols.size(); ++k)
      if (trim(cols[k]) != "f" + std::to_string(k - 3))
        throw ParseError("expected column 'f" + std::to_string(k - 3) + "' in header", line_no);
    n_features = cols.size() - 3;
    have_header = true;
    break;
  }
  if (!have_header) throw ParseError("no records");

  Dataset data;
  std::map<std::string, std::size_t> index_of;
  std::set<std::pair<std::string, int>> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cols = split_csv(line);
    if (cols.size() != n_features + 3)
      throw ParseError("expected " + std::to_string(n_features) + " features, found " +
                           std::to_string(cols.size() < 3 ? 0 : cols.size() - 3),
                       line_no);
    ScanRecord scan;
    scan.patient_id = std::string(trim(cols[0]));
    if (scan.patient_id.empty()) throw ParseError("empty patient_id", line_no);
    scan.seq_index = parse_number<int>(cols[1], "seq_index", line_no);
    if (scan.seq_index < 0) throw ParseError("negative seq_index", line_no);
    scan.health_score = parse_number<double>(cols[2], "health_score", line_no);
    scan.features.resize(static_cast<Eigen::Index>(n_features));
    for (std::size_t k = 0; k < n_features; ++k)
      scan.features(static_cast<Eigen::Index>(k)) = parse_number<double>(cols[k + 3], "feature", line_no);
    if (!seen.insert({scan.patient_id, scan.seq_index}).second)
      throw ParseError("duplicate record for patient '" + scan.patient_id + "' seq_index " +
                           std::to_string(scan.seq_index),
                       line_no);

    auto [it, inserted] = index_of.try_emplace(scan.patient_id, data.patients.size());
    if (inserted) data.patients.push_back(PatientSeries{scan.patient_id, {}});
    data.patients[it->second].scans.push_back(std::move(scan));
  }
  if (data.patients.empty()) throw ParseError("no records");
  for (auto& p : data.patients)
    std::sort(p.scans.begin(), p.scans.end(),
              [](const ScanRecord& a, const ScanRecord& b) { return a.seq_index < b.seq_index; });
  return data;
}

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
  std::ostringstream out;
  const auto F = data.feature_dim();
  out << "patient_id,seq_index,health_score";
  for (Eigen::Index k = 0; k < F; ++k) out << ",f" << k;
  out << '\n';
  for (const auto& p : data.patients)
    for (const auto& s : p.scans) {
      out << s.patient_id << ',' << s.seq_index << ',' << format_double(s.health_score);
      for (Eigen::Index k = 0; k < s.features.size(); ++k) out << ',' << format_double(s.features(k));
      out << '\n';
    }
  std::ofstream file(path, std::ios::binary);
  if (!file) throw Error("cannot write dataset '" + path.string() + "'");
  file << out.str();
  if (!file) throw Error("failed writing dataset '" + path.string() + "'");
}

std::array<int, 3> split_counts(int n_patients, const SplitFractions& fractions) {
  double total = 0;
  for (double f : fractions.values) {
    if (!(f >= 0)) throw ConfigError("split fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");

  std::array<int, 3> counts{};
  std::array<double, 3> remainders{};
  int assigned = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double exact = fractions.values[k] * n_patients;
    counts[k] = static_cast<int>(std::floor(exact + 1e-9));
    remainders[k] = exact - counts[k];
    assigned += counts[k];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainders[a] > remainders[b]; });
  for (std::size_t k = 0; assigned < n_patients; k = (k + 1) % 3, ++assigned) ++counts[order[k]];

  for (std::size_t k = 0; k < 3; ++k)
    if (fractions.values[k] > 0 && counts[k] == 0)
      throw ConfigError("split " + std::to_string(k) + " would receive zero patients");
  return counts;
}

DatasetSplits split_patients(const Dataset& data, const SplitFractions& fractions, std::uint64_t seed) {
  const int n = static_cast<int>(data.patients.size());
  const auto counts = split_counts(n, fractions);
  std::vector<std::size_t> order(data.patients.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  DatasetSplits out;
  Dataset* targets[3] = {&out.train, &out.val, &out.test};
  std::size_t cursor = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<std::size_t> chosen(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                                    order.begin() + static_cast<std::ptrdiff_t>(cursor + counts[k]));
    std::sort(chosen.begin(), chosen.end());
    for (std::size_t idx : chosen) targets[k]->patients.push_back(data.patients[idx]);
    cursor += static_cast<std::size_t>(counts[k]);
  }
  return out;
}

std::vector<PairExample> make_pairs(const Dataset& data, const NormalizationStats& stats, const LabelConfig& config) {
  std::vector<PairExample> pairs;
  pairs.reserve(data.pair_count());
  for (const auto& p : data.patients)
    for (std::size_t t = 0; t + 1 < p.scans.size(); ++t) {
      const auto& prev = p.scans[t];
      const auto& next = p.scans[t + 1];
      pairs.push_back(PairExample{prev, next, change_label(prev.health_score, next.health_score, stats, config)});
    }
  return pairs;
}

}  // namespace gcl
