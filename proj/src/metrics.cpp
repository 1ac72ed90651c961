#include "gcl/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "gcl/errors.hpp"

namespace gcl {

namespace {

std::string fmt(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

}  // namespace

MetricsReport compute_metrics(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size())
    throw ShapeError("compute_metrics: " + std::to_string(predictions.size()) + " predictions vs " +
                     std::to_string(labels.size()) + " labels");
  if (labels.empty()) throw UsageError("compute_metrics: no examples");

  MetricsReport r;
  r.n_examples = static_cast<int>(labels.size());
  for (std::size_t k = 0; k < labels.size(); ++k) {
    const int t = labels[k], p = predictions[k];
    if (t < 0 || t > 2 || p < 0 || p > 2) throw UsageError("compute_metrics: class index out of range");
    ++r.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
  }
  int correct = 0;
  double f1_sum = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    const int tp = r.confusion[c][c];
    int support = 0, predicted = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      support += r.confusion[c][k];
      predicted += r.confusion[k][c];
    }
    auto& s = r.per_class[c];
    s.support = support;
    s.precision = predicted > 0 ? static_cast<double>(tp) / predicted : 0.0;
    s.recall = support > 0 ? static_cast<double>(tp) / support : 0.0;
    s.f1 = (s.precision + s.recall) > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    correct += tp;
    f1_sum += s.f1;
  }
  r.accuracy = 100.0 * correct / r.n_examples;
  r.macro_f1 = f1_sum / 3.0;
  return r;
}

std::string metrics_to_text(const MetricsReport& r) {
  std::ostringstream out;
  out << "n_examples: " << r.n_examples << '\n';
  out << "accuracy: " << fmt(r.accuracy) << '\n';
  out << "macro_f1: " << fmt(r.macro_f1) << '\n';
  for (std::size_t c = 0; c < 3; ++c) {
    const auto name = to_string(static_cast<ChangeLabel>(c));
    const auto& s = r.per_class[c];
    out << name << ".precision: " << fmt(s.precision) << '\n';
    out << name << ".recall: " << fmt(s.recall) << '\n';
    out << name << ".f1: " << fmt(s.f1) << '\n';
    out << name << ".support: " << s.support << '\n';
  }
  for (std::size_t c = 0; c < 3; ++c)
    out << "confusion." << to_string(static_cast<ChangeLabel>(c)) << ": " << r.confusion[c][0] << ' '
        << r.confusion[c][1] << ' ' << r.confusion[c][2] << '\n';
  return out.str();
}

nlohmann::json metrics_to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["n_examples"] = r.n_examples;
  j["accuracy"] = r.accuracy;
  j["macro_f1"] = r.macro_f1;
  for (std::size_t c = 0; c < 3; ++c) {
    const auto& s = r.per_class[c];
    j["per_class"][to_string(static_cast<ChangeLabel>(c))] = {
        {"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}, {"support", s.support}};
  }
  j["confusion"] = r.confusion;
  return j;
}

void write_metrics(const MetricsReport& report, const std::filesystem::path& path) {
  auto stem = path;
  stem.replace_extension();
  write_file(stem.string() + ".txt", metrics_to_text(report));
  write_file(stem.string() + ".json", metrics_to_json(report).dump(2) + "\n");
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

SpearmanResult spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("spearman: coordinate lengths differ");
  if (x.size() < 2) return {0.0, true};
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t k = 0; k < rx.size(); ++k) {
    sxy += (rx[k] - mx) * (ry[k] - my);
    sxx += (rx[k] - mx) * (rx[k] - mx);
    syy += (ry[k] - my) * (ry[k] - my);
  }
  if (sxx == 0 || syy == 0) return {0.0, true};
  return {std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0), false};
}

double standard_deviation(std::span<const double> values) {
  if (values.empty()) return 0.0;
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / n);
}

double cosine_distance(const Eigen::Ref<const Eigen::RowVectorXd>& u, const Eigen::Ref<const Eigen::RowVectorXd>& v) {
  const double nu = u.norm(), nv = v.norm();
  if (nu == 0 || nv == 0) return 0.0;
  return std::clamp(1.0 - u.dot(v) / (nu * nv), 0.0, 2.0);
}

SpreadProfile embedding_spread(const Matrix& embeddings, std::span<const double> scores, std::size_t sample_size,
                               std::uint64_t seed) {
  const std::size_t n = scores.size();
  if (static_cast<std::size_t>(embeddings.rows()) != n) throw ShapeError("embedding_spread: rows vs scores mismatch");
  if (n < 2) throw UsageError("embedding_spread: needs at least 2 scans");

  const std::size_t total = n * (n - 1) / 2;
  SpreadProfile profile;
  std::vector<std::size_t> chosen(total);
  std::iota(chosen.begin(), chosen.end(), std::size_t{0});
  if (sample_size < total) {
    std::mt19937_64 rng(seed);
    for (std::size_t k = 0; k < sample_size; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, total - 1);
      std::swap(chosen[k], chosen[pick(rng)]);
    }
    chosen.resize(sample_size);
    std::sort(chosen.begin(), chosen.end());
  } else {
    profile.capped = sample_size - total;
  }

  // Pair index p enumerates (i, j), i < j, row by row.
  std::size_t i = 0, row_start = 0;
  profile.points.reserve(chosen.size());
  for (std::size_t p : chosen) {
    while (p >= row_start + (n - 1 - i)) {
      row_start += n - 1 - i;
      ++i;
    }
    const std::size_t j = i + 1 + (p - row_start);
    profile.points.push_back({std::abs(scores[i] - scores[j]), cosine_distance(embeddings.row(static_cast<Index>(i)),
                                                                              embeddings.row(static_cast<Index>(j)))});
  }

  std::vector<double> dx, dy;
  dx.reserve(profile.points.size());
  dy.reserve(profile.points.size());
  for (const auto& pt : profile.points) {
    dx.push_back(pt.delta_hs);
    dy.push_back(pt.cos_distance);
  }
  profile.distance_std = standard_deviation(dy);
  const auto s = spearman(dx, dy);
  profile.rho = s.rho;
  profile.degenerate = s.degenerate;
  return profile;
}

SpreadProfile embedding_spread(const EncoderParams& encoder, std::span<const ScanRecord> scans,
                               std::size_t sample_size, std::uint64_t seed) {
  if (scans.size() < 2) throw UsageError("embedding_spread: needs at least 2 scans");
  std::vector<double> scores;
  scores.reserve(scans.size());
  for (const auto& s : scans) scores.push_back(s.health_score);
  return embedding_spread(embed(encoder, feature_matrix(scans)), scores, sample_size, seed);
}

std::string profile_to_text(const SpreadProfile& profile) {
  std::ostringstream out;
  out << "delta_hs\tcos_distance\n";
  for (const auto& p : profile.points) out << fmt(p.delta_hs) << '\t' << fmt(p.cos_distance) << '\n';
  out << "# n_points: " << profile.points.size() << '\n';
  out << "# distance_std: " << fmt(profile.distance_std) << '\n';
  out << "# spearman_rho: " << fmt(profile.rho) << '\n';
  out << "# degenerate: " << (profile.degenerate ? 1 : 0) << '\n';
  return out.str();
}

void export_profile(const SpreadProfile& profile, const std::filesystem::path& path) {
  write_file(path, profile_to_text(profile));
}

double median(std::vector<double> values) {
  if (values.empty()) throw UsageError("median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace gcl
