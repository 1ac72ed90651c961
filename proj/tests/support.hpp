#pragma once

// Shared helpers for the test binaries: seeded generators and scalar reference
// implementations that do not touch the autodiff tape.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "gcl/data.hpp"
#include "gcl/encoder.hpp"
#include "gcl/losses.hpp"
#include "gcl/mining.hpp"

namespace gcl::test {

using Vec = std::vector<double>;
using Rows = std::vector<Vec>;

inline Vec uniform_vec(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  Vec v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

inline Rows uniform_rows(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double lo, double hi) {
  Rows out;
  for (std::size_t i = 0; i < rows; ++i) out.push_back(uniform_vec(rng, cols, lo, hi));
  return out;
}

inline Matrix to_matrix(const Rows& rows) {
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  return m;
}

inline Rows to_rows(const Matrix& m) {
  Rows out(static_cast<std::size_t>(m.rows()), Vec(static_cast<std::size_t>(m.cols())));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m(i, j);
  return out;
}

/// Scores with deliberate ties: values drawn from a small grid.
inline Vec tied_scores(std::mt19937_64& rng, std::size_t n, int levels) {
  std::uniform_int_distribution<int> d(0, levels - 1);
  Vec v(n);
  for (auto& x : v) x = d(rng) / static_cast<double>(levels);
  return v;
}

// ---- mining oracle ---------------------------------------------------------
// Rank counting instead of sorting: j is a positive of i when fewer than h
// candidates precede it in (distance, index) order, a negative when at least
// B-1-h do.

struct OracleMining {
  std::vector<std::vector<int>> pos, neg;
};

inline OracleMining oracle_mine(const Vec& hs) {
  const int n = static_cast<int>(hs.size());
  const int h = (n - 1) / 2;
  OracleMining out;
  out.pos.resize(hs.size());
  out.neg.resize(hs.size());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dij = std::fabs(hs[i] - hs[j]);
      int before = 0;
      for (int k = 0; k < n; ++k) {
        if (k == i || k == j) continue;
        const double dik = std::fabs(hs[i] - hs[k]);
        if (dik < dij || (dik == dij && k < j)) ++before;
      }
      if (before < h) out.pos[i].push_back(j);
      if (before >= n - 1 - h) out.neg[i].push_back(j);
    }
  }
  return out;
}

// ---- scalar loss oracles -------------------------------------------------------

inline double oracle_mse(const Vec& y, const Vec& yhat) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - yhat[i]) * (y[i] - yhat[i]);
  return s;
}

inline double oracle_sim(const Vec& u, const Vec& v, SimilarityKind kind, double floor) {
  double raw;
  if (kind == SimilarityKind::cosine) {
    double uv = 0, uu = 0, vv = 0;
    for (std::size_t k = 0; k < u.size(); ++k) {
      uv += u[k] * v[k];
      uu += u[k] * u[k];
      vv += v[k] * v[k];
    }
    raw = (1.0 + uv / (std::sqrt(uu) * std::sqrt(vv))) / 2.0;
  } else {
    double dd = 0;
    for (std::size_t k = 0; k < u.size(); ++k) dd += (u[k] - v[k]) * (u[k] - v[k]);
    raw = 1.0 / (1.0 + std::sqrt(dd));
  }
  return std::min(1.0, std::max(floor, raw));
}

inline double oracle_cl(const Rows& U, const OracleMining& m, const LossConfig& c) {
  double total = 0;
  for (std::size_t i = 0; i < U.size(); ++i) {
    for (int j : m.neg[i]) total += std::log(oracle_sim(U[i], U[j], c.similarity, c.sim_floor));
    for (int j : m.pos[i]) total -= std::log(oracle_sim(U[i], U[j], c.similarity, c.sim_floor));
  }
  return total;
}

inline double oracle_wcl(const Rows& U, const OracleMining& m, const Vec& hs, const LossConfig& c) {
  double total = 0;
  for (std::size_t i = 0; i < U.size(); ++i) {
    for (int j : m.neg[i]) {
      const double w = std::fabs(hs[i] - hs[j]) + c.epsilon;
      total += std::log(oracle_sim(U[i], U[j], c.similarity, c.sim_floor) * w);
    }
    for (int j : m.pos[i]) {
      const double w = std::fabs(hs[i] - hs[j]) + c.epsilon;
      total -= std::log(oracle_sim(U[i], U[j], c.similarity, c.sim_floor)) / w;
    }
  }
  return total;
}

inline double oracle_cross_entropy(const Rows& logits, const std::vector<int>& labels) {
  double total = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    double m = logits[i][0];
    for (double x : logits[i]) m = std::max(m, x);
    double s = 0;
    for (double x : logits[i]) s += std::exp(x - m);
    total += m + std::log(s) - logits[i][static_cast<std::size_t>(labels[i])];
  }
  return total / static_cast<double>(logits.size());
}

/// Every similarity used by the mined pairs lies strictly inside the clamp interval.
inline bool sims_interior(const Rows& U, const OracleMining& m, const LossConfig& c, double margin) {
  for (std::size_t i = 0; i < U.size(); ++i) {
    for (const auto* set : {&m.pos[i], &m.neg[i]})
      for (int j : *set) {
        const double s = oracle_sim(U[i], U[j], c.similarity, 0.0);
        if (s <= c.sim_floor + margin || s >= 1.0 - margin) return false;
      }
  }
  return true;
}

// ---- dense reference forward ---------------------------------------------------

inline Vec oracle_layer(const Vec& x, const DenseLayer& layer) {
  const auto& W = layer.weight.values();
  const auto& b = layer.bias.values();
  Vec out(static_cast<std::size_t>(W.cols()));
  for (Index o = 0; o < W.cols(); ++o) {
    double s = b(0, o);
    for (Index k = 0; k < W.rows(); ++k) s += x[static_cast<std::size_t>(k)] * W(k, o);
    out[static_cast<std::size_t>(o)] = s;
  }
  return out;
}

/// Forward pass of an Mlp with every pre-activation reported to `pre`.
inline Vec oracle_mlp(const Mlp& net, Vec x, Vec* pre = nullptr) {
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    x = oracle_layer(x, net.layers[l]);
    if (l + 1 == net.layers.size()) break;
    for (auto& v : x) {
      if (pre) pre->push_back(v);
      v = net.activation == Activation::relu ? std::max(0.0, v) : std::tanh(v);
    }
  }
  return x;
}

/// Smallest |pre-activation| of the hidden layers over all rows.
inline double min_kink_distance(const Mlp& net, const Rows& X) {
  double best = 1e300;
  for (const auto& x : X) {
    Vec pre;
    oracle_mlp(net, x, &pre);
    for (double v : pre) best = std::min(best, std::fabs(v));
  }
  return best;
}

// ---- filesystem -------------------------------------------------------------

/// Fresh directory under the system temp dir, removed by the destructor.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("gcl_" + tag + "_" + std::to_string(rd()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace gcl::test
