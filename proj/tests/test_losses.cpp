#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "gcl/grad_check.hpp"
#include "gcl/losses.hpp"
#include "gcl/mining.hpp"
#include "support.hpp"

using namespace gcl;
namespace t = gcl::test;

namespace {

double cl_value(const t::Rows& U, const t::Vec& hs, const LossConfig& c) {
  Graph g;
  return cl_loss(g.constant(Tensor::matrix(t::to_matrix(U))), mine_batch(hs), c).item();
}

double wcl_value(const t::Rows& U, const t::Vec& hs, const LossConfig& c) {
  Graph g;
  return wcl_loss(g.constant(Tensor::matrix(t::to_matrix(U))), mine_batch(hs), hs, c).item();
}

void check_invariants(const MiningResult& m) {
  const std::size_t B = m.batch_size();
  const std::size_t half = (B - 1) / 2;
  for (std::size_t i = 0; i < B; ++i) {
    const auto& pos = m.positives[i];
    const auto& neg = m.negatives[i];
    CHECK(pos.size() == half);
    CHECK(neg.size() == half);
    double max_pos = -1, min_neg = 1e300;
    for (int j : pos) {
      CHECK(j != static_cast<int>(i));
      CHECK(std::find(neg.begin(), neg.end(), j) == neg.end());
      max_pos = std::max(max_pos, m.distance(i, static_cast<std::size_t>(j)));
    }
    for (int j : neg) {
      CHECK(j != static_cast<int>(i));
      min_neg = std::min(min_neg, m.distance(i, static_cast<std::size_t>(j)));
    }
    CHECK(max_pos <= min_neg);
  }
}

std::vector<int> sorted(std::vector<int> v) {
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

TEST_CASE("mse_loss") {
  Graph g;
  const std::vector<double> y{1.0, 3.0};
  CHECK(mse_loss<double>(y, g.constant(Tensor::vector({1.0, 3.0}))).item() == 0.0);
  CHECK(mse_loss<double>(y, g.constant(Tensor::vector({0.0, 1.0}))).item() == 5.0);
  CHECK_THROWS_AS(mse_loss<double>(y, g.constant(Tensor::vector({0.0, 1.0, 2.0}))), ShapeError);

  std::mt19937_64 rng(1);
  const auto target = t::uniform_vec(rng, 100, -3, 3);
  const auto pred = t::uniform_vec(rng, 100, -3, 3);
  const double got =
      mse_loss<double>(target, g.constant(Tensor::vector(Eigen::Map<const Eigen::RowVectorXd>(pred.data(), 100))))
          .item();
  CHECK(std::fabs(got - t::oracle_mse(target, pred)) < 1e-10);
}

TEST_CASE("similarity") {
  Graph g;
  auto u = g.constant(Tensor::vector({0.3, -1.2, 2.0}));
  CHECK(similarity(u, u, SimilarityKind::cosine, 1e-6).item() == doctest::Approx(1.0).epsilon(1e-15));
  auto a = g.constant(Tensor::vector({1.0, 0.0}));
  auto b = g.constant(Tensor::vector({-1.0, 0.0}));
  CHECK(similarity(a, b, SimilarityKind::cosine, 1e-6).item() == 1e-6);
  auto z = g.constant(Tensor::vector({0.0, 0.0}));
  auto p = g.constant(Tensor::vector({3.0, 4.0}));
  CHECK(similarity(z, p, SimilarityKind::l2, 1e-6).item() == doctest::Approx(1.0 / 6.0).epsilon(1e-15));
  CHECK_THROWS_AS(similarity(z, p, SimilarityKind::cosine, 1e-6), DomainError);
}

TEST_CASE("mine_batch examples") {
  SUBCASE("evenly spaced scores") {
    const std::vector<double> hs{100, 200, 300, 400, 500, 600, 700, 800};
    const auto m = mine_batch(hs);
    CHECK(sorted(m.positives[0]) == std::vector<int>{1, 2, 3});
    CHECK(sorted(m.negatives[0]) == std::vector<int>{5, 6, 7});
  }
  SUBCASE("all-equal scores split by index") {
    const std::vector<double> hs(5, 0.4);
    const auto m = mine_batch(hs);
    CHECK(sorted(m.positives[0]) == std::vector<int>{1, 2});
    CHECK(sorted(m.negatives[0]) == std::vector<int>{3, 4});
    check_invariants(m);
  }
  SUBCASE("batches smaller than three are rejected") {
    const std::vector<double> hs{1.0, 2.0};
    CHECK_THROWS_AS(mine_batch(hs), UsageError);
  }
}

TEST_CASE("mine_batch matches the rank-counting oracle and keeps its invariants") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> size(4, 16);
  for (int trial = 0; trial < 400; ++trial) {
    const auto B = static_cast<std::size_t>(size(rng));
    // Half the batches carry heavy ties.
    const auto hs = trial % 2 == 0 ? t::uniform_vec(rng, B, 0, 1) : t::tied_scores(rng, B, 3);
    const auto m = mine_batch(hs);
    const auto o = t::oracle_mine(hs);
    for (std::size_t i = 0; i < B; ++i) {
      CHECK(sorted(m.positives[i]) == o.pos[i]);
      CHECK(sorted(m.negatives[i]) == o.neg[i]);
    }
    check_invariants(m);
  }
}

TEST_CASE("cl_loss") {
  LossConfig c;
  SUBCASE("identical embeddings give zero") {
    const t::Rows U(6, t::Vec{0.5, -0.2, 1.0});
    CHECK(cl_value(U, {0.1, 0.5, 0.2, 0.9, 0.3, 0.7}, c) == 0.0);
  }
  SUBCASE("positives at similarity one and negatives at the floor") {
    // Scores split into two far-apart groups; each group shares one direction and
    // the groups point in opposite directions.
    const t::Vec hs{0.0, 0.01, 0.02, 0.98, 0.99, 1.0};
    const t::Rows U{{1, 0}, {1, 0}, {1, 0}, {-1, 0}, {-1, 0}, {-1, 0}};
    const auto m = mine_batch(hs);
    std::size_t negatives = 0;
    for (std::size_t i = 0; i < hs.size(); ++i) {
      for (int j : m.positives[i]) REQUIRE((i < 3) == (j < 3));
      for (int j : m.negatives[i]) REQUIRE((i < 3) != (j < 3));
      negatives += m.negatives[i].size();
    }
    const double expect = static_cast<double>(negatives) * std::log(1e-6);
    CHECK(std::fabs(cl_value(U, hs, c) - expect) < 1e-10);
    CHECK(expect == doctest::Approx(-13.815510557964274 * static_cast<double>(negatives)));
  }
  SUBCASE("hand batch of four against the scalar oracle") {
    const t::Vec hs{0.1, 0.4, 0.35, 0.9};
    const t::Rows U{{0.2, 1.0, -0.3}, {0.9, -0.4, 0.1}, {-0.5, 0.3, 0.8}, {0.4, 0.4, 0.4}};
    for (auto kind : {SimilarityKind::cosine, SimilarityKind::l2}) {
      c.similarity = kind;
      CHECK(std::fabs(cl_value(U, hs, c) - t::oracle_cl(U, t::oracle_mine(hs), c)) < 1e-10);
    }
  }
  SUBCASE("mismatched batch sizes") {
    const std::vector<double> hs{0.1, 0.2, 0.3, 0.4};
    Graph g;
    CHECK_THROWS_AS(cl_loss(g.constant(Tensor::zeros({3, 2})), mine_batch(hs), c), ShapeError);
  }
}

TEST_CASE("wcl_loss") {
  LossConfig c;
  SUBCASE("identical embeddings and identical scores") {
    const t::Rows U(5, t::Vec{1.0, 2.0});
    const t::Vec hs(5, 0.3);
    const double P = 5.0 * 2.0;
    CHECK(std::fabs(wcl_value(U, hs, c) - P * std::log(1e-2)) < 1e-10);
  }
  SUBCASE("unit weights reduce it to cl_loss") {
    std::mt19937_64 rng(3);
    LossConfig unit = c;
    unit.epsilon = 1.0;
    const t::Vec hs(7, 0.25);
    for (int trial = 0; trial < 20; ++trial) {
      const auto U = t::uniform_rows(rng, 7, 4, -1, 1);
      CHECK(std::fabs(wcl_value(U, hs, unit) - cl_value(U, hs, unit)) < 1e-10);
    }
  }
  SUBCASE("hand batch of four against the scalar oracle") {
    const t::Vec hs{0.1, 0.4, 0.35, 0.9};
    const t::Rows U{{0.2, 1.0, -0.3}, {0.9, -0.4, 0.1}, {-0.5, 0.3, 0.8}, {0.4, 0.4, 0.4}};
    for (auto kind : {SimilarityKind::cosine, SimilarityKind::l2}) {
      c.similarity = kind;
      CHECK(std::fabs(wcl_value(U, hs, c) - t::oracle_wcl(U, t::oracle_mine(hs), hs, c)) < 1e-10);
    }
  }
}

TEST_CASE("loss values match the scalar oracles on random batches") {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> size(3, 8);
  for (int trial = 0; trial < 200; ++trial) {
    const auto B = static_cast<std::size_t>(size(rng));
    const auto hs = trial % 3 == 0 ? t::tied_scores(rng, B, 4) : t::uniform_vec(rng, B, 0, 1);
    const auto U = t::uniform_rows(rng, B, 5, -2, 2);
    LossConfig c;
    c.similarity = trial % 2 ? SimilarityKind::cosine : SimilarityKind::l2;
    c.alpha = t::uniform_vec(rng, 1, 0, 2)[0];
    const auto o = t::oracle_mine(hs);
    CHECK(std::fabs(cl_value(U, hs, c) - t::oracle_cl(U, o, c)) < 1e-10);
    CHECK(std::fabs(wcl_value(U, hs, c) - t::oracle_wcl(U, o, hs, c)) < 1e-10);

    const auto pred = t::uniform_vec(rng, B, 0, 1);
    for (auto mode : {LossMode::mse, LossMode::mse_cl, LossMode::mse_wcl}) {
      c.mode = mode;
      Graph g;
      auto Uv = g.constant(Tensor::matrix(t::to_matrix(U)));
      auto pv = g.constant(Tensor::vector(Eigen::Map<const Eigen::RowVectorXd>(pred.data(), static_cast<Index>(B))));
      const double got = combined_loss<double>(hs, pv, Uv, mine_batch(hs), hs, c).item();
      double expect = t::oracle_mse(hs, pred);
      if (mode == LossMode::mse_cl) expect += c.alpha * t::oracle_cl(U, o, c);
      if (mode == LossMode::mse_wcl) expect += c.alpha * t::oracle_wcl(U, o, hs, c);
      CHECK(std::fabs(got - expect) < 1e-10);
    }
  }
}

TEST_CASE("alpha zero reduces every mode to the regression loss") {
  std::mt19937_64 rng(8);
  const auto hs = t::uniform_vec(rng, 8, 0, 1);
  const auto pred = t::uniform_vec(rng, 8, 0, 1);
  const auto U = t::uniform_rows(rng, 8, 3, -1, 1);
  LossConfig c;
  c.alpha = 0;
  auto value = [&](LossMode mode) {
    c.mode = mode;
    Graph g;
    auto pv = g.constant(Tensor::vector(Eigen::Map<const Eigen::RowVectorXd>(pred.data(), 8)));
    return combined_loss<double>(hs, pv, g.constant(Tensor::matrix(t::to_matrix(U))), mine_batch(hs), hs, c).item();
  };
  const double mse = value(LossMode::mse);
  CHECK(std::fabs(mse - t::oracle_mse(hs, pred)) < 1e-10);
  CHECK(value(LossMode::mse_cl) == mse);
  CHECK(value(LossMode::mse_wcl) == mse);
}

TEST_CASE("cross_entropy") {
  Graph g;
  const std::vector<int> labels{0, 2};
  SUBCASE("saturated correct logits") {
    auto l = g.constant(Tensor::matrix(Matrix{{1e6, 0, 0}, {0, 0, 1e6}}));
    CHECK(cross_entropy(l, labels).item() < 1e-12);
  }
  SUBCASE("uniform logits") {
    auto l = g.constant(Tensor::matrix(Matrix::Constant(2, 3, 0.7)));
    CHECK(cross_entropy(l, labels).item() == doctest::Approx(std::log(3.0)).epsilon(1e-15));
    CHECK(std::log(3.0) == doctest::Approx(1.0986).epsilon(1e-4));
  }
  SUBCASE("random batches against the scalar oracle") {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> cls(0, 2);
    for (int trial = 0; trial < 50; ++trial) {
      const auto logits = t::uniform_rows(rng, 6, 3, -4, 4);
      std::vector<int> y(6);
      for (auto& v : y) v = cls(rng);
      Graph gg;
      const double got = cross_entropy(gg.constant(Tensor::matrix(t::to_matrix(logits))), y).item();
      CHECK(std::fabs(got - t::oracle_cross_entropy(logits, y)) < 1e-10);
    }
  }
  SUBCASE("labels out of range") {
    auto l = g.constant(Tensor::matrix(Matrix::Zero(2, 3)));
    const std::vector<int> bad{0, 3};
    CHECK_THROWS_AS(cross_entropy(l, bad), UsageError);
  }
}

TEST_CASE("contrastive losses are invariant under a common row permutation") {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 50; ++trial) {
    const auto hs = t::uniform_vec(rng, 8, 0, 1);
    const auto U = t::uniform_rows(rng, 8, 4, -1, 1);
    std::vector<std::size_t> perm(8);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    t::Vec hs2;
    t::Rows U2;
    for (auto p : perm) {
      hs2.push_back(hs[p]);
      U2.push_back(U[p]);
    }
    LossConfig c;
    for (auto kind : {SimilarityKind::cosine, SimilarityKind::l2}) {
      c.similarity = kind;
      CHECK(std::fabs(cl_value(U, hs, c) - cl_value(U2, hs2, c)) < 1e-10);
      CHECK(std::fabs(wcl_value(U, hs, c) - wcl_value(U2, hs2, c)) < 1e-10);
    }
  }
}

TEST_CASE("cl_loss moves in the expected direction when one pair similarity changes") {
  // Anchor 0 has positive {1} and negative {2} among three scores; rotate one
  // embedding toward or away from the anchor, keeping similarities interior.
  const t::Vec hs{0.0, 0.1, 1.0};
  LossConfig c;
  auto at = [&](double a1, double a2) {
    const t::Rows U{{1, 0}, {std::cos(a1), std::sin(a1)}, {std::cos(a2), std::sin(a2)}};
    return cl_value(U, hs, c);
  };
  const auto m = mine_batch(hs);
  REQUIRE(m.positives[0] == std::vector<int>{1});
  REQUIRE(m.negatives[0] == std::vector<int>{2});
  // Moving 1 toward 0 raises a positive similarity and lowers the loss.
  CHECK(at(0.5, 2.0) < at(0.8, 2.0));
  // Moving 2 toward 0 raises a negative similarity and raises the loss.
  CHECK(at(0.5, 1.6) > at(0.5, 2.0));
}

TEST_CASE("cosine losses ignore a positive rescaling of the embeddings") {
  std::mt19937_64 rng(16);
  LossConfig c;
  for (int trial = 0; trial < 30; ++trial) {
    const auto hs = t::uniform_vec(rng, 6, 0, 1);
    auto U = t::uniform_rows(rng, 6, 3, -1, 1);
    const double before_cl = cl_value(U, hs, c), before_wcl = wcl_value(U, hs, c);
    const double k = t::uniform_vec(rng, 1, 0.1, 10)[0];
    for (auto& r : U)
      for (auto& x : r) x *= k;
    CHECK(std::fabs(cl_value(U, hs, c) - before_cl) < 1e-10);
    CHECK(std::fabs(wcl_value(U, hs, c) - before_wcl) < 1e-10);
  }
}

TEST_CASE("loss gradients match finite differences inside the clamp interval") {
  std::mt19937_64 rng(33);
  constexpr double kTol = 1e-4;
  int tested = 0;
  double worst = 0;
  while (tested < 100) {
    const auto hs = t::uniform_vec(rng, 6, 0, 1);
    const auto U = t::uniform_rows(rng, 6, 3, -1, 1);
    LossConfig c;
    c.similarity = tested % 2 ? SimilarityKind::cosine : SimilarityKind::l2;
    c.mode = tested % 4 < 2 ? LossMode::mse_cl : LossMode::mse_wcl;
    if (!t::sims_interior(U, t::oracle_mine(hs), c, 1e-3)) continue;
    const auto mining = mine_batch(hs);
    const auto pred = t::uniform_vec(rng, 6, 0, 1);
    auto fn = [&](Graph& g, const Var& u) {
      auto pv = g.constant(Tensor::vector(Eigen::Map<const Eigen::RowVectorXd>(pred.data(), 6)));
      return combined_loss<double>(hs, pv, u, mining, hs, c);
    };
    worst = std::max(worst, grad_check(fn, Tensor::matrix(t::to_matrix(U)), 1e-6));
    ++tested;
  }
  CHECK(worst < kTol);
}

TEST_CASE("config validation and parsing") {
  LossConfig c;
  CHECK_NOTHROW(c.validate());
  c.epsilon = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.sim_floor = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.alpha = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(parse_loss_mode("mse+wcl") == LossMode::mse_wcl);
  CHECK(parse_similarity("l2") == SimilarityKind::l2);
  CHECK_THROWS_AS(parse_loss_mode("infonce"), ConfigError);
  CHECK(to_string(LossMode::mse_cl) == "mse+cl");
}
