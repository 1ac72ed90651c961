#include "doctest.h"

#include <cmath>
#include <random>

#include "gcl/grad_check.hpp"
#include "gcl/tensor.hpp"
#include "support.hpp"

using namespace gcl;
using gcl::test::uniform_vec;

namespace {

Tensor vec_tensor(const std::vector<double>& v) {
  Eigen::Map<const Eigen::RowVectorXd> m(v.data(), static_cast<Index>(v.size()));
  return Tensor::vector(m);
}

Tensor random_matrix(std::mt19937_64& rng, Index r, Index c, double lo = -1, double hi = 1) {
  const auto v = uniform_vec(rng, static_cast<std::size_t>(r * c), lo, hi);
  Matrix m(r, c);
  std::copy(v.begin(), v.end(), m.data());
  return Tensor::matrix(m);
}

}  // namespace

TEST_CASE("tensor construction validates shape against values") {
  CHECK_THROWS_AS(Tensor({2, 3}, Matrix::Zero(3, 2)), ShapeError);
  CHECK_THROWS_AS(Tensor::zeros({0}), Error);
  CHECK_THROWS_AS(Tensor::zeros({2, 2, 2}), UsageError);
  const auto t = Tensor::vector({1.0, 2.0, 3.0});
  CHECK(t.shape() == Shape{3});
  CHECK(t.size() == 3);
  CHECK(Tensor::scalar(4.0).rank() == 0);
  CHECK(Tensor::scalar(4.0).item() == 4.0);
}

TEST_CASE("forward values of basic ops") {
  Graph g;
  SUBCASE("affine with identity weights") {
    auto x = g.constant(Tensor::vector({1.0, 0.0}));
    auto W = g.constant(Tensor::matrix(Matrix::Identity(2, 2)));
    auto b = g.constant(Tensor::vector({0.0, 0.0}));
    auto y = affine(x, W, b);
    CHECK(y.shape() == Shape{2});
    CHECK(y.value()(0, 0) == 1.0);
    CHECK(y.value()(0, 1) == 0.0);
  }
  SUBCASE("sum of squares") {
    auto x = g.constant(Tensor::vector({3.0, 4.0}));
    CHECK(sum(square(x)).item() == 25.0);
  }
  SUBCASE("log after clamp at a tiny floor") {
    auto x = g.constant(Tensor::scalar(0.0));
    const double v = log(clamp(x, 1e-12, 1.0)).item();
    CHECK(v == doctest::Approx(std::log(1e-12)).epsilon(1e-15));
    CHECK(v == doctest::Approx(-27.631021115928547));
  }
  SUBCASE("softmax rows sum to one and concat joins the last axis") {
    auto x = g.constant(Tensor::matrix(Matrix{{1.0, 2.0, 3.0}, {0.0, 0.0, 0.0}}));
    auto s = softmax(x);
    CHECK(s.value().row(0).sum() == doctest::Approx(1.0));
    CHECK(s.value()(1, 2) == doctest::Approx(1.0 / 3.0));
    auto c = concat(x, x);
    CHECK(c.shape() == Shape{2, 6});
    CHECK(c.value()(0, 5) == 3.0);
  }
  SUBCASE("dot, norm, mean") {
    auto u = g.constant(Tensor::vector({1.0, 2.0, 2.0}));
    CHECK(dot(u, u).item() == 9.0);
    CHECK(norm(u).item() == 3.0);
    CHECK(mean(u).item() == doctest::Approx(5.0 / 3.0));
  }
}

TEST_CASE("shape and domain errors") {
  Graph g;
  auto a = g.constant(Tensor::vector({1.0, 2.0}));
  auto b = g.constant(Tensor::vector({1.0, 2.0, 3.0}));
  CHECK_THROWS_AS(a + b, ShapeError);
  try {
    (void)(a * b);
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("mul") != std::string::npos);
    CHECK(msg.find("[2]") != std::string::npos);
    CHECK(msg.find("[3]") != std::string::npos);
  }
  CHECK_THROWS_AS(log(g.constant(Tensor::vector({1.0, 0.0}))), DomainError);
  CHECK_THROWS_AS(sqrt(g.constant(Tensor::scalar(-1.0))), DomainError);
  auto W = g.constant(Tensor::zeros({3, 2}));
  auto bias = g.constant(Tensor::zeros({2}));
  CHECK_THROWS_AS(affine(a, W, bias), ShapeError);
}

TEST_CASE("backward basics") {
  SUBCASE("gradient of sum of squares is 2x") {
    Tensor x = Tensor::vector({3.0, 4.0}, true);
    Graph g;
    auto root = sum(square(g.leaf(x)));
    g.backward(root);
    REQUIRE(x.grad());
    CHECK((*x.grad())(0, 0) == 6.0);
    CHECK((*x.grad())(0, 1) == 8.0);
  }
  SUBCASE("constant root is a no-op") {
    Graph g;
    CHECK_NOTHROW(g.backward(g.constant(5.0)));
  }
  SUBCASE("cosine at orthogonal unit vectors") {
    Tensor u = Tensor::vector({1.0, 0.0}, true);
    Tensor v = Tensor::vector({0.0, 1.0});
    Graph g;
    auto uu = g.leaf(u);
    auto vv = g.leaf(v);
    g.backward(dot(uu, vv) / (norm(uu) * norm(vv)));
    // Central differences of cos(u, v) at this point, computed directly.
    auto cosine = [](double a, double b) { return b / std::sqrt(a * a + b * b); };
    const double h = 1e-6;
    const double d0 = (cosine(1 + h, 0) - cosine(1 - h, 0)) / (2 * h);
    const double d1 = (cosine(1, h) - cosine(1, -h)) / (2 * h);
    CHECK((*u.grad())(0, 0) == doctest::Approx(d0).epsilon(1e-8));
    CHECK((*u.grad())(0, 1) == doctest::Approx(d1).epsilon(1e-8));
    CHECK((*u.grad())(0, 1) == doctest::Approx(1.0));
    CHECK_FALSE(v.grad());
  }
  SUBCASE("non-scalar root is a usage error") {
    Tensor x = Tensor::vector({1.0, 2.0}, true);
    Graph g;
    CHECK_THROWS_AS(g.backward(square(g.leaf(x))), UsageError);
  }
  SUBCASE("second backward is a state error") {
    Tensor x = Tensor::vector({1.0, 2.0}, true);
    Graph g;
    auto root = sum(g.leaf(x));
    g.backward(root);
    CHECK_THROWS_AS(g.backward(root), StateError);
  }
  SUBCASE("gradients sum over every use") {
    Tensor x = Tensor::vector({2.0}, true);
    Graph g;
    auto xv = g.leaf(x);
    g.backward(sum(xv * xv + xv + scale(xv, 3.0)));
    CHECK((*x.grad())(0, 0) == 8.0);
  }
}

TEST_CASE("subgradient conventions at kinks") {
  Tensor x = Tensor::vector({0.0, 1.0, 2.0}, true);
  Graph g;
  auto xv = g.leaf(x);
  g.backward(sum(relu(xv)) + sum(clamp(xv, 1.0, 2.0)));
  // relu'(0) = 0; clamp' is 0 at both boundaries.
  CHECK((*x.grad())(0, 0) == 0.0);
  CHECK((*x.grad())(0, 1) == 1.0);
  CHECK((*x.grad())(0, 2) == 1.0);
}

TEST_CASE("grad_check") {
  SUBCASE("exact for a quadratic") {
    const double err = grad_check([](Graph&, const Var& x) { return sum(square(x)); },
                                  Tensor::vector({1.0, 2.0, 3.0}), 1e-6);
    CHECK(err < 1e-6);
  }
  SUBCASE("step must lie in range") {
    auto f = [](Graph&, const Var& x) { return sum(x); };
    CHECK_THROWS_AS(grad_check(f, Tensor::vector({1.0}), 1e-3), UsageError);
    CHECK_THROWS_AS(grad_check(f, Tensor::vector({1.0}), 1e-8), UsageError);
  }
  SUBCASE("non-scalar function is rejected") {
    CHECK_THROWS_AS(grad_check([](Graph&, const Var& x) { return square(x); }, Tensor::vector({1.0}), 1e-6),
                    UsageError);
  }
}

TEST_CASE("every op matches finite differences at random points away from kinks") {
  std::mt19937_64 rng(11);
  constexpr int kPoints = 100;
  constexpr double kTol = 1e-4;
  const Tensor other = random_matrix(rng, 3, 4);
  const Tensor bias = vec_tensor(uniform_vec(rng, 3, -1, 1));
  const Tensor weight = random_matrix(rng, 4, 3);

  struct Case {
    std::string name;
    std::function<Var(Graph&, const Var&)> fn;
    bool positive;  // inputs must be positive (log, sqrt)
  };
  const std::vector<Case> cases{
      {"affine", [&](Graph& g, const Var& x) { return sum(square(affine(x, g.constant(weight), g.constant(bias)))); },
       false},
      {"affine-weight",
       [&](Graph& g, const Var& x) {
         return sum(square(affine(g.constant(other), reshape(x, {4, 3}) * g.constant(weight), g.constant(Tensor::vector({0.1, 0.2, 0.3})))));
       },
       false},
      {"relu", [&](Graph& g, const Var& x) { return sum(relu(x) * g.constant(other)); }, false},
      {"tanh", [&](Graph& g, const Var& x) { return sum(tanh(x) * g.constant(other)); }, false},
      {"add-sub", [&](Graph& g, const Var& x) { return sum(square(x + g.constant(other) - x * x)); }, false},
      {"div", [&](Graph& g, const Var& x) { return sum(g.constant(other) / x); }, true},
      {"scale-shift-mean", [&](Graph&, const Var& x) { return mean(square(shift(scale(x, -2.5), 0.3))); }, false},
      {"sqrt", [&](Graph& g, const Var& x) { return sum(sqrt(x) * g.constant(other)); }, true},
      {"log", [&](Graph& g, const Var& x) { return sum(log(x) * g.constant(other)); }, true},
      {"clamp", [&](Graph& g, const Var& x) { return sum(clamp(x, -0.5, 0.5) * g.constant(other)); }, false},
      {"concat", [&](Graph& g, const Var& x) { return sum(square(concat(x, g.constant(other))) * g.constant(Tensor::matrix(Matrix::Constant(3, 8, 0.7)))); }, false},
      {"dot-norm", [&](Graph&, const Var& x) { auto r = row(x, 1); return dot(row(x, 0), r) / (norm(r) + norm(row(x, 2))); }, false},
      {"softmax", [&](Graph& g, const Var& x) { return sum(softmax(x) * g.constant(other)); }, false},
      {"log_softmax", [&](Graph& g, const Var& x) { return sum(log_softmax(x) * g.constant(other)); }, false},
  };

  for (const auto& c : cases) {
    CAPTURE(c.name);
    int tested = 0;
    double worst = 0;
    while (tested < kPoints) {
      Tensor p = c.positive ? random_matrix(rng, 3, 4, 0.2, 2.0) : random_matrix(rng, 3, 4, -1.5, 1.5);
      if (c.name == "affine-weight") p = random_matrix(rng, 4, 3, -1.5, 1.5);
      // Keep away from the relu kink at 0 and the clamp boundaries at +-0.5.
      const auto& v = p.values();
      if ((v.array().abs() < 1e-3).any() || ((v.array().abs() - 0.5).abs() < 1e-3).any()) continue;
      worst = std::max(worst, grad_check(c.fn, p, 1e-6));
      ++tested;
    }
    CHECK(worst < kTol);
  }
}

TEST_CASE("backward is linear in the root") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto values = uniform_vec(rng, 6, -2, 2);
    const double a = uniform_vec(rng, 1, -3, 3)[0], b = uniform_vec(rng, 1, -3, 3)[0];
    auto f = [](const Var& x) { return sum(tanh(x) * x); };
    auto h = [](const Var& x) { return sum(square(x)); };

    Tensor x1 = vec_tensor(values);
    x1.set_requires_grad(true);
    Graph g1;
    auto v1 = g1.leaf(x1);
    g1.backward(scale(f(v1), a) + scale(h(v1), b));

    Tensor xf = vec_tensor(values), xh = vec_tensor(values);
    xf.set_requires_grad(true);
    xh.set_requires_grad(true);
    Graph gf, gh;
    gf.backward(f(gf.leaf(xf)));
    gh.backward(h(gh.leaf(xh)));
    const Matrix expect = a * *xf.grad() + b * *xh.grad();
    CHECK((*x1.grad() - expect).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("identical inputs give bit-identical values and gradients") {
  auto run = [] {
    std::mt19937_64 rng(99);
    Tensor x = random_matrix(rng, 4, 5);
    x.set_requires_grad(true);
    Graph g;
    auto root = sum(softmax(tanh(g.leaf(x))) * g.constant(random_matrix(rng, 4, 5)));
    g.backward(root);
    return std::make_pair(root.item(), *x.grad());
  };
  const auto [v1, g1] = run();
  const auto [v2, g2] = run();
  CHECK(v1 == v2);
  CHECK(g1 == g2);
}
