#pragma once

#include <algorithm>
#include <cmath>

#include "gcl/tensor.hpp"

namespace gcl {

/// Compares reverse-mode gradients of a scalar function against central differences.
///
/// `fn(graph, x)` must build a rank-0 result from `x`. Returns the maximum over
/// coordinates of |analytic - numeric| / max(1, |analytic|).
template <typename Scalar, typename Fn>
Scalar grad_check(Fn&& fn, const BasicTensor<Scalar>& point, Scalar h) {
  if (!(h >= Scalar(1e-7) && h <= Scalar(1e-4)))
    throw UsageError("grad_check: step h must lie in [1e-7, 1e-4]");

  BasicTensor<Scalar> x(point.shape(), point.values(), true);
  MatrixR<Scalar> analytic;
  {
    BasicGraph<Scalar> g;
    BasicVar<Scalar> out = fn(g, g.leaf(x));
    if (!out.shape().empty()) throw UsageError("grad_check: function must return a scalar, got " + to_string(out.shape()));
    g.backward(out);
    analytic = x.grad() ? *x.grad() : MatrixR<Scalar>::Zero(x.values().rows(), x.values().cols());
  }

  auto eval = [&](const MatrixR<Scalar>& values) {
    BasicTensor<Scalar> probe(point.shape(), values);
    BasicGraph<Scalar> g;
    return fn(g, g.constant(probe)).item();
  };

  Scalar worst = 0;
  MatrixR<Scalar> shifted = point.values();
  for (Index k = 0; k < shifted.size(); ++k) {
    const Scalar base = shifted.data()[k];
    shifted.data()[k] = base + h;
    const Scalar up = eval(shifted);
    shifted.data()[k] = base - h;
    const Scalar down = eval(shifted);
    shifted.data()[k] = base;
    const Scalar numeric = (up - down) / (2 * h);
    const Scalar a = analytic.data()[k];
    worst = std::max(worst, std::abs(a - numeric) / std::max(Scalar(1), std::abs(a)));
  }
  return worst;
}

}  // namespace gcl
