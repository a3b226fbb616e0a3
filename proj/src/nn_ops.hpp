#pragma once

#include "duc/types.hpp"

#include <cmath>

namespace duc::detail {

// Vectorized GELU over a matrix; `t` receives the tanh term for the backward pass.
template <typename Scalar>
RowMatrix<Scalar> gelu(const RowMatrix<Scalar>& u, RowMatrix<Scalar>& t) {
  constexpr Scalar c = Scalar(0.7978845608028654);
  t = (c * (u.array() + Scalar(0.044715) * u.array().cube())).tanh().matrix();
  return (Scalar(0.5) * u.array() * (Scalar(1) + t.array())).matrix();
}

template <typename Scalar>
RowMatrix<Scalar> gelu_grad(const RowMatrix<Scalar>& u, const RowMatrix<Scalar>& t) {
  constexpr Scalar c = Scalar(0.7978845608028654);
  return (Scalar(0.5) * (Scalar(1) + t.array()) +
          Scalar(0.5) * u.array() * (Scalar(1) - t.array().square()) * c *
              (Scalar(1) + Scalar(3 * 0.044715) * u.array().square()))
      .matrix();
}

// Normalized rows (before gain/bias) and reciprocal standard deviations.
template <typename Scalar>
void normalize_rows(const RowMatrix<Scalar>& x, RowMatrix<Scalar>& xhat, Vector<Scalar>& rstd, double eps) {
  const auto n = x.cols();
  xhat.resize(x.rows(), n);
  rstd.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Scalar mean = x.row(r).sum() / Scalar(n);
    const auto centered = (x.row(r).array() - mean).eval();
    const Scalar var = centered.square().sum() / Scalar(n);
    rstd(r) = Scalar(1) / std::sqrt(var + Scalar(eps));
    xhat.row(r) = centered * rstd(r);
  }
}

}  // namespace duc::detail
