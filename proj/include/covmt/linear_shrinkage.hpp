#pragma once

#include <Eigen/Dense>
#include <algorithm>

#include "covmt/errors.hpp"
#include "covmt/matrix.hpp"
#include "covmt/panel.hpp"

namespace covmt::reg {

/**
 * Linear shrinkage of the sample covariance toward a scaled identity,
 * following Ledoit and Wolf (2004). Inputs are centered returns; moments are
 * taken about the origin with divisor T. The estimate is
 *
 *   S_ls = (b2/d2) m I + (1 - b2/d2) S
 *
 * with m = tr(S)/N, d2 = ||S - mI||^2, and b2 the capped estimate of the
 * sampling noise, all norms normalized by N. Always positive definite for
 * b2 > 0 since the identity component dominates the null space of S.
 */
inline SymmetricMatrix linear_shrinkage_covariance(const Eigen::MatrixXd& values) {
  const int t = static_cast<int>(values.rows());
  const int n = static_cast<int>(values.cols());
  if (t < 2) throw DataError("linear shrinkage needs at least 2 observations");
  if (n < 2) throw DataError("linear shrinkage needs at least 2 assets");
  const double td = static_cast<double>(t);
  const double nd = static_cast<double>(n);

  const Eigen::MatrixXd sample = (values.transpose() * values) / td;
  const double m = sample.trace() / nd;
  const Eigen::MatrixXd centered = sample - m * Eigen::MatrixXd::Identity(n, n);
  const double d2 = centered.squaredNorm() / nd;

  double b2_bar = 0.0;
  for (int k = 0; k < t; ++k) {
    const Eigen::VectorXd x = values.row(k).transpose();
    b2_bar += (x * x.transpose() - sample).squaredNorm() / nd;
  }
  b2_bar /= td * td;
  const double b2 = std::min(b2_bar, d2);

  SymmetricMatrix out(n, SymmetricMatrix::Kind::Covariance);
  if (d2 <= 0.0) {
    // S already equals mI; nothing to shrink.
    for (int i = 0; i < n; ++i) out.set(i, i, m);
    return out;
  }
  const double weight = b2 / d2;
  for (int i = 0; i < n; ++i) {
    out.set(i, i, weight * m + (1.0 - weight) * sample(i, i));
    for (int j = 0; j < i; ++j) out.set(i, j, (1.0 - weight) * sample(i, j));
  }
  return out;
}

}  // namespace covmt::reg
