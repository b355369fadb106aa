#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include "covmt/errors.hpp"
#include "covmt/matrix.hpp"
#include "covmt/mtest.hpp"
#include "covmt/normal.hpp"
#include "covmt/panel.hpp"

namespace covmt::reg {

enum class BpsVariant { NSquared, Bonferroni };

/// The Bonferroni-style family size: N^2, or the number of distinct pairs.
inline double bps_family_size(int n, BpsVariant variant) {
  return variant == BpsVariant::NSquared
             ? static_cast<double>(n) * n
             : static_cast<double>(n) * (n - 1) / 2.0;
}

/// Universal critical value with an explicit family size f.
inline double bps_critical_value_f(double alpha, double f) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  if (!(f > 0.0)) throw ConfigError("family size must be positive");
  return inverse_normal_cdf(1.0 - alpha / (2.0 * f));
}

/// Universal critical value c_alpha(N) = Phi^{-1}(1 - alpha/(2 f(N))).
inline double bps_critical_value(double alpha, int n, BpsVariant variant) {
  if (n < 2) throw ConfigError("need at least 2 assets");
  return bps_critical_value_f(alpha, bps_family_size(n, variant));
}

/// Threshold rule: data-driven multiple-testing p-values, or the universal
/// critical value applied uniformly to every entry.
struct MtRule {
  mc::AdjustedPValues pvalues;
  double alpha = 0.05;
};
struct BpsRule {
  BpsVariant f_choice = BpsVariant::Bonferroni;
  double alpha = 0.05;
};
/// A precomputed cutoff on the |rho| scale, used for calibrated thresholds.
struct FixedCutoffRule {
  double cutoff = 0.0;
};
using ThresholdRule = std::variant<MtRule, BpsRule, FixedCutoffRule>;

struct Thresholded {
  SymmetricMatrix gamma;
  std::vector<char> mask;  // half-vec aligned, true = surviving entry
};

/**
 * Apply a threshold rule to a correlation matrix. An off-diagonal entry
 * survives when its criterion passes: p <= alpha for the multiple-testing
 * rule, |rho| strictly greater than T^{-1/2} c_alpha(N) for the universal
 * rule. Dropped entries become exact zeros; the diagonal stays 1.
 */
inline Thresholded threshold(const SymmetricMatrix& corr, const ThresholdRule& rule,
                             int t_len) {
  if (corr.kind() != SymmetricMatrix::Kind::Correlation)
    throw DataError("threshold expects a correlation matrix");
  const int n = corr.dim();
  const int m = half_vec_length(n);

  std::vector<char> mask(m, 0);
  if (const MtRule* mt = std::get_if<MtRule>(&rule)) {
    if (static_cast<int>(mt->pvalues.values.size()) != m)
      throw DataError("p-value vector length " +
                      std::to_string(mt->pvalues.values.size()) +
                      " does not match M = " + std::to_string(m));
    for (int ell = 0; ell < m; ++ell)
      mask[ell] = (mt->pvalues.values[ell] <= mt->alpha + 1e-12) ? 1 : 0;
  } else {
    double cutoff;
    if (const BpsRule* bps = std::get_if<BpsRule>(&rule)) {
      if (t_len < 1) throw ConfigError("universal threshold needs the sample length T");
      cutoff = bps_critical_value(bps->alpha, n, bps->f_choice) /
               std::sqrt(static_cast<double>(t_len));
    } else {
      cutoff = std::get<FixedCutoffRule>(rule).cutoff;
      if (!(cutoff >= 0.0)) throw ConfigError("fixed cutoff must be non-negative");
    }
    for (int j = 0; j < n - 1; ++j)
      for (int i = j + 1; i < n; ++i)
        mask[half_vec_index(n, i, j)] = (std::fabs(corr(i, j)) > cutoff) ? 1 : 0;
  }

  SymmetricMatrix out(n, SymmetricMatrix::Kind::Correlation);
  for (int j = 0; j < n - 1; ++j)
    for (int i = j + 1; i < n; ++i)
      if (mask[half_vec_index(n, i, j)]) out.set(i, j, corr(i, j));
  return Thresholded{std::move(out), std::move(mask)};
}

/**
 * Linear shrinkage reference matrix Gamma0 = theta* I + (1 - theta*) Gamma,
 * with the closed-form intensity computed from the off-diagonal entries and
 * clamped to [0, 1].
 */
inline std::pair<SymmetricMatrix, double> reference_matrix(const SymmetricMatrix& corr,
                                                           int t_len) {
  if (corr.kind() != SymmetricMatrix::Kind::Correlation)
    throw DataError("reference matrix expects a correlation matrix");
  if (t_len < 2) throw ConfigError("reference matrix needs T >= 2");
  const int n = corr.dim();
  const double t = static_cast<double>(t_len);

  // Sums over unordered pairs; the pair-order factor 2 cancels in the ratio.
  double num = 0.0, den_a = 0.0, den_b = 0.0;
  for (int j = 0; j < n - 1; ++j) {
    for (int i = j + 1; i < n; ++i) {
      const double r = corr(i, j);
      const double adj = r - r * (1.0 - r * r) / (2.0 * t);
      num += r * adj;
      den_a += (1.0 - r * r) * (1.0 - r * r);
      den_b += adj * adj;
    }
  }
  const double den = den_a / t + den_b;
  double theta = (den > 0.0) ? 1.0 - num / den : 1.0;
  if (theta < 0.0) theta = 0.0;
  if (theta > 1.0) theta = 1.0;

  SymmetricMatrix gamma0(n, SymmetricMatrix::Kind::Correlation);
  for (int j = 0; j < n - 1; ++j)
    for (int i = j + 1; i < n; ++i) gamma0.set(i, j, (1.0 - theta) * corr(i, j));
  return {std::move(gamma0), theta};
}

struct ShrinkResult {
  SymmetricMatrix gamma;
  double xi_star = 0.0;
  double lambda_min_before = 0.0;
  double lambda_min_after = 0.0;
};

/**
 * Shrink a (possibly indefinite) thresholded correlation matrix toward the
 * identity until it is positive definite with smallest eigenvalue at least
 * eps, picking the grid point xi in {xi0, xi0 + eps/2, ..., 1} that minimizes
 * || Gamma0^{-1} - Gamma(xi)^{-1} ||_F^2 where Gamma(xi) = xi I + (1-xi) Gamma.
 * xi0 is the smallest admissible weight, (eps - lambda_min)/(1 - lambda_min)
 * when lambda_min < eps and 0 otherwise. Ties go to the smallest xi; grid
 * points whose matrix cannot be inverted are skipped. Zero entries of the
 * input stay exactly zero.
 */
inline ShrinkResult shrink_to_pd(const SymmetricMatrix& thr,
                                 const SymmetricMatrix& gamma0, double eps = 0.01) {
  if (!(eps > 0.0 && eps <= 0.5)) throw ConfigError("eps must lie in (0, 0.5]");
  if (thr.dim() != gamma0.dim()) throw DataError("dimension mismatch in shrinkage");
  const int n = thr.dim();

  if (thr.is_identity()) {
    // Gamma(xi) = I for every xi; the objective is constant.
    return ShrinkResult{SymmetricMatrix::identity_correlation(n), 0.0, 1.0, 1.0};
  }

  const double lam_min = min_eigenvalue(thr);
  const double xi0 = (lam_min < eps) ? (eps - lam_min) / (1.0 - lam_min) : 0.0;

  Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(n, n);
  Eigen::LLT<Eigen::MatrixXd> llt0(gamma0.dense());
  if (llt0.info() != Eigen::Success)
    throw NumericError("reference matrix is not positive definite (not invertible)");
  Eigen::MatrixXd g0_inv = llt0.solve(identity);

  const Eigen::MatrixXd thr_dense = thr.dense();
  const double step = eps / 2.0;
  double best_xi = -1.0;
  double best_obj = std::numeric_limits<double>::infinity();
  for (int j = 0;; ++j) {
    double xi = xi0 + step * j;
    bool last = false;
    if (xi >= 1.0) {
      xi = 1.0;
      last = true;
    }
    Eigen::MatrixXd g = xi * identity + (1.0 - xi) * thr_dense;
    Eigen::LLT<Eigen::MatrixXd> llt(g);
    if (llt.info() == Eigen::Success) {
      const double obj = (g0_inv - llt.solve(identity)).squaredNorm();
      if (std::isfinite(obj) && obj < best_obj) {
        best_obj = obj;
        best_xi = xi;
      }
    }
    if (last) break;
  }
  if (best_xi < 0.0)
    throw NumericError("no invertible grid point found during shrinkage search");

  SymmetricMatrix out(n, SymmetricMatrix::Kind::Correlation);
  for (int j = 0; j < n - 1; ++j)
    for (int i = j + 1; i < n; ++i) {
      const double v = thr(i, j);
      if (v != 0.0) out.set(i, j, (1.0 - best_xi) * v);
    }
  const double lam_after = min_eigenvalue(out);
  return ShrinkResult{std::move(out), best_xi, lam_min, lam_after};
}

/**
 * Reassemble the covariance estimate from a regularized correlation matrix
 * and the panel's second moments about the origin.
 */
inline SymmetricMatrix assemble_covariance(const CenteredPanel& panel,
                                           const SymmetricMatrix& gamma_final) {
  const int n = gamma_final.dim();
  if (panel.n_assets() != n)
    throw DataError("panel width does not match the correlation dimension");
  const Eigen::VectorXd d = second_moments(panel.values);

  SymmetricMatrix cov(n, SymmetricMatrix::Kind::Covariance);
  for (int i = 0; i < n; ++i) {
    cov.set(i, i, d(i));
    for (int j = 0; j < i; ++j)
      cov.set(i, j, gamma_final(i, j) * std::sqrt(d(i) * d(j)));
  }
  return cov;
}

/// Full regularization output: the shrunk correlation, its covariance, the
/// surviving-entry mask, and the certificates produced along the way.
struct RegularizedCovariance {
  SymmetricMatrix correlation;
  SymmetricMatrix covariance;
  std::vector<char> sparsity_mask;
  double xi_star = 0.0;
  double lambda_min_before = 0.0;
  double lambda_min_after = 0.0;
  double theta_star = 0.0;

  double mask_density() const {
    if (sparsity_mask.empty()) return 0.0;
    int on = 0;
    for (char c : sparsity_mask) on += (c != 0);
    return static_cast<double>(on) / static_cast<double>(sparsity_mask.size());
  }
};

/// Threshold, shrink to positive definiteness, and reassemble in one pass.
inline RegularizedCovariance regularize(const CenteredPanel& panel,
                                        const SymmetricMatrix& corr,
                                        const ThresholdRule& rule, double eps = 0.01) {
  Thresholded thr = threshold(corr, rule, panel.t_len());
  auto [gamma0, theta] = reference_matrix(corr, panel.t_len());
  ShrinkResult shrunk = shrink_to_pd(thr.gamma, gamma0, eps);
  SymmetricMatrix cov = assemble_covariance(panel, shrunk.gamma);
  return RegularizedCovariance{std::move(shrunk.gamma), std::move(cov),
                               std::move(thr.mask),    shrunk.xi_star,
                               shrunk.lambda_min_before, shrunk.lambda_min_after,
                               theta};
}

}  // namespace covmt::reg
