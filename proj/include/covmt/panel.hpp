#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "covmt/errors.hpp"
#include "covmt/matrix.hpp"

namespace covmt {

/**
 * A T x N panel of asset returns with timestamp and asset labels.
 * Timestamps are opaque strings that must be strictly increasing under
 * lexicographic order (ISO-8601 dates satisfy this naturally).
 */
struct ReturnsPanel {
  std::vector<std::string> timestamps;  // length T
  std::vector<std::string> assets;      // length N
  Eigen::MatrixXd observations;         // T x N

  int t_len() const { return static_cast<int>(observations.rows()); }
  int n_assets() const { return static_cast<int>(observations.cols()); }

  static ReturnsPanel create(std::vector<std::string> timestamps,
                             std::vector<std::string> assets,
                             Eigen::MatrixXd observations) {
    const auto t = observations.rows();
    const auto n = observations.cols();
    if (n < 2) throw DataError("a returns panel needs at least 2 assets");
    if (t < 2) throw DataError("a returns panel needs at least 2 observations");
    if (static_cast<long>(timestamps.size()) != t)
      throw DataError("timestamp count does not match the number of rows");
    if (static_cast<long>(assets.size()) != n)
      throw DataError("asset label count does not match the number of columns");
    if (!observations.allFinite())
      throw DataError("panel contains non-finite return values");
    for (std::size_t k = 1; k < timestamps.size(); ++k) {
      if (!(timestamps[k - 1] < timestamps[k]))
        throw DataError("timestamps must be strictly increasing: '" +
                        timestamps[k - 1] + "' is not before '" + timestamps[k] + "'");
    }
    return ReturnsPanel{std::move(timestamps), std::move(assets), std::move(observations)};
  }
};

enum class CenteringMode { SampleMean, KnownLocation };

/**
 * A centered panel y_t = r_t - mu, where mu is either the column sample mean
 * or a caller-supplied location vector. All downstream correlation work uses
 * second moments about the origin of these values; nothing re-centers later.
 */
struct CenteredPanel {
  Eigen::MatrixXd values;  // T x N
  CenteringMode mode = CenteringMode::KnownLocation;
  Eigen::VectorXd location;            // the mu that was subtracted
  std::vector<std::string> assets;     // optional labels, may be empty

  int t_len() const { return static_cast<int>(values.rows()); }
  int n_assets() const { return static_cast<int>(values.cols()); }

  std::string asset_name(int i) const {
    if (i >= 0 && i < static_cast<int>(assets.size())) return assets[i];
    return "column " + std::to_string(i + 1);
  }
};

/// Center by the column sample means.
inline CenteredPanel center(const ReturnsPanel& panel) {
  CenteredPanel out;
  out.mode = CenteringMode::SampleMean;
  out.location = panel.observations.colwise().mean();
  out.values = panel.observations.rowwise() - out.location.transpose();
  out.assets = panel.assets;
  return out;
}

/// Center by a known location vector (per-asset mu).
inline CenteredPanel center(const ReturnsPanel& panel, const Eigen::VectorXd& location) {
  if (location.size() != panel.observations.cols())
    throw DataError("location vector length " + std::to_string(location.size()) +
                    " does not match asset count " +
                    std::to_string(panel.observations.cols()));
  CenteredPanel out;
  out.mode = CenteringMode::KnownLocation;
  out.location = location;
  out.values = panel.observations.rowwise() - location.transpose();
  out.assets = panel.assets;
  return out;
}

/// Per-asset second moments about the origin, d_i = T^{-1} sum_t y_{i,t}^2.
inline Eigen::VectorXd second_moments(const Eigen::MatrixXd& values) {
  const double t = static_cast<double>(values.rows());
  return values.colwise().squaredNorm() / t;
}

namespace detail {

/// Correlation about the origin of raw (already centered) values. Shared by
/// the public panel operation and by the sign-flip resampler, so both paths
/// produce bit-identical matrices on identical inputs.
inline SymmetricMatrix correlation_about_origin_impl(
    const Eigen::MatrixXd& values, const std::vector<std::string>* names) {
  const int t = static_cast<int>(values.rows());
  const int n = static_cast<int>(values.cols());
  if (t < 1) throw DataError("correlation needs at least one observation");
  if (n < 2) throw DataError("correlation needs at least 2 assets");

  const double td = static_cast<double>(t);
  Eigen::MatrixXd second = (values.transpose() * values) / td;  // sigma-hat matrix

  Eigen::VectorXd inv_root(n);
  for (int i = 0; i < n; ++i) {
    const double s = second(i, i);
    if (s == 0.0) {
      std::string label = (names && i < static_cast<int>(names->size()))
                              ? (*names)[i]
                              : ("column " + std::to_string(i + 1));
      throw DataError("degenerate asset '" + label +
                      "': zero variance about the origin");
    }
    inv_root(i) = 1.0 / std::sqrt(s);
  }

  SymmetricMatrix out(n, SymmetricMatrix::Kind::Correlation);
  for (int j = 0; j < n - 1; ++j) {
    for (int i = j + 1; i < n; ++i) {
      double rho = second(i, j) * inv_root(i) * inv_root(j);
      if (std::fabs(rho) > 1.0 + 1e-12)
        throw NumericError("correlation magnitude exceeded 1 beyond tolerance");
      if (rho > 1.0) rho = 1.0;
      if (rho < -1.0) rho = -1.0;
      out.set(i, j, rho);
    }
  }
  return out;
}

}  // namespace detail

/**
 * Correlation matrix about the origin: sigma_ij = T^{-1} sum_t y_i y_j with no
 * mean subtraction inside, rho_ij = sigma_ij / sqrt(sigma_ii sigma_jj).
 * The diagonal is exactly 1. A zero-variance column is a hard error naming
 * the offending asset.
 */
inline SymmetricMatrix correlation_about_origin(const CenteredPanel& panel) {
  return detail::correlation_about_origin_impl(panel.values, &panel.assets);
}

}  // namespace covmt
