#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "covmt/errors.hpp"

namespace covmt {

/// Number of strictly-below-diagonal entries of an n x n matrix.
inline int half_vec_length(int n) { return n * (n - 1) / 2; }

/// Recover n from m = n(n-1)/2. Throws if m is not a triangular number.
inline int dim_from_half_vec_length(int m) {
  if (m < 0) throw DataError("half-vector length must be non-negative");
  int n = static_cast<int>((1.0 + std::sqrt(1.0 + 8.0 * static_cast<double>(m))) / 2.0);
  for (int cand = n - 1; cand <= n + 1; ++cand) {
    if (cand >= 2 && half_vec_length(cand) == m) return cand;
  }
  throw DataError("length " + std::to_string(m) +
                  " is not of the form n(n-1)/2 for any n >= 2");
}

/// Flat index of pair (i, j), i > j (0-based), in the strict half-vectorization
/// order (2,1),...,(N,1),(3,2),...,(N,N-1): column by column down the strict
/// lower triangle.
inline int half_vec_index(int n, int i, int j) {
  return j * (n - 1) - j * (j - 1) / 2 + (i - j - 1);
}

/// Inverse of half_vec_index: the (i, j) pair, i > j, stored at flat position ell.
inline std::pair<int, int> half_vec_pair(int n, int ell) {
  int j = 0;
  int offset = 0;
  while (j < n - 1) {
    int block = n - 1 - j;
    if (ell < offset + block) return {j + 1 + (ell - offset), j};
    offset += block;
    ++j;
  }
  throw DataError("half-vector index out of range");
}

/**
 * Dense symmetric matrix backed by a single physical copy of the upper
 * triangle, so symmetry holds exactly by construction. Two flavors:
 * Correlation (unit diagonal, off-diagonals in [-1, 1]) and Covariance
 * (non-negative diagonal).
 */
class SymmetricMatrix {
 public:
  enum class Kind { Correlation, Covariance };

  SymmetricMatrix(int n, Kind kind)
      : n_(n), kind_(kind), tri_(static_cast<std::size_t>(n) * (n + 1) / 2, 0.0) {
    if (n < 1) throw DataError("matrix dimension must be >= 1");
    if (kind_ == Kind::Correlation) {
      for (int i = 0; i < n_; ++i) tri_[tri_index(i, i)] = 1.0;
    }
  }

  static SymmetricMatrix identity_correlation(int n) {
    return SymmetricMatrix(n, Kind::Correlation);
  }

  int dim() const { return n_; }
  Kind kind() const { return kind_; }

  double operator()(int i, int j) const { return tri_[tri_index(i, j)]; }

  void set(int i, int j, double v) {
    if (!std::isfinite(v)) throw DataError("matrix entry must be finite");
    if (kind_ == Kind::Correlation) {
      if (i == j) {
        if (v != 1.0) throw DataError("correlation diagonal entries must be exactly 1");
      } else if (v < -1.0 || v > 1.0) {
        throw DataError("correlation off-diagonal entries must lie in [-1, 1]");
      }
    } else if (i == j && v < 0.0) {
      throw DataError("covariance diagonal entries must be non-negative");
    }
    tri_[tri_index(i, j)] = v;
  }

  Eigen::MatrixXd dense() const {
    Eigen::MatrixXd out(n_, n_);
    for (int i = 0; i < n_; ++i)
      for (int j = i; j < n_; ++j) out(i, j) = out(j, i) = tri_[tri_index(i, j)];
    return out;
  }

  bool is_identity() const {
    for (int i = 0; i < n_; ++i) {
      for (int j = i; j < n_; ++j) {
        double want = (i == j) ? 1.0 : 0.0;
        if (tri_[tri_index(i, j)] != want) return false;
      }
    }
    return true;
  }

 private:
  std::size_t tri_index(int i, int j) const {
    if (i < 0 || j < 0 || i >= n_ || j >= n_)
      throw DataError("matrix index out of range");
    if (i > j) std::swap(i, j);
    // row-major upper triangle including the diagonal
    return static_cast<std::size_t>(i) * n_ - static_cast<std::size_t>(i) * (i - 1) / 2 +
           (j - i);
  }

  int n_;
  Kind kind_;
  std::vector<double> tri_;
};

/**
 * Strict half-vectorization of a unit-diagonal symmetric matrix: the M = N(N-1)/2
 * below-diagonal entries stacked column by column. Carries the source dimension
 * so the ell <-> (i, j) map stays available.
 */
struct HalfVec {
  int n = 0;
  std::vector<double> values;

  int m() const { return static_cast<int>(values.size()); }
};

inline HalfVec vechs(const SymmetricMatrix& gamma) {
  if (gamma.kind() != SymmetricMatrix::Kind::Correlation)
    throw DataError("vechs expects a unit-diagonal (correlation) matrix");
  const int n = gamma.dim();
  HalfVec v;
  v.n = n;
  v.values.resize(half_vec_length(n));
  for (int j = 0; j < n - 1; ++j)
    for (int i = j + 1; i < n; ++i) v.values[half_vec_index(n, i, j)] = gamma(i, j);
  return v;
}

inline SymmetricMatrix fill(const HalfVec& v) {
  const int n = dim_from_half_vec_length(v.m());
  if (v.n != 0 && v.n != n)
    throw DataError("half-vector dimension tag disagrees with its length");
  SymmetricMatrix gamma(n, SymmetricMatrix::Kind::Correlation);
  for (int j = 0; j < n - 1; ++j)
    for (int i = j + 1; i < n; ++i) gamma.set(i, j, v.values[half_vec_index(n, i, j)]);
  return gamma;
}

/// Entrywise absolute values of a half-vector.
inline HalfVec abs_half_vec(const HalfVec& v) {
  HalfVec out = v;
  for (double& x : out.values) x = std::fabs(x);
  return out;
}

/// Smallest eigenvalue of a symmetric matrix via a dense symmetric eigensolver.
inline double min_eigenvalue(const SymmetricMatrix& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a.dense(),
                                                    Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success)
    throw NumericError("symmetric eigensolver failed to converge");
  return es.eigenvalues()(0);
}

}  // namespace covmt
