#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "covmt/errors.hpp"
#include "covmt/panel.hpp"
#include "covmt/parallel.hpp"
#include "covmt/rng.hpp"

namespace covmt::mc {

/**
 * Plan for one randomization run: B is the total replication count (so B - 1
 * artificial sign-flipped panels are generated), seed is the root of the
 * per-replication substreams. Signs are keyed by (seed, b, t, i) and the
 * tie-breaking uniforms by (seed, b), which makes every replication
 * order-independent: identical (seed, B, panel) gives bit-identical output
 * for any worker count.
 *
 * compact_storage stores the absolute correlations as 4-byte reals to halve
 * memory at very large M; values are widened to double when read.
 */
struct ResamplingPlan {
  int B = 100;
  std::uint64_t seed = 0;
  bool compact_storage = false;
};

/**
 * The materialized null distribution shared by every adjustment procedure:
 * a (B-1) x M matrix of |rho-tilde| values (row b = replication b) plus the
 * B tie-breaking uniforms u_1..u_B, where u_B belongs to the observed sample.
 * Immutable after construction.
 */
class NullDistribution {
 public:
  NullDistribution(int b_total, int n, bool compact)
      : b_total_(b_total), n_(n), m_(half_vec_length(n)), compact_(compact) {
    const std::size_t cells = static_cast<std::size_t>(b_total_ - 1) * m_;
    if (compact_)
      vals32_.resize(cells);
    else
      vals64_.resize(cells);
    uniforms_.resize(b_total_);
  }

  int b_total() const { return b_total_; }
  int n_assets() const { return n_; }
  int m() const { return m_; }
  bool compact() const { return compact_; }

  /// |rho-tilde| for replication b (0-based, b in 0..B-2) and hypothesis ell.
  double value(int b, int ell) const {
    const std::size_t at = static_cast<std::size_t>(b) * m_ + ell;
    return compact_ ? static_cast<double>(vals32_[at]) : vals64_[at];
  }

  /// Tie-break uniform for replication b in 0..B-2; u_obs() is the observed one.
  double uniform(int b) const { return uniforms_[b]; }
  double u_obs() const { return uniforms_[b_total_ - 1]; }

  /// Copy row b into caller storage (always as doubles).
  void copy_row(int b, std::span<double> out) const {
    const std::size_t base = static_cast<std::size_t>(b) * m_;
    if (compact_) {
      for (int ell = 0; ell < m_; ++ell) out[ell] = static_cast<double>(vals32_[base + ell]);
    } else {
      std::copy_n(vals64_.begin() + base, m_, out.begin());
    }
  }

  void set_value(int b, int ell, double v) {
    const std::size_t at = static_cast<std::size_t>(b) * m_ + ell;
    if (compact_)
      vals32_[at] = static_cast<float>(v);
    else
      vals64_[at] = v;
  }

  void set_uniform(int b, double u) { uniforms_[b] = u; }

 private:
  int b_total_;
  int n_;
  int m_;
  bool compact_;
  std::vector<double> vals64_;
  std::vector<float> vals32_;
  std::vector<double> uniforms_;
};

/**
 * Generate the null distribution for a centered panel: for b = 1..B-1 flip
 * the sign of every entry y_{i,t} independently with probability 1/2, compute
 * the correlation matrix about the origin of the flipped panel, and store the
 * absolute values of its strict half-vectorization. Entry-wise |Y-tilde| = |Y|
 * always. Tie-breaking uniforms are drawn once here and reused by every
 * downstream procedure over this distribution.
 */
inline NullDistribution generate_null(const CenteredPanel& panel,
                                      const ResamplingPlan& plan, int workers = 0) {
  if (plan.B < 2) throw ConfigError("replication count B must be at least 2");
  const int t = panel.t_len();
  const int n = panel.n_assets();
  if (n < 2) throw DataError("resampling needs at least 2 assets");

  NullDistribution null(plan.B, n, plan.compact_storage);

  // Artificial panels are independent across b; each writes a disjoint row.
  parallel_for(plan.B - 1, workers, [&](int bi) {
    const std::uint64_t b = static_cast<std::uint64_t>(bi) + 1;  // replication id 1..B-1
    Eigen::MatrixXd flipped(t, n);
    for (int tt = 0; tt < t; ++tt)
      for (int i = 0; i < n; ++i)
        flipped(tt, i) =
            rng::rademacher_sign(plan.seed, b, tt, i) * panel.values(tt, i);
    SymmetricMatrix corr = detail::correlation_about_origin_impl(flipped, &panel.assets);
    for (int j = 0; j < n - 1; ++j)
      for (int i = j + 1; i < n; ++i)
        null.set_value(bi, half_vec_index(n, i, j), std::fabs(corr(i, j)));
  });

  // Uniforms u_1..u_B, pairwise distinct (collisions redrawn deterministically).
  std::vector<double> us(plan.B);
  for (int b = 0; b < plan.B; ++b) us[b] = rng::tie_uniform(plan.seed, b);
  bool distinct = false;
  std::uint64_t attempt = 0;
  while (!distinct) {
    distinct = true;
    for (int a = 0; a < plan.B && distinct; ++a)
      for (int b = a + 1; b < plan.B; ++b)
        if (us[a] == us[b]) {
          us[b] = rng::tie_uniform(plan.seed, b, ++attempt);
          distinct = false;
          break;
        }
  }
  for (int b = 0; b < plan.B; ++b) null.set_uniform(b, us[b]);
  return null;
}

/**
 * Lexicographic rank of an observed statistic among B - 1 simulated ones:
 * rank = 1 + #{b: obs > sim_b} + #{b: obs = sim_b and u_obs > u_b}.
 * Exact float equality is intentional; the auxiliary uniforms resolve ties.
 */
inline int lexicographic_rank(double observed, std::span<const double> simulated,
                              double u_obs, std::span<const double> u_sim) {
  if (simulated.size() != u_sim.size())
    throw DataError("simulated values and uniforms must have equal length");
  int rank = 1;
  for (std::size_t b = 0; b < simulated.size(); ++b) {
    if (observed > simulated[b])
      ++rank;
    else if (observed == simulated[b] && u_obs > u_sim[b])
      ++rank;
  }
  return rank;
}

// ---- binary dump (experiment resumption) ----------------------------------

inline constexpr char kNullMagic[8] = {'C', 'V', 'M', 'T', 'N', 'U', 'L', 'L'};

/// Write a NullDistribution as magic, dims, row-major 8-byte little-endian
/// reals, then the B uniforms. Compact storage is widened on write.
inline void dump_null(const NullDistribution& null, const std::filesystem::path& path) {
  static_assert(std::endian::native == std::endian::little,
                "binary dump assumes a little-endian host");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out.write(kNullMagic, 8);
  const std::uint32_t version = 1;
  const std::uint32_t reserved = 0;
  const std::uint64_t b64 = static_cast<std::uint64_t>(null.b_total());
  const std::uint64_t n64 = static_cast<std::uint64_t>(null.n_assets());
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&reserved), 4);
  out.write(reinterpret_cast<const char*>(&b64), 8);
  out.write(reinterpret_cast<const char*>(&n64), 8);
  std::vector<double> row(null.m());
  for (int b = 0; b < null.b_total() - 1; ++b) {
    null.copy_row(b, row);
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(double)));
  }
  for (int b = 0; b < null.b_total(); ++b) {
    const double u = null.uniform(b);
    out.write(reinterpret_cast<const char*>(&u), 8);
  }
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

inline NullDistribution load_null(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  char magic[8];
  in.read(magic, 8);
  if (!in || !std::equal(magic, magic + 8, kNullMagic))
    throw DataError("'" + path.string() + "' is not a null-distribution dump");
  std::uint32_t version = 0, reserved = 0;
  std::uint64_t b64 = 0, n64 = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&reserved), 4);
  in.read(reinterpret_cast<char*>(&b64), 8);
  in.read(reinterpret_cast<char*>(&n64), 8);
  if (!in || version != 1) throw DataError("unsupported dump version");
  if (b64 < 2 || n64 < 2 || b64 > (1u << 24) || n64 > (1u << 20))
    throw DataError("implausible dimensions in dump header");
  NullDistribution null(static_cast<int>(b64), static_cast<int>(n64), false);
  std::vector<double> row(null.m());
  for (int b = 0; b < null.b_total() - 1; ++b) {
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(double)));
    for (int ell = 0; ell < null.m(); ++ell) null.set_value(b, ell, row[ell]);
  }
  for (int b = 0; b < null.b_total(); ++b) {
    double u = 0;
    in.read(reinterpret_cast<char*>(&u), 8);
    null.set_uniform(b, u);
  }
  if (!in) throw DataError("truncated dump '" + path.string() + "'");
  return null;
}

}  // namespace covmt::mc
