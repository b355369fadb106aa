#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "covmt/errors.hpp"
#include "covmt/matrix.hpp"
#include "covmt/resampler.hpp"

namespace covmt::mc {

enum class Mode { SingleStep, StepDown };

/// k-FWER criterion: control the probability of k or more false rejections.
struct KFwer {
  int k = 1;
};

/// FDP criterion: control Pr(false discovery proportion > gamma).
struct Fdp {
  double gamma = 0.1;
};

struct TestSpec {
  std::variant<KFwer, Fdp> criterion = KFwer{1};
  Mode mode = Mode::StepDown;
  double alpha = 0.05;
  int B = 100;
};

/// alpha*B must be an integer; anything else is a configuration error.
inline void validate_alpha_b(double alpha, int b_total) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  if (b_total < 2) throw ConfigError("B must be at least 2");
  const double prod = alpha * static_cast<double>(b_total);
  if (std::fabs(prod - std::round(prod)) > 1e-9)
    throw ConfigError("alpha*B must be an integer (got alpha = " +
                      std::to_string(alpha) + ", B = " + std::to_string(b_total) + ")");
}

/// Echo of the criterion that produced a set of adjusted p-values.
struct CriterionEcho {
  enum class Kind { Unadjusted, KFwer, Fdp };
  Kind kind = Kind::Unadjusted;
  Mode mode = Mode::SingleStep;
  int k = 1;             // meaningful for KFwer
  double gamma = 0.0;    // meaningful for Fdp
  double alpha = 0.05;
  int B = 0;

  std::string describe() const {
    switch (kind) {
      case Kind::Unadjusted:
        return "unadjusted";
      case Kind::KFwer:
        return std::string(mode == Mode::SingleStep ? "ss" : "sd") + ":k=" +
               std::to_string(k);
      case Kind::Fdp: {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%s:fdp=%g",
                      mode == Mode::SingleStep ? "ss" : "sd", gamma);
        return buf;
      }
    }
    return "unknown";
  }
};

/**
 * Multiplicity-adjusted Monte Carlo p-values aligned with the strict
 * half-vectorization order. Every value is a multiple of 1/B in {1/B,...,1};
 * rejected[ell] holds exactly when values[ell] <= alpha. k_star is set by the
 * FDP search.
 */
struct AdjustedPValues {
  std::vector<double> values;
  CriterionEcho criterion_used;
  std::optional<int> k_star;
  std::vector<char> rejected;

  int rejection_count() const {
    int r = 0;
    for (char c : rejected) r += (c != 0);
    return r;
  }
};

/// k-th largest element of v, duplicates counted with multiplicity.
inline double k_max(std::span<const double> v, int k) {
  if (k < 1 || k > static_cast<int>(v.size()))
    throw ConfigError("k_max order " + std::to_string(k) +
                      " out of range for length " + std::to_string(v.size()));
  std::vector<double> scratch(v.begin(), v.end());
  std::nth_element(scratch.begin(), scratch.begin() + (k - 1), scratch.end(),
                   std::greater<double>());
  return scratch[k - 1];
}

namespace detail {

inline void check_dims(const HalfVec& obs, const NullDistribution& null) {
  if (obs.m() != null.m())
    throw DataError("observed half-vector length " + std::to_string(obs.m()) +
                    " does not match null distribution width " +
                    std::to_string(null.m()));
}

inline std::vector<char> rejected_mask(const std::vector<double>& p, double alpha) {
  std::vector<char> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = (p[i] <= alpha + 1e-12) ? 1 : 0;
  return out;
}

inline double p_from_rank(int rank, int b_total) {
  return static_cast<double>(b_total - rank + 1) / static_cast<double>(b_total);
}

}  // namespace detail

/**
 * Per-hypothesis Monte Carlo p-values with no multiplicity adjustment:
 * the lexicographic rank of |rho-hat_ell| within column ell of the null,
 * mapped through p = (B - rank + 1)/B.
 */
inline AdjustedPValues unadjusted_pvalues(const HalfVec& obs_abs,
                                          const NullDistribution& null,
                                          double alpha) {
  detail::check_dims(obs_abs, null);
  validate_alpha_b(alpha, null.b_total());
  const int m = null.m();
  const int b_count = null.b_total() - 1;
  const double u_obs = null.u_obs();

  std::vector<int> gt(m, 0), eq(m, 0);
  std::vector<double> row(m);
  for (int b = 0; b < b_count; ++b) {
    null.copy_row(b, row);
    const double u_b = null.uniform(b);
    for (int ell = 0; ell < m; ++ell) {
      const double o = obs_abs.values[ell];
      const double v = row[ell];
      if (o > v)
        ++gt[ell];
      else if (o == v && u_obs > u_b)
        ++eq[ell];
    }
  }

  AdjustedPValues out;
  out.values.resize(m);
  for (int ell = 0; ell < m; ++ell)
    out.values[ell] = detail::p_from_rank(1 + gt[ell] + eq[ell], null.b_total());
  out.criterion_used = {CriterionEcho::Kind::Unadjusted, Mode::SingleStep, 1, 0.0,
                        alpha, null.b_total()};
  out.rejected = detail::rejected_mask(out.values, alpha);
  return out;
}

/**
 * Single-step k-FWER adjustment: every |rho-hat_ell| is ranked against the
 * per-replication k-th largest absolute correlation m-tilde^k_b, using the
 * same tie-breaking uniforms as the unadjusted procedure.
 */
inline AdjustedPValues single_step(const HalfVec& obs_abs, const NullDistribution& null,
                                   int k, double alpha) {
  detail::check_dims(obs_abs, null);
  validate_alpha_b(alpha, null.b_total());
  const int m = null.m();
  if (k < 1 || k > m)
    throw ConfigError("k = " + std::to_string(k) + " out of range 1.." +
                      std::to_string(m));
  const int b_count = null.b_total() - 1;
  const double u_obs = null.u_obs();

  std::vector<double> stat(b_count), row(m);
  for (int b = 0; b < b_count; ++b) {
    null.copy_row(b, row);
    stat[b] = k_max(row, k);
  }

  AdjustedPValues out;
  out.values.resize(m);
  for (int ell = 0; ell < m; ++ell) {
    const double o = obs_abs.values[ell];
    int rank = 1;
    for (int b = 0; b < b_count; ++b) {
      if (o > stat[b])
        ++rank;
      else if (o == stat[b] && u_obs > null.uniform(b))
        ++rank;
    }
    out.values[ell] = detail::p_from_rank(rank, null.b_total());
  }
  out.criterion_used = {CriterionEcho::Kind::KFwer, Mode::SingleStep, k, 0.0, alpha,
                        null.b_total()};
  out.rejected = detail::rejected_mask(out.values, alpha);
  return out;
}

/**
 * Step-down k-FWER adjustment. Hypotheses are ordered by decreasing observed
 * |rho-hat| (ties broken by ascending original index). For each replication
 * the first k positions are pinned to the row k-max; later positions refine
 * it through successive maxima computed bottom-up, m^k_ell = min(m^k_{ell-1},
 * v_ell) with v_ell the maximum of the row over positions ell..M. Ranks turn
 * into p-values, monotonicity is enforced along the ordering, and the result
 * is mapped back to original indices.
 */
inline AdjustedPValues step_down(const HalfVec& obs_abs, const NullDistribution& null,
                                 int k, double alpha) {
  detail::check_dims(obs_abs, null);
  validate_alpha_b(alpha, null.b_total());
  const int m = null.m();
  if (k < 1 || k > m)
    throw ConfigError("k = " + std::to_string(k) + " out of range 1.." +
                      std::to_string(m));
  const int b_count = null.b_total() - 1;
  const double u_obs = null.u_obs();

  std::vector<int> pi(m);
  std::iota(pi.begin(), pi.end(), 0);
  std::sort(pi.begin(), pi.end(), [&](int a, int b) {
    if (obs_abs.values[a] != obs_abs.values[b])
      return obs_abs.values[a] > obs_abs.values[b];
    return a < b;
  });
  std::vector<double> obs_sorted(m);
  for (int ell = 0; ell < m; ++ell) obs_sorted[ell] = obs_abs.values[pi[ell]];

  std::vector<int> gt(m, 0), eq(m, 0);
  std::vector<double> row(m), suffix_max(m);
  for (int b = 0; b < b_count; ++b) {
    null.copy_row(b, row);
    const double u_b = null.uniform(b);
    const double kth = k_max(row, k);
    suffix_max[m - 1] = row[pi[m - 1]];
    for (int ell = m - 2; ell >= 0; --ell)
      suffix_max[ell] = std::max(suffix_max[ell + 1], row[pi[ell]]);
    double stat = kth;
    for (int ell = 0; ell < m; ++ell) {
      if (ell >= k) stat = std::min(stat, suffix_max[ell]);
      const double o = obs_sorted[ell];
      if (o > stat)
        ++gt[ell];
      else if (o == stat && u_obs > u_b)
        ++eq[ell];
    }
  }

  std::vector<double> p_sorted(m);
  for (int ell = 0; ell < m; ++ell)
    p_sorted[ell] = detail::p_from_rank(1 + gt[ell] + eq[ell], null.b_total());
  for (int ell = k; ell < m; ++ell)
    p_sorted[ell] = std::max(p_sorted[ell - 1], p_sorted[ell]);

  AdjustedPValues out;
  out.values.resize(m);
  for (int ell = 0; ell < m; ++ell) out.values[pi[ell]] = p_sorted[ell];
  out.criterion_used = {CriterionEcho::Kind::KFwer, Mode::StepDown, k, 0.0, alpha,
                        null.b_total()};
  out.rejected = detail::rejected_mask(out.values, alpha);
  return out;
}

namespace detail {

inline AdjustedPValues kfwer_apply(const HalfVec& obs_abs, const NullDistribution& null,
                                   int k, Mode mode, double alpha, int* eval_count) {
  if (eval_count) ++*eval_count;
  return mode == Mode::SingleStep ? single_step(obs_abs, null, k, alpha)
                                  : step_down(obs_abs, null, k, alpha);
}

inline void stamp_fdp(AdjustedPValues& res, Mode mode, double gamma, double alpha,
                      int b_total, int k_star) {
  res.criterion_used = {CriterionEcho::Kind::Fdp, mode, k_star, gamma, alpha, b_total};
  res.k_star = k_star;
}

}  // namespace detail

/**
 * FDP-adjusted p-values by forward search: apply the chosen k-FWER procedure
 * for k = 1, 2, ... over the SAME null distribution, stop as soon as
 * k > gamma*(R_k + 1) where R_k counts rejections at level alpha, and report
 * the last passing k as k*. gamma = 0 reduces to the k = 1 output. Stopping
 * at k = 1 with gamma > 0 means FDP-adjusted p-values cannot be produced,
 * raised as a typed error carrying R_1 and gamma.
 */
inline AdjustedPValues fdp_sequential(const HalfVec& obs_abs,
                                      const NullDistribution& null, double gamma,
                                      Mode mode, double alpha,
                                      int* eval_count = nullptr) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
  const int m = null.m();

  AdjustedPValues res = detail::kfwer_apply(obs_abs, null, 1, mode, alpha, eval_count);
  int r = res.rejection_count();
  if (1.0 > gamma * (r + 1)) {
    if (gamma == 0.0) {
      detail::stamp_fdp(res, mode, gamma, alpha, null.b_total(), 1);
      return res;
    }
    throw FdpNotProducible(r, gamma);
  }

  int k_prev = 1;
  while (k_prev < m) {
    const int k = k_prev + 1;
    AdjustedPValues next = detail::kfwer_apply(obs_abs, null, k, mode, alpha, eval_count);
    const int r_k = next.rejection_count();
    if (static_cast<double>(k) > gamma * (r_k + 1)) {
      detail::stamp_fdp(res, mode, gamma, alpha, null.b_total(), k_prev);
      return res;
    }
    res = std::move(next);
    k_prev = k;
  }
  // k cannot exceed M; the k = M output is the most liberal admissible one.
  detail::stamp_fdp(res, mode, gamma, alpha, null.b_total(), m);
  return res;
}

/**
 * FDP-adjusted p-values by bisection on k over [1, M], maintaining the
 * invariant that the lower bracket stays feasible, then finishing with the
 * forward search from the bracket (at most two further k-FWER evaluations).
 * Output is identical to fdp_sequential over the same null distribution.
 */
inline AdjustedPValues fdp_bisection(const HalfVec& obs_abs,
                                     const NullDistribution& null, double gamma,
                                     Mode mode, double alpha,
                                     int* eval_count = nullptr) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
  const int m = null.m();

  int k_l = 1;
  int k_r = m;
  while (k_r - k_l > 1) {
    const int k_m = (k_l + k_r) / 2;
    AdjustedPValues probe =
        detail::kfwer_apply(obs_abs, null, k_m, mode, alpha, eval_count);
    const int r_m = probe.rejection_count();
    if (static_cast<double>(k_m) <= gamma * (r_m + 1))
      k_l = k_m;
    else
      k_r = k_m;
  }

  AdjustedPValues res = detail::kfwer_apply(obs_abs, null, k_l, mode, alpha, eval_count);
  int r_l = res.rejection_count();
  if (static_cast<double>(k_l) > gamma * (r_l + 1)) {
    // Only reachable at k_l = 1: a feasible k_l > 1 was verified during
    // bracketing and the null distribution is immutable.
    if (gamma == 0.0) {
      detail::stamp_fdp(res, mode, gamma, alpha, null.b_total(), 1);
      return res;
    }
    throw FdpNotProducible(r_l, gamma);
  }

  int k_prev = k_l;
  while (k_prev < m) {
    const int k = k_prev + 1;
    AdjustedPValues next = detail::kfwer_apply(obs_abs, null, k, mode, alpha, eval_count);
    const int r_k = next.rejection_count();
    if (static_cast<double>(k) > gamma * (r_k + 1)) {
      detail::stamp_fdp(res, mode, gamma, alpha, null.b_total(), k_prev);
      return res;
    }
    res = std::move(next);
    k_prev = k;
  }
  detail::stamp_fdp(res, mode, gamma, alpha, null.b_total(), m);
  return res;
}

/// Dispatch a TestSpec against a null distribution.
inline AdjustedPValues apply(const TestSpec& spec, const HalfVec& obs_abs,
                             const NullDistribution& null) {
  validate_alpha_b(spec.alpha, spec.B);
  if (spec.B != null.b_total())
    throw ConfigError("TestSpec B = " + std::to_string(spec.B) +
                      " does not match the null distribution's B = " +
                      std::to_string(null.b_total()));
  if (const KFwer* kf = std::get_if<KFwer>(&spec.criterion)) {
    return spec.mode == Mode::SingleStep
               ? single_step(obs_abs, null, kf->k, spec.alpha)
               : step_down(obs_abs, null, kf->k, spec.alpha);
  }
  const Fdp& fdp = std::get<Fdp>(spec.criterion);
  return fdp_bisection(obs_abs, null, fdp.gamma, spec.mode, spec.alpha);
}

}  // namespace covmt::mc
