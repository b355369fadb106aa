#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "covmt/errors.hpp"
#include "covmt/linear_shrinkage.hpp"
#include "covmt/matrix.hpp"
#include "covmt/mtest.hpp"
#include "covmt/panel.hpp"
#include "covmt/parallel.hpp"
#include "covmt/regularizer.hpp"
#include "covmt/resampler.hpp"
#include "covmt/rng.hpp"
#include "covmt/strategy.hpp"

namespace covmt::sim {

/**
 * Constant-conditional-correlation GARCH(1,1) data generating process. Each
 * asset follows sigma2_{i,t} = theta0 + theta1 r_{i,t-1}^2 + theta2
 * sigma2_{i,t-1}; returns are r_t = D_t^{1/2} C z_t with C the lower Cholesky
 * factor of the correlation matrix and z_t i.i.d. standardized innovations.
 */
struct DgpSpec {
  int n = 25;
  int t = 63;
  double delta = 0.0;  // fraction of assets with a nonzero correlation loading

  enum class Innovation { Normal, StudentT };
  Innovation innovation = Innovation::Normal;
  double nu = 6.0;  // StudentT only

  double theta0 = 0.01;
  double theta1 = 0.10;
  double theta2 = 0.85;
  int burn_in = 500;

  void validate() const {
    if (n < 2) throw ConfigError("DGP needs at least 2 assets");
    if (t < 2) throw ConfigError("DGP needs at least 2 time steps");
    if (!(delta >= 0.0 && delta <= 1.0)) throw ConfigError("delta must lie in [0, 1]");
    if (!(theta0 > 0.0) || theta1 < 0.0 || theta2 < 0.0)
      throw ConfigError("GARCH parameters must be positive (theta0) and non-negative");
    if (!(theta1 + theta2 < 1.0))
      throw ConfigError("GARCH parameters must satisfy theta1 + theta2 < 1");
    if (innovation == Innovation::StudentT && !(nu > 2.0))
      throw ConfigError("Student t innovations need nu > 2");
    if (burn_in < 0) throw ConfigError("burn-in cannot be negative");
  }

  double unconditional_variance() const { return theta0 / (1.0 - theta1 - theta2); }
};

/// The true correlation structure behind one simulated panel.
struct TrueModel {
  SymmetricMatrix correlation;
  std::vector<char> truth_mask;  // half-vec aligned, true = nonzero true correlation

  int false_null_count() const {
    int count = 0;
    for (char c : truth_mask) count += (c != 0);
    return count;
  }
};

/**
 * Draw a sparse correlation matrix Gamma = I + cc' - diag(cc'). The loading
 * vector c has floor(delta * N) nonzero entries at random positions, each
 * drawn from the triangular distribution on [0, 1] with mode 1. Off-diagonal
 * entries are c_i c_j, so the matrix is unit-diagonal and positive definite
 * whenever all |c_i| < 1.
 */
inline TrueModel build_correlation(int n, double delta, std::uint64_t corr_seed) {
  if (n < 2) throw ConfigError("need at least 2 assets");
  if (!(delta >= 0.0 && delta <= 1.0)) throw ConfigError("delta must lie in [0, 1]");

  rng::CounterStream stream(corr_seed);
  const int n_c = static_cast<int>(std::floor(delta * static_cast<double>(n)));

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (int k = 0; k < n_c; ++k) {
    const int j = k + static_cast<int>(stream.below(static_cast<std::uint64_t>(n - k)));
    std::swap(order[k], order[j]);
  }

  std::vector<double> c(n, 0.0);
  for (int k = 0; k < n_c; ++k) c[order[k]] = stream.triangular_mode1();

  SymmetricMatrix corr(n, SymmetricMatrix::Kind::Correlation);
  std::vector<char> mask(half_vec_length(n), 0);
  for (int j = 0; j < n - 1; ++j) {
    for (int i = j + 1; i < n; ++i) {
      corr.set(i, j, c[i] * c[j]);
      mask[half_vec_index(n, i, j)] = (c[i] != 0.0 && c[j] != 0.0) ? 1 : 0;
    }
  }
  return TrueModel{std::move(corr), std::move(mask)};
}

/// Unconditional covariance implied by the DGP: variances theta0/(1-theta1-theta2)
/// on the diagonal, scaled true correlations off it.
inline SymmetricMatrix true_covariance(const DgpSpec& spec, const SymmetricMatrix& corr) {
  const int n = corr.dim();
  const double v = spec.unconditional_variance();
  SymmetricMatrix cov(n, SymmetricMatrix::Kind::Covariance);
  for (int i = 0; i < n; ++i) {
    cov.set(i, i, v);
    for (int j = 0; j < i; ++j) cov.set(i, j, v * corr(i, j));
  }
  return cov;
}

/**
 * Simulate one panel from the CCC-GARCH recursion. Conditional variances
 * start at the unconditional value; the first burn_in steps are discarded.
 * Innovations are drawn time-major, asset-minor from a counter stream, so the
 * same draw_seed always yields the same panel.
 *
 * Student t innovation vectors share one chi-square mixing variable per
 * period, z_t = xi_t * sqrt((nu - 2) / W_t) with xi_t standard normal and
 * W_t chi-square(nu). This is the spherically symmetric multivariate t with
 * unit-variance margins; drawing each entry as an independent univariate t
 * would break sphericity and lose the cross-sectional tail dependence that
 * inflates extreme sample correlations.
 */
inline ReturnsPanel simulate_panel(const DgpSpec& spec, const SymmetricMatrix& corr,
                                   std::uint64_t draw_seed) {
  spec.validate();
  if (corr.dim() != spec.n)
    throw DataError("correlation dimension does not match the DGP asset count");

  Eigen::LLT<Eigen::MatrixXd> llt(corr.dense());
  if (llt.info() != Eigen::Success)
    throw NumericError("correlation matrix is not positive definite");
  const Eigen::MatrixXd chol = llt.matrixL();

  const int n = spec.n;
  const bool student = spec.innovation == DgpSpec::Innovation::StudentT;

  rng::CounterStream stream(draw_seed);
  Eigen::VectorXd sigma2 = Eigen::VectorXd::Constant(n, spec.unconditional_variance());
  Eigen::VectorXd z(n), r(n);
  Eigen::MatrixXd observations(spec.t, n);

  const int total = spec.burn_in + spec.t;
  for (int step = 0; step < total; ++step) {
    const double mix =
        student ? std::sqrt((spec.nu - 2.0) / stream.chi_square(spec.nu)) : 1.0;
    for (int i = 0; i < n; ++i) z(i) = stream.normal() * mix;
    const Eigen::VectorXd x = chol * z;
    for (int i = 0; i < n; ++i) r(i) = std::sqrt(sigma2(i)) * x(i);
    if (step >= spec.burn_in) observations.row(step - spec.burn_in) = r.transpose();
    for (int i = 0; i < n; ++i)
      sigma2(i) = spec.theta0 + spec.theta1 * r(i) * r(i) + spec.theta2 * sigma2(i);
  }

  std::vector<std::string> timestamps(spec.t);
  std::vector<std::string> assets(n);
  char buf[16];
  for (int k = 0; k < spec.t; ++k) {
    std::snprintf(buf, sizeof buf, "t%06d", k + 1);
    timestamps[k] = buf;
  }
  for (int i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof buf, "S%03d", i + 1);
    assets[i] = buf;
  }
  return ReturnsPanel::create(std::move(timestamps), std::move(assets),
                              std::move(observations));
}

/// Frobenius distance between two matrices of equal dimension.
inline double frobenius_loss(const SymmetricMatrix& a, const SymmetricMatrix& b) {
  if (a.dim() != b.dim()) throw DataError("dimension mismatch in Frobenius loss");
  return (a.dense() - b.dense()).norm();
}

/// Aggregate of one procedure over all replications. Rates are absent for
/// procedures that do not test (sample, ls); power is absent under delta = 0.
struct ProcedureOutcome {
  ProcedureSpec procedure;
  std::string label;
  std::optional<int> resolved_k;
  std::optional<double> gamma;
  std::optional<double> error_rate;
  std::optional<double> error_se;
  std::optional<double> power;
  std::optional<double> power_se;
  std::optional<double> avg_rejections;
  std::optional<double> frobenius_mean;
  std::optional<double> frobenius_se;
  int fdp_failures = 0;
};

struct ExperimentConfig {
  DgpSpec dgp;
  std::vector<ProcedureSpec> procedures;
  int replications = 2000;
  int b_total = 100;
  double alpha = 0.05;
  double shrink_eps = 0.01;
  std::uint64_t seed = 0;
  int workers = 0;
  bool with_frobenius = false;
  std::optional<double> universal_cutoff_override;  // calibrated |rho| cutoff
};

struct ExperimentResult {
  std::vector<ProcedureOutcome> outcomes;
  int replications = 0;
  int false_nulls_per_replication = 0;
};

namespace detail {

/// Mean and standard error in fixed index order, skipping absent (NaN) slots.
struct SeriesStats {
  int count = 0;
  double mean = 0.0;
  double se = 0.0;
};

inline SeriesStats summarize(const std::vector<double>& xs) {
  SeriesStats out;
  double sum = 0.0, comp = 0.0;
  for (double x : xs) {
    if (std::isnan(x)) continue;
    ++out.count;
    const double y = x - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }
  if (out.count == 0) return out;
  out.mean = sum / out.count;
  if (out.count > 1) {
    double ss = 0.0;
    for (double x : xs) {
      if (std::isnan(x)) continue;
      const double d = x - out.mean;
      ss += d * d;
    }
    out.se = std::sqrt(ss / (out.count - 1)) / std::sqrt(static_cast<double>(out.count));
  }
  return out;
}

}  // namespace detail

/**
 * The outer Monte Carlo loop: simulate a panel per replication, center it by
 * the sample mean, run every procedure against the known truth mask, and
 * aggregate error rates (k-FWER events or FDP exceedances), average power,
 * rejection counts, and optional Frobenius losses of the full regularization
 * pipeline. Replications parallelize over workers with derived seeds, so
 * results are identical for any worker count.
 */
inline ExperimentResult run_error_rate_experiment(const ExperimentConfig& cfg) {
  cfg.dgp.validate();
  if (cfg.replications < 1) throw ConfigError("need at least 1 replication");
  if (cfg.procedures.empty()) throw ConfigError("no procedures given");
  mc::validate_alpha_b(cfg.alpha, cfg.b_total);

  const int n = cfg.dgp.n;
  const int m = half_vec_length(n);
  const int reps = cfg.replications;
  const int n_procs = static_cast<int>(cfg.procedures.size());

  bool any_mt = false;
  std::vector<int> resolved_k(n_procs, 0);
  for (int p = 0; p < n_procs; ++p) {
    const ProcedureSpec& proc = cfg.procedures[p];
    if (proc.family == ProcedureSpec::Family::Ew ||
        proc.family == ProcedureSpec::Family::Vt)
      throw ConfigError("procedure '" + proc.format() +
                        "' is a portfolio weighting rule, not a covariance procedure");
    if (proc.is_mt()) {
      any_mt = true;
      if (!proc.is_fdp) resolved_k[p] = proc.resolve_k(m);
    }
    if (proc.is_bps()) resolved_k[p] = 1;
  }

  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::vector<double>> events(n_procs, std::vector<double>(reps, nan));
  std::vector<std::vector<double>> powers(n_procs, std::vector<double>(reps, nan));
  std::vector<std::vector<double>> rejections(n_procs, std::vector<double>(reps, nan));
  std::vector<std::vector<double>> losses(n_procs, std::vector<double>(reps, nan));
  std::vector<std::vector<char>> fdp_failed(n_procs, std::vector<char>(reps, 0));

  parallel_for(reps, cfg.workers, [&](int r) {
    const std::uint64_t rep_root =
        rng::derive_seed(cfg.seed, rng::domain::kReplication, static_cast<std::uint64_t>(r));
    const std::uint64_t corr_seed = rng::derive_seed(rep_root, rng::domain::kDgpCorr, 0);
    const std::uint64_t draw_seed = rng::derive_seed(rep_root, rng::domain::kDgpDraws, 0);

    const TrueModel model = build_correlation(n, cfg.dgp.delta, corr_seed);
    const ReturnsPanel panel = simulate_panel(cfg.dgp, model.correlation, draw_seed);
    const CenteredPanel centered = center(panel);
    const SymmetricMatrix corr_hat = correlation_about_origin(centered);
    const HalfVec obs_abs = abs_half_vec(vechs(corr_hat));
    const int n_false = model.false_null_count();

    std::optional<mc::NullDistribution> null;
    if (any_mt) {
      mc::ResamplingPlan plan;
      plan.B = cfg.b_total;
      plan.seed = rep_root;
      null.emplace(mc::generate_null(centered, plan, 1));
    }

    const SymmetricMatrix sigma_true = true_covariance(cfg.dgp, model.correlation);

    for (int p = 0; p < n_procs; ++p) {
      const ProcedureSpec& proc = cfg.procedures[p];

      if (proc.family == ProcedureSpec::Family::Sample) {
        if (cfg.with_frobenius) {
          const SymmetricMatrix cov = reg::assemble_covariance(centered, corr_hat);
          losses[p][r] = frobenius_loss(cov, sigma_true);
        }
        continue;
      }
      if (proc.family == ProcedureSpec::Family::Ls) {
        if (cfg.with_frobenius) {
          const SymmetricMatrix cov = reg::linear_shrinkage_covariance(centered.values);
          losses[p][r] = frobenius_loss(cov, sigma_true);
        }
        continue;
      }

      std::vector<char> mask(m, 0);
      bool failed = false;
      std::optional<reg::ThresholdRule> rule;

      if (proc.is_mt()) {
        try {
          const mc::TestSpec spec = proc.to_test_spec(m, cfg.alpha, cfg.b_total);
          mc::AdjustedPValues adj = mc::apply(spec, obs_abs, *null);
          mask = adj.rejected;
          rule = reg::MtRule{std::move(adj), cfg.alpha};
        } catch (const FdpNotProducible&) {
          failed = true;
          fdp_failed[p][r] = 1;
          rule = reg::FixedCutoffRule{1.0};  // rejects nothing
        }
      } else {
        if (cfg.universal_cutoff_override) {
          rule = reg::FixedCutoffRule{*cfg.universal_cutoff_override};
        } else {
          const auto variant = proc.family == ProcedureSpec::Family::BpsA
                                   ? reg::BpsVariant::NSquared
                                   : reg::BpsVariant::Bonferroni;
          rule = reg::BpsRule{variant, cfg.alpha};
        }
        mask = reg::threshold(corr_hat, *rule, panel.t_len()).mask;
      }

      int false_rej = 0, total_rej = 0, true_rej = 0;
      for (int ell = 0; ell < m; ++ell) {
        if (!mask[ell]) continue;
        ++total_rej;
        if (model.truth_mask[ell]) ++true_rej;
        else ++false_rej;
      }
      if (failed) {
        false_rej = 0;
        total_rej = 0;
        true_rej = 0;
      }

      if (proc.is_fdp) {
        const double fdp = static_cast<double>(false_rej) /
                           static_cast<double>(std::max(total_rej, 1));
        events[p][r] = (fdp > proc.gamma) ? 1.0 : 0.0;
      } else {
        events[p][r] = (false_rej >= resolved_k[p]) ? 1.0 : 0.0;
      }
      if (n_false > 0)
        powers[p][r] = static_cast<double>(true_rej) / static_cast<double>(n_false);
      rejections[p][r] = static_cast<double>(total_rej);

      if (cfg.with_frobenius) {
        const reg::RegularizedCovariance out =
            reg::regularize(centered, corr_hat, *rule, cfg.shrink_eps);
        losses[p][r] = frobenius_loss(out.covariance, sigma_true);
      }
    }
  });

  ExperimentResult result;
  result.replications = reps;
  {
    const int n_c = static_cast<int>(std::floor(cfg.dgp.delta * n));
    result.false_nulls_per_replication = n_c * (n_c - 1) / 2;
  }

  for (int p = 0; p < n_procs; ++p) {
    const ProcedureSpec& proc = cfg.procedures[p];
    ProcedureOutcome out;
    out.procedure = proc;
    out.label = proc.format();
    if (proc.is_mt() && !proc.is_fdp) out.resolved_k = resolved_k[p];
    if (proc.is_bps()) out.resolved_k = 1;
    if (proc.is_fdp) out.gamma = proc.gamma;

    const auto ev = detail::summarize(events[p]);
    if (ev.count > 0) {
      out.error_rate = ev.mean;
      out.error_se = std::sqrt(ev.mean * (1.0 - ev.mean) / ev.count);
    }
    const auto pw = detail::summarize(powers[p]);
    if (pw.count > 0) {
      out.power = pw.mean;
      out.power_se = pw.se;
    }
    const auto rj = detail::summarize(rejections[p]);
    if (rj.count > 0) out.avg_rejections = rj.mean;
    const auto fl = detail::summarize(losses[p]);
    if (fl.count > 0) {
      out.frobenius_mean = fl.mean;
      out.frobenius_se = fl.se;
    }
    int failures = 0;
    for (char c : fdp_failed[p]) failures += (c != 0);
    out.fdp_failures = failures;
    result.outcomes.push_back(std::move(out));
  }
  return result;
}

/**
 * Calibrated universal cutoff: the empirical (1 - alpha) quantile of the
 * per-replication maximum |rho-hat| over true-null coordinates, simulated
 * from the same DGP. Thresholding at this cutoff gives size-adjusted
 * behavior for the universal rule.
 */
inline double calibrate_universal_cutoff(const DgpSpec& dgp, int replications,
                                         double alpha, std::uint64_t seed,
                                         int workers = 0) {
  dgp.validate();
  if (replications < 1) throw ConfigError("need at least 1 replication");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");

  const int n = dgp.n;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> stats(replications, nan);

  parallel_for(replications, workers, [&](int r) {
    const std::uint64_t rep_root =
        rng::derive_seed(seed, rng::domain::kReplication, static_cast<std::uint64_t>(r));
    const std::uint64_t corr_seed = rng::derive_seed(rep_root, rng::domain::kDgpCorr, 0);
    const std::uint64_t draw_seed = rng::derive_seed(rep_root, rng::domain::kDgpDraws, 0);

    const TrueModel model = build_correlation(n, dgp.delta, corr_seed);
    const ReturnsPanel panel = simulate_panel(dgp, model.correlation, draw_seed);
    const HalfVec obs = abs_half_vec(vechs(correlation_about_origin(center(panel))));

    double max_null = -1.0;
    for (int ell = 0; ell < obs.m(); ++ell)
      if (!model.truth_mask[ell]) max_null = std::max(max_null, obs.values[ell]);
    if (max_null >= 0.0) stats[r] = max_null;
  });

  std::vector<double> kept;
  kept.reserve(stats.size());
  for (double s : stats)
    if (!std::isnan(s)) kept.push_back(s);
  if (kept.empty())
    throw ConfigError("calibration needs at least one true-null coordinate");

  std::sort(kept.begin(), kept.end());
  std::size_t idx = static_cast<std::size_t>(
      std::floor((1.0 - alpha) * static_cast<double>(kept.size())));
  if (idx >= kept.size()) idx = kept.size() - 1;
  return kept[idx];
}

}  // namespace covmt::sim
