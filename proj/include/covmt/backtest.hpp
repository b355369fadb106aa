#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "covmt/errors.hpp"
#include "covmt/linear_shrinkage.hpp"
#include "covmt/matrix.hpp"
#include "covmt/mtest.hpp"
#include "covmt/panel.hpp"
#include "covmt/regularizer.hpp"
#include "covmt/resampler.hpp"
#include "covmt/rng.hpp"
#include "covmt/strategy.hpp"

namespace covmt::bt {

/**
 * Global-minimum-variance weights: min w'Sw subject to sum(w) = 1, and w >= 0
 * when short sales are disallowed. The unconstrained problem has the closed
 * form S^{-1} 1 / (1' S^{-1} 1); the constrained one is solved by an
 * active-set iteration that pins negative weights to zero until the KKT
 * conditions hold.
 */
inline Eigen::VectorXd gmv_weights(const SymmetricMatrix& cov, bool allow_short) {
  const int n = cov.dim();
  const Eigen::MatrixXd s = cov.dense();
  const char* singular_msg =
      "covariance matrix is singular or indefinite; regularize it before "
      "portfolio optimization";

  if (allow_short) {
    Eigen::LLT<Eigen::MatrixXd> llt(s);
    if (llt.info() != Eigen::Success) throw NumericError(singular_msg);
    const Eigen::VectorXd x = llt.solve(Eigen::VectorXd::Ones(n));
    const double denom = x.sum();
    if (!std::isfinite(denom) || denom == 0.0) throw NumericError(singular_msg);
    return x / denom;
  }

  std::vector<char> free_set(n, 1);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
  const int max_iter = 3 * n + 10;

  for (int iter = 0; iter < max_iter; ++iter) {
    std::vector<int> idx;
    idx.reserve(n);
    for (int i = 0; i < n; ++i)
      if (free_set[i]) idx.push_back(i);
    if (idx.empty()) throw NumericError(singular_msg);
    const int f = static_cast<int>(idx.size());

    Eigen::MatrixXd sub(f, f);
    for (int a = 0; a < f; ++a)
      for (int b = 0; b < f; ++b) sub(a, b) = s(idx[a], idx[b]);
    Eigen::LLT<Eigen::MatrixXd> llt(sub);
    if (llt.info() != Eigen::Success) throw NumericError(singular_msg);
    const Eigen::VectorXd x = llt.solve(Eigen::VectorXd::Ones(f));
    const double denom = x.sum();
    if (!std::isfinite(denom) || denom <= 0.0) throw NumericError(singular_msg);

    w.setZero();
    int worst = -1;
    double worst_val = 0.0;
    for (int a = 0; a < f; ++a) {
      const double v = x(a) / denom;
      w(idx[a]) = v;
      if (v < worst_val) {
        worst_val = v;
        worst = idx[a];
      }
    }
    if (worst >= 0) {
      free_set[worst] = 0;
      continue;
    }

    // Feasible vertex; check the multipliers on the pinned weights.
    const Eigen::VectorXd grad = s * w;
    const double lambda = 1.0 / denom;
    int enter = -1;
    double enter_val = -1e-8;
    for (int i = 0; i < n; ++i) {
      if (free_set[i]) continue;
      const double mu = grad(i) - lambda;
      if (mu < enter_val) {
        enter_val = mu;
        enter = i;
      }
    }
    if (enter >= 0) {
      free_set[enter] = 1;
      continue;
    }

    for (int i = 0; i < n; ++i)
      if (w(i) < 0.0) {
        if (w(i) < -1e-10) throw NumericError("GMV weight clamp tolerance exceeded");
        w(i) = 0.0;
      }
    const double total = w.sum();
    if (!(total > 0.0)) throw NumericError(singular_msg);
    return w / total;
  }
  throw NumericError("GMV active-set iteration did not converge");
}

/**
 * Buy-and-hold drift of portfolio weights over a path of per-asset returns.
 * Each asset's weight compounds by its cumulative gross return, then the
 * vector renormalizes to sum 1.
 */
inline Eigen::VectorXd drifted_weights(const Eigen::VectorXd& weights,
                                       const Eigen::MatrixXd& returns_path) {
  const int n = static_cast<int>(weights.size());
  if (returns_path.cols() != n)
    throw DataError("returns path width does not match the weight vector");
  Eigen::VectorXd gross = Eigen::VectorXd::Ones(n);
  for (int t = 0; t < returns_path.rows(); ++t) {
    for (int i = 0; i < n; ++i) {
      const double g = 1.0 + returns_path(t, i);
      if (!(g > 0.0))
        throw NumericError("asset gross return is not positive; weight drift undefined");
      gross(i) *= g;
    }
  }
  Eigen::VectorXd out = weights.cwiseProduct(gross);
  const double total = out.sum();
  if (!(total > 0.0))
    throw NumericError("drifted portfolio value is not positive");
  return out / total;
}

/// L1 distance between the target weights and the drifted holdings.
inline double turnover(const Eigen::VectorXd& w_new, const Eigen::VectorXd& w_drifted) {
  if (w_new.size() != w_drifted.size())
    throw DataError("weight vectors differ in length");
  return (w_new - w_drifted).cwiseAbs().sum();
}

/// One day of the wealth recursion. A rebalance day pays the proportional
/// cost kappa times the turnover; other days compound cost-free.
inline double wealth_step(double wealth, const Eigen::VectorXd& weights,
                          const Eigen::VectorXd& next_returns, bool is_rebalance,
                          double to, double kappa) {
  if (!(wealth > 0.0)) throw DataError("wealth must be positive");
  if (weights.size() != next_returns.size())
    throw DataError("weights and returns differ in length");
  const double gross = 1.0 + weights.dot(next_returns);
  const double cost = is_rebalance ? (1.0 - kappa * to) : 1.0;
  return wealth * gross * cost;
}

/// Maximum peak-to-trough loss over a wealth series, in percent.
inline double max_drawdown(const std::vector<double>& wealth) {
  double peak = -std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (double v : wealth) {
    if (!(v > 0.0)) throw DataError("wealth series must be strictly positive");
    peak = std::max(peak, v);
    worst = std::max(worst, (peak - v) / peak);
  }
  return worst * 100.0;
}

enum class BaselineKind { EqualWeight, VarianceTargeting };

/// Weighting shortcuts that skip covariance estimation: equal weights, or
/// weights proportional to inverse variances over the window.
inline Eigen::VectorXd baseline_weights(BaselineKind kind, const CenteredPanel& window) {
  const int n = window.n_assets();
  if (kind == BaselineKind::EqualWeight)
    return Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));

  const Eigen::VectorXd d = second_moments(window.values);
  Eigen::VectorXd inv(n);
  for (int i = 0; i < n; ++i) {
    if (d(i) == 0.0)
      throw DataError("degenerate asset '" + window.asset_name(i) +
                      "': zero variance about the origin");
    inv(i) = 1.0 / d(i);
  }
  return inv / inv.sum();
}

struct BacktestConfig {
  int window = 252;
  int holding = 21;
  double kappa = 0.0005;
  bool short_sales = false;
  ProcedureSpec strategy;
  int initial_index = -1;  // default: window - 1, the first fully covered day
  double alpha = 0.05;
  int b_total = 100;
  double shrink_eps = 0.01;
  std::uint64_t seed = 0;
  int workers = 0;

  void validate() const {
    if (window < 2) throw ConfigError("window length must be at least 2");
    if (holding < 1) throw ConfigError("holding period must be at least 1 day");
    if (!(kappa >= 0.0)) throw ConfigError("transaction cost must be non-negative");
    if (!(shrink_eps > 0.0 && shrink_eps <= 0.5))
      throw ConfigError("eps must lie in (0, 0.5]");
    if (strategy.is_mt()) mc::validate_alpha_b(alpha, b_total);
  }
};

struct BacktestReport {
  std::string strategy_label;
  double av = 0.0;   // annualized mean net return, percent
  double sd = 0.0;   // annualized standard deviation, percent
  double ir = 0.0;   // av / sd
  double to = 0.0;   // average turnover across formations
  double mdd = 0.0;  // maximum drawdown, percent
  double tw = 1.0;   // terminal wealth

  std::vector<int> formation_indices;
  std::vector<double> turnover_series;
  std::vector<std::vector<double>> weights_history;
  std::vector<double> net_returns;
  std::vector<double> wealth;  // length net_returns + 1, starts at 1
  std::vector<double> significant_proportion;  // per formation, test strategies only
};

/// Formation days: initial_index, then every holding days while a full
/// holding period still fits inside the panel.
inline std::vector<int> formation_schedule(int t_len, int window, int holding,
                                           int initial_index) {
  const int start = (initial_index < 0) ? window - 1 : initial_index;
  if (start < window - 1)
    throw ConfigError("first formation at index " + std::to_string(start) +
                      " does not leave a full estimation window");
  std::vector<int> out;
  for (int t_b = start; t_b + holding <= t_len - 1; t_b += holding) out.push_back(t_b);
  return out;
}

namespace detail {

struct FormationDecision {
  Eigen::VectorXd weights;
  std::optional<double> significant_proportion;
};

inline FormationDecision decide_weights(const CenteredPanel& window,
                                        const BacktestConfig& cfg, int t_b) {
  using Family = ProcedureSpec::Family;
  const ProcedureSpec& proc = cfg.strategy;
  FormationDecision out;

  switch (proc.family) {
    case Family::Ew:
      out.weights = baseline_weights(BaselineKind::EqualWeight, window);
      return out;
    case Family::Vt:
      out.weights = baseline_weights(BaselineKind::VarianceTargeting, window);
      return out;
    case Family::Sample: {
      const double t = static_cast<double>(window.t_len());
      const Eigen::MatrixXd s = (window.values.transpose() * window.values) / t;
      const int n = window.n_assets();
      SymmetricMatrix cov(n, SymmetricMatrix::Kind::Covariance);
      for (int i = 0; i < n; ++i) {
        cov.set(i, i, s(i, i));
        for (int j = 0; j < i; ++j) cov.set(i, j, s(i, j));
      }
      out.weights = gmv_weights(cov, cfg.short_sales);
      return out;
    }
    case Family::Ls: {
      const SymmetricMatrix cov = reg::linear_shrinkage_covariance(window.values);
      out.weights = gmv_weights(cov, cfg.short_sales);
      return out;
    }
    default:
      break;
  }

  const SymmetricMatrix corr_hat = correlation_about_origin(window);
  const int m = half_vec_length(window.n_assets());
  reg::ThresholdRule rule = reg::FixedCutoffRule{1.0};

  if (proc.is_mt()) {
    mc::ResamplingPlan plan;
    plan.B = cfg.b_total;
    plan.seed = rng::derive_seed(cfg.seed, rng::domain::kBacktest,
                                 static_cast<std::uint64_t>(t_b));
    const mc::NullDistribution null = mc::generate_null(window, plan, cfg.workers);
    const HalfVec obs_abs = abs_half_vec(vechs(corr_hat));
    try {
      const mc::TestSpec spec = proc.to_test_spec(m, cfg.alpha, cfg.b_total);
      rule = reg::MtRule{mc::apply(spec, obs_abs, null), cfg.alpha};
    } catch (const FdpNotProducible&) {
      // No adjusted p-values producible; treat the formation as all-null.
      rule = reg::FixedCutoffRule{1.0};
    }
  } else {
    const auto variant = proc.family == Family::BpsA ? reg::BpsVariant::NSquared
                                                     : reg::BpsVariant::Bonferroni;
    rule = reg::BpsRule{variant, cfg.alpha};
  }

  const reg::RegularizedCovariance regd =
      reg::regularize(window, corr_hat, rule, cfg.shrink_eps);
  out.significant_proportion = regd.mask_density();
  out.weights = gmv_weights(regd.covariance, cfg.short_sales);
  return out;
}

}  // namespace detail

/**
 * Rolling backtest: at each formation day estimate the covariance on the
 * trailing window, solve for GMV (or baseline) weights, then hold for the
 * holding period while weights drift with realized returns. Net returns pay
 * proportional costs on rebalance days; metrics are annualized by 252.
 */
inline BacktestReport run_backtest(const ReturnsPanel& panel, const BacktestConfig& cfg) {
  cfg.validate();
  const int t_len = panel.t_len();
  if (t_len <= cfg.window + cfg.holding)
    throw DataError("panel too short: need more than window + holding rows");

  const std::vector<int> formations =
      formation_schedule(t_len, cfg.window, cfg.holding, cfg.initial_index);
  if (formations.empty()) throw DataError("no formation day fits in the panel");

  BacktestReport report;
  report.strategy_label = cfg.strategy.format();
  report.wealth.push_back(1.0);

  double wealth = 1.0;
  Eigen::VectorXd held;  // drifted holdings entering the current day
  bool first = true;

  for (int t_b : formations) {
    detail::FormationDecision decision;
    try {
      ReturnsPanel slice;
      slice.observations = panel.observations.middleRows(t_b - cfg.window + 1, cfg.window);
      slice.assets = panel.assets;
      slice.timestamps.assign(panel.timestamps.begin() + (t_b - cfg.window + 1),
                              panel.timestamps.begin() + (t_b + 1));
      decision = detail::decide_weights(center(slice), cfg, t_b);
    } catch (const ConfigError& e) {
      throw ConfigError("formation at index " + std::to_string(t_b) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("formation at index " + std::to_string(t_b) + ": " + e.what());
    } catch (const NumericError& e) {
      throw NumericError("formation at index " + std::to_string(t_b) + ": " + e.what());
    }

    const double to = first ? 0.0 : turnover(decision.weights, held);
    first = false;

    report.formation_indices.push_back(t_b);
    report.turnover_series.push_back(to);
    report.weights_history.emplace_back(decision.weights.data(),
                                        decision.weights.data() + decision.weights.size());
    if (decision.significant_proportion)
      report.significant_proportion.push_back(*decision.significant_proportion);

    Eigen::VectorXd active = decision.weights;
    for (int d = 1; d <= cfg.holding; ++d) {
      const Eigen::VectorXd day_returns = panel.observations.row(t_b + d).transpose();
      const bool rebalance_day = (d == 1);
      const double next =
          wealth_step(wealth, active, day_returns, rebalance_day, to, cfg.kappa);
      report.net_returns.push_back(next / wealth - 1.0);
      wealth = next;
      report.wealth.push_back(wealth);
      active = drifted_weights(active, day_returns.transpose());
    }
    held = active;
  }

  const int days = static_cast<int>(report.net_returns.size());
  double mean = 0.0;
  for (double r : report.net_returns) mean += r;
  mean /= days;
  double var = 0.0;
  if (days > 1) {
    for (double r : report.net_returns) var += (r - mean) * (r - mean);
    var /= (days - 1);
  }

  report.av = mean * 252.0 * 100.0;
  report.sd = std::sqrt(var) * std::sqrt(252.0) * 100.0;
  report.ir = (report.sd > 0.0) ? report.av / report.sd : 0.0;
  double to_sum = 0.0;
  for (double t : report.turnover_series) to_sum += t;
  report.to = to_sum / static_cast<double>(report.turnover_series.size());
  report.mdd = max_drawdown(report.wealth);
  report.tw = wealth;
  return report;
}

}  // namespace covmt::bt
