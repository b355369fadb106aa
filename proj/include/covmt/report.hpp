#pragma once

#include <fstream>
#include <json.hpp>
#include <ostream>
#include <string>
#include <vector>

#include "covmt/backtest.hpp"
#include "covmt/csv.hpp"
#include "covmt/errors.hpp"
#include "covmt/mtest.hpp"
#include "covmt/regularizer.hpp"
#include "covmt/simlab.hpp"

namespace covmt::io {

inline nlohmann::json pvalues_report(const mc::AdjustedPValues& adj,
                                     const std::vector<std::string>& assets,
                                     std::uint64_t seed) {
  const auto& echo = adj.criterion_used;
  nlohmann::json j;
  j["criterion"] = echo.describe();
  j["alpha"] = echo.alpha;
  j["B"] = echo.B;
  j["seed"] = seed;
  j["M"] = adj.values.size();
  j["n_assets"] = assets.size();
  j["assets"] = assets;
  if (adj.k_star)
    j["k_star"] = *adj.k_star;
  else
    j["k_star"] = nullptr;
  j["p_values"] = adj.values;
  std::vector<bool> rejected(adj.rejected.begin(), adj.rejected.end());
  j["rejected"] = rejected;
  j["rejection_count"] = adj.rejection_count();
  return j;
}

inline nlohmann::json regularize_report(const reg::RegularizedCovariance& out,
                                        const std::string& rule_label, double alpha,
                                        std::uint64_t seed, int n_assets, int t_len) {
  nlohmann::json j;
  j["rule"] = rule_label;
  j["alpha"] = alpha;
  j["seed"] = seed;
  j["n_assets"] = n_assets;
  j["t_len"] = t_len;
  j["xi_star"] = out.xi_star;
  j["theta_star"] = out.theta_star;
  j["lambda_min_before"] = out.lambda_min_before;
  j["lambda_min_after"] = out.lambda_min_after;
  j["mask_density"] = out.mask_density();
  return j;
}

inline nlohmann::json backtest_report_json(const bt::BacktestReport& report,
                                           const bt::BacktestConfig& cfg) {
  nlohmann::json j;
  j["strategy"] = report.strategy_label;
  j["window"] = cfg.window;
  j["holding"] = cfg.holding;
  j["kappa"] = cfg.kappa;
  j["short_sales"] = cfg.short_sales;
  j["alpha"] = cfg.alpha;
  j["B"] = cfg.b_total;
  j["seed"] = cfg.seed;
  j["formations"] = report.formation_indices.size();
  j["metrics"] = {{"AV", report.av}, {"SD", report.sd}, {"IR", report.ir},
                  {"TO", report.to}, {"MDD", report.mdd}, {"TW", report.tw}};
  return j;
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
}

/// Context identifying one cell of an experiment grid.
struct ExperimentCell {
  int n = 0;
  int t = 0;
  double delta = 0.0;
  std::string innovation;
};

inline void write_experiment_csv_header(std::ostream& out) {
  out << "n,t,delta,innovation,procedure,k,gamma,error_rate,error_se,power,"
         "power_se,avg_rejections,frobenius_mean,frobenius_se,fdp_failures,"
         "replications\n";
}

inline void append_experiment_rows(std::ostream& out, const ExperimentCell& cell,
                                   const sim::ExperimentResult& result) {
  const auto opt = [](const std::optional<double>& v) {
    return v ? format_double(*v) : std::string();
  };
  for (const auto& row : result.outcomes) {
    out << cell.n << ',' << cell.t << ',' << format_double(cell.delta) << ','
        << cell.innovation << ',' << row.label << ','
        << (row.resolved_k ? std::to_string(*row.resolved_k) : std::string()) << ','
        << (row.gamma ? format_double(*row.gamma) : std::string()) << ','
        << opt(row.error_rate) << ',' << opt(row.error_se) << ',' << opt(row.power)
        << ',' << opt(row.power_se) << ',' << opt(row.avg_rejections) << ','
        << opt(row.frobenius_mean) << ',' << opt(row.frobenius_se) << ','
        << row.fdp_failures << ',' << result.replications << '\n';
  }
}

/// Out-of-sample net return and wealth per day, labeled by panel timestamps.
inline void write_net_returns_csv(std::ostream& out, const bt::BacktestReport& report,
                                  const std::vector<std::string>& timestamps,
                                  int holding) {
  out << "index,date,net_return,wealth\n";
  std::size_t day = 0;
  for (int t_b : report.formation_indices) {
    for (int d = 1; d <= holding; ++d, ++day) {
      const int idx = t_b + d;
      out << idx << ',' << timestamps[idx] << ','
          << format_double(report.net_returns[day]) << ','
          << format_double(report.wealth[day + 1]) << '\n';
    }
  }
}

inline void write_proportion_csv(std::ostream& out, const bt::BacktestReport& report,
                                 const std::vector<std::string>& timestamps) {
  out << "formation_index,date,significant_proportion\n";
  for (std::size_t f = 0; f < report.significant_proportion.size(); ++f) {
    const int idx = report.formation_indices[f];
    out << idx << ',' << timestamps[idx] << ','
        << format_double(report.significant_proportion[f]) << '\n';
  }
}

inline void write_backtest_summary_csv(std::ostream& out,
                                       const std::vector<bt::BacktestReport>& reports) {
  out << "strategy,AV,SD,IR,TO,MDD,TW\n";
  for (const auto& r : reports) {
    out << r.strategy_label << ',' << format_double(r.av) << ',' << format_double(r.sd)
        << ',' << format_double(r.ir) << ',' << format_double(r.to) << ','
        << format_double(r.mdd) << ',' << format_double(r.tw) << '\n';
  }
}

}  // namespace covmt::io
