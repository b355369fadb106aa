#include <CLI11.hpp>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <string>
#include <vector>

#include "covmt/backtest.hpp"
#include "covmt/csv.hpp"
#include "covmt/errors.hpp"
#include "covmt/matrix.hpp"
#include "covmt/mtest.hpp"
#include "covmt/panel.hpp"
#include "covmt/regularizer.hpp"
#include "covmt/report.hpp"
#include "covmt/resampler.hpp"
#include "covmt/rng.hpp"
#include "covmt/simlab.hpp"
#include "covmt/strategy.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw covmt::ConfigError("cannot open config file '" + path + "'");
  json cfg;
  try {
    cfg = json::parse(in);
  } catch (const json::parse_error& e) {
    throw covmt::ConfigError("config file '" + path + "': " + e.what());
  }
  if (!cfg.is_object())
    throw covmt::ConfigError("config file '" + path + "' must hold a JSON object");
  return cfg;
}

/// Config values fill in only where the flag was not given; flags win.
template <typename T>
void merge_key(CLI::App* cmd, const std::string& flag, const json& cfg,
               const char* key, T& var) {
  if (cmd->count(flag) > 0) return;
  if (!cfg.contains(key)) return;
  try {
    var = cfg.at(key).get<T>();
  } catch (const json::exception& e) {
    throw covmt::ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

struct CommonOpts {
  std::string config_path;
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  int workers = 0;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path,
                  "JSON config file with flat keys; command-line flags win");
  cmd->add_option("--out", o.out_dir, "output directory, created if absent");
  cmd->add_option("--seed", o.seed, "root seed for all randomness");
  cmd->add_option("--workers", o.workers, "worker threads, 0 = all logical cores");
}

void merge_common(CLI::App* cmd, const json& cfg, CommonOpts& o) {
  merge_key(cmd, "--out", cfg, "out", o.out_dir);
  merge_key(cmd, "--seed", cfg, "seed", o.seed);
  merge_key(cmd, "--workers", cfg, "workers", o.workers);
}

std::string out_path(const CommonOpts& o, const std::string& name) {
  fs::create_directories(o.out_dir);
  return (fs::path(o.out_dir) / name).string();
}

void append_run_log(const CommonOpts& o, const std::string& command, double seconds) {
  std::ofstream log(fs::path(o.out_dir) / "run.log", std::ios::app);
  const std::time_t now = std::time(nullptr);
  char stamp[32] = "?";
  if (std::tm tm_buf; localtime_r(&now, &tm_buf))
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%S", &tm_buf);
  log << stamp << ' ' << command << " wall_seconds=" << seconds << '\n';
}

void note(const std::string& path) { std::cout << "wrote " << path << '\n'; }

struct AdjustOpts {
  std::string input;
  std::string procedure = "sd:k=1";
  double alpha = 0.05;
  int b_total = 100;
};

void run_adjust(const CommonOpts& common, const AdjustOpts& opts) {
  if (opts.input.empty()) throw covmt::ConfigError("no input CSV given");
  const covmt::ReturnsPanel panel = covmt::io::read_panel_csv_file(opts.input);
  const covmt::CenteredPanel centered = covmt::center(panel);
  const covmt::SymmetricMatrix corr = covmt::correlation_about_origin(centered);
  const covmt::HalfVec obs = covmt::abs_half_vec(covmt::vechs(corr));

  covmt::mc::ResamplingPlan plan;
  plan.B = opts.b_total;
  plan.seed = common.seed;
  const covmt::mc::NullDistribution null =
      covmt::mc::generate_null(centered, plan, common.workers);

  covmt::mc::AdjustedPValues adj;
  if (opts.procedure == "unadjusted") {
    covmt::mc::validate_alpha_b(opts.alpha, opts.b_total);
    adj = covmt::mc::unadjusted_pvalues(obs, null, opts.alpha);
  } else {
    const covmt::ProcedureSpec proc = covmt::ProcedureSpec::parse(opts.procedure);
    if (!proc.is_mt())
      throw covmt::ConfigError("adjust-pvalues needs 'unadjusted' or a ss/sd procedure, got '" +
                               opts.procedure + "'");
    adj = covmt::mc::apply(proc.to_test_spec(obs.m(), opts.alpha, opts.b_total), obs, null);
  }

  const std::string json_path = out_path(common, "pvalues.json");
  covmt::io::write_json_file(json_path,
                             covmt::io::pvalues_report(adj, panel.assets, common.seed));
  note(json_path);

  const int n = panel.n_assets();
  Eigen::MatrixXd pm = Eigen::MatrixXd::Zero(n, n);
  for (int ell = 0; ell < obs.m(); ++ell) {
    const auto [i, j] = covmt::half_vec_pair(n, ell);
    pm(i, j) = pm(j, i) = adj.values[ell];
  }
  const std::string matrix_path = out_path(common, "pvalue_matrix.csv");
  covmt::io::write_dense_matrix_csv_file(matrix_path, panel.assets, pm);
  note(matrix_path);
}

struct RegularizeOpts {
  std::string input;
  std::string rule = "sd:k=1";
  double alpha = 0.05;
  int b_total = 100;
  double eps = 0.01;
};

void run_regularize(const CommonOpts& common, const RegularizeOpts& opts) {
  if (opts.input.empty()) throw covmt::ConfigError("no input CSV given");
  const covmt::ReturnsPanel panel = covmt::io::read_panel_csv_file(opts.input);
  const covmt::CenteredPanel centered = covmt::center(panel);
  const covmt::SymmetricMatrix corr = covmt::correlation_about_origin(centered);

  const covmt::ProcedureSpec proc = covmt::ProcedureSpec::parse(opts.rule);
  covmt::reg::ThresholdRule rule = covmt::reg::FixedCutoffRule{1.0};
  if (proc.is_mt()) {
    covmt::mc::ResamplingPlan plan;
    plan.B = opts.b_total;
    plan.seed = common.seed;
    const covmt::mc::NullDistribution null =
        covmt::mc::generate_null(centered, plan, common.workers);
    const covmt::HalfVec obs = covmt::abs_half_vec(covmt::vechs(corr));
    rule = covmt::reg::MtRule{
        covmt::mc::apply(proc.to_test_spec(obs.m(), opts.alpha, opts.b_total), obs, null),
        opts.alpha};
  } else if (proc.is_bps()) {
    const auto variant = proc.family == covmt::ProcedureSpec::Family::BpsA
                             ? covmt::reg::BpsVariant::NSquared
                             : covmt::reg::BpsVariant::Bonferroni;
    rule = covmt::reg::BpsRule{variant, opts.alpha};
  } else {
    throw covmt::ConfigError("regularize needs a thresholding rule (ss/sd/bps), got '" +
                             opts.rule + "'");
  }

  const covmt::reg::RegularizedCovariance result =
      covmt::reg::regularize(centered, corr, rule, opts.eps);

  const std::string cov_path = out_path(common, "covariance.csv");
  covmt::io::write_dense_matrix_csv_file(cov_path, panel.assets,
                                         result.covariance.dense());
  note(cov_path);
  const std::string corr_path = out_path(common, "correlation.csv");
  covmt::io::write_dense_matrix_csv_file(corr_path, panel.assets,
                                         result.correlation.dense());
  note(corr_path);
  const std::string json_path = out_path(common, "regularize.json");
  covmt::io::write_json_file(
      json_path, covmt::io::regularize_report(result, proc.format(), opts.alpha,
                                              common.seed, panel.n_assets(),
                                              panel.t_len()));
  note(json_path);
}

struct SimulateOpts {
  std::vector<int> n_list;
  std::vector<int> t_list;
  double delta = 0.0;
  std::string innovation = "normal";
  double nu = 6.0;
  std::vector<std::string> procedures;
  int replications = 2000;
  int b_total = 100;
  double alpha = 0.05;
  bool frobenius = false;
};

void run_simulate(const CommonOpts& common, const SimulateOpts& opts) {
  if (opts.n_list.empty()) throw covmt::ConfigError("no asset counts given (--n or n_list)");
  if (opts.t_list.empty()) throw covmt::ConfigError("no sample lengths given (--t or t_list)");
  if (opts.procedures.empty()) throw covmt::ConfigError("no procedures given");
  if (opts.innovation != "normal" && opts.innovation != "t")
    throw covmt::ConfigError("innovation must be 'normal' or 't', got '" +
                             opts.innovation + "'");

  std::vector<covmt::ProcedureSpec> procs;
  for (const std::string& s : opts.procedures)
    procs.push_back(covmt::ProcedureSpec::parse(s));

  const std::string csv_path = out_path(common, "simulate.csv");
  std::ofstream out(csv_path, std::ios::binary);
  if (!out) throw covmt::DataError("cannot open '" + csv_path + "' for writing");
  covmt::io::write_experiment_csv_header(out);

  std::uint64_t cell_index = 0;
  for (int n : opts.n_list) {
    for (int t : opts.t_list) {
      covmt::sim::ExperimentConfig cfg;
      cfg.dgp.n = n;
      cfg.dgp.t = t;
      cfg.dgp.delta = opts.delta;
      cfg.dgp.innovation = opts.innovation == "t"
                               ? covmt::sim::DgpSpec::Innovation::StudentT
                               : covmt::sim::DgpSpec::Innovation::Normal;
      cfg.dgp.nu = opts.nu;
      cfg.procedures = procs;
      cfg.replications = opts.replications;
      cfg.b_total = opts.b_total;
      cfg.alpha = opts.alpha;
      cfg.with_frobenius = opts.frobenius;
      cfg.workers = common.workers;
      cfg.seed = covmt::rng::derive_seed(common.seed, covmt::rng::domain::kGridCell,
                                         cell_index++);

      const covmt::sim::ExperimentResult result =
          covmt::sim::run_error_rate_experiment(cfg);

      covmt::io::ExperimentCell cell;
      cell.n = n;
      cell.t = t;
      cell.delta = opts.delta;
      cell.innovation = opts.innovation == "t"
                            ? "t" + covmt::io::format_double(opts.nu)
                            : "normal";
      covmt::io::append_experiment_rows(out, cell, result);
    }
  }
  out.close();
  note(csv_path);
}

struct BacktestOpts {
  std::string input;
  std::vector<std::string> strategies;
  int window = 252;
  int holding = 21;
  double kappa = 0.0005;
  bool allow_short = false;
  double alpha = 0.05;
  int b_total = 100;
  double eps = 0.01;
  int initial_index = -1;
};

void run_backtest_cmd(const CommonOpts& common, const BacktestOpts& opts) {
  if (opts.input.empty()) throw covmt::ConfigError("no input CSV given");
  const covmt::ReturnsPanel panel = covmt::io::read_panel_csv_file(opts.input);

  std::vector<std::string> strategies = opts.strategies;
  if (strategies.empty()) strategies.push_back("sample");

  std::vector<covmt::bt::BacktestReport> reports;
  for (const std::string& s : strategies) {
    covmt::bt::BacktestConfig cfg;
    cfg.strategy = covmt::ProcedureSpec::parse(s);
    cfg.window = opts.window;
    cfg.holding = opts.holding;
    cfg.kappa = opts.kappa;
    cfg.short_sales = opts.allow_short;
    cfg.alpha = opts.alpha;
    cfg.b_total = opts.b_total;
    cfg.shrink_eps = opts.eps;
    cfg.initial_index = opts.initial_index;
    cfg.seed = common.seed;
    cfg.workers = common.workers;

    const covmt::bt::BacktestReport report = covmt::bt::run_backtest(panel, cfg);
    const std::string label = cfg.strategy.path_label();

    const std::string json_path = out_path(common, "backtest_" + label + ".json");
    covmt::io::write_json_file(json_path, covmt::io::backtest_report_json(report, cfg));
    note(json_path);

    const std::string net_path = out_path(common, "net_returns_" + label + ".csv");
    {
      std::ofstream f(net_path, std::ios::binary);
      if (!f) throw covmt::DataError("cannot open '" + net_path + "' for writing");
      covmt::io::write_net_returns_csv(f, report, panel.timestamps, cfg.holding);
    }
    note(net_path);

    if (!report.significant_proportion.empty()) {
      const std::string prop_path = out_path(common, "significant_" + label + ".csv");
      std::ofstream f(prop_path, std::ios::binary);
      if (!f) throw covmt::DataError("cannot open '" + prop_path + "' for writing");
      covmt::io::write_proportion_csv(f, report, panel.timestamps);
      note(prop_path);
    }
    reports.push_back(report);
  }

  const std::string summary_path = out_path(common, "backtest_summary.csv");
  std::ofstream f(summary_path, std::ios::binary);
  if (!f) throw covmt::DataError("cannot open '" + summary_path + "' for writing");
  covmt::io::write_backtest_summary_csv(f, reports);
  f.close();
  note(summary_path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Correlation multiple testing, covariance regularization, and evaluation"};
  app.require_subcommand(1);

  CommonOpts adjust_common, reg_common, sim_common, bt_common;
  AdjustOpts adjust_opts;
  RegularizeOpts reg_opts;
  SimulateOpts sim_opts;
  BacktestOpts bt_opts;

  CLI::App* adjust = app.add_subcommand(
      "adjust-pvalues", "Multiplicity-adjusted Monte Carlo p-values for a returns panel");
  add_common(adjust, adjust_common);
  adjust->add_option("--input", adjust_opts.input, "returns panel CSV");
  adjust->add_option("--procedure", adjust_opts.procedure,
                     "'unadjusted', or ss/sd with k=<int>|log|sqrt or fdp=<gamma>");
  adjust->add_option("--alpha", adjust_opts.alpha, "test level; alpha*B must be integer");
  adjust->add_option("--B", adjust_opts.b_total, "Monte Carlo replications");

  CLI::App* regularize = app.add_subcommand(
      "regularize", "Thresholded, shrunk, positive definite covariance estimate");
  add_common(regularize, reg_common);
  regularize->add_option("--input", reg_opts.input, "returns panel CSV");
  regularize->add_option("--rule", reg_opts.rule, "ss/sd procedure or bps:a / bps:b");
  regularize->add_option("--alpha", reg_opts.alpha, "test level");
  regularize->add_option("--B", reg_opts.b_total, "Monte Carlo replications");
  regularize->add_option("--eps", reg_opts.eps, "eigenvalue floor for the shrinkage");

  CLI::App* simulate = app.add_subcommand(
      "simulate", "Error-rate and power experiments on simulated GARCH panels");
  add_common(simulate, sim_common);
  simulate->add_option("--n", sim_opts.n_list, "asset counts, repeatable");
  simulate->add_option("--t", sim_opts.t_list, "sample lengths, repeatable");
  simulate->add_option("--delta", sim_opts.delta, "fraction of correlated assets");
  simulate->add_option("--innovation", sim_opts.innovation, "'normal' or 't'");
  simulate->add_option("--nu", sim_opts.nu, "Student t degrees of freedom");
  simulate->add_option("--procedures", sim_opts.procedures,
                       "procedure specs, repeatable (ss/sd/bps/sample/ls)");
  simulate->add_option("--replications", sim_opts.replications, "outer replications");
  simulate->add_option("--B", sim_opts.b_total, "Monte Carlo replications per test");
  simulate->add_option("--alpha", sim_opts.alpha, "test level");
  simulate->add_flag("--frobenius", sim_opts.frobenius,
                     "also estimate Frobenius losses of the full pipeline");

  CLI::App* backtest = app.add_subcommand(
      "backtest", "Rolling GMV backtest of covariance strategies on a returns panel");
  add_common(backtest, bt_common);
  backtest->add_option("--input", bt_opts.input, "returns panel CSV");
  backtest->add_option("--strategy", bt_opts.strategies,
                       "strategy spec, repeatable (sample/ls/ew/vt/bps/ss/sd)");
  backtest->add_option("--window", bt_opts.window, "estimation window length in days");
  backtest->add_option("--holding", bt_opts.holding, "days between rebalances");
  backtest->add_option("--kappa", bt_opts.kappa, "proportional transaction cost");
  backtest->add_flag("--allow-short", bt_opts.allow_short,
                     "allow short sales (default long-only)");
  backtest->add_option("--alpha", bt_opts.alpha, "test level for testing strategies");
  backtest->add_option("--B", bt_opts.b_total, "Monte Carlo replications per window");
  backtest->add_option("--eps", bt_opts.eps, "eigenvalue floor for the shrinkage");
  backtest->add_option("--initial-index", bt_opts.initial_index,
                       "first formation day, default window-1");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const auto started = std::chrono::steady_clock::now();
  std::string command;
  CommonOpts* common = nullptr;
  try {
    if (app.got_subcommand(adjust)) {
      command = "adjust-pvalues";
      common = &adjust_common;
      const json cfg = load_config(adjust_common.config_path);
      merge_common(adjust, cfg, adjust_common);
      merge_key(adjust, "--input", cfg, "input", adjust_opts.input);
      merge_key(adjust, "--procedure", cfg, "procedure", adjust_opts.procedure);
      merge_key(adjust, "--alpha", cfg, "alpha", adjust_opts.alpha);
      merge_key(adjust, "--B", cfg, "B", adjust_opts.b_total);
      run_adjust(adjust_common, adjust_opts);
    } else if (app.got_subcommand(regularize)) {
      command = "regularize";
      common = &reg_common;
      const json cfg = load_config(reg_common.config_path);
      merge_common(regularize, cfg, reg_common);
      merge_key(regularize, "--input", cfg, "input", reg_opts.input);
      merge_key(regularize, "--rule", cfg, "rule", reg_opts.rule);
      merge_key(regularize, "--alpha", cfg, "alpha", reg_opts.alpha);
      merge_key(regularize, "--B", cfg, "B", reg_opts.b_total);
      merge_key(regularize, "--eps", cfg, "eps", reg_opts.eps);
      run_regularize(reg_common, reg_opts);
    } else if (app.got_subcommand(simulate)) {
      command = "simulate";
      common = &sim_common;
      const json cfg = load_config(sim_common.config_path);
      merge_common(simulate, cfg, sim_common);
      merge_key(simulate, "--n", cfg, "n_list", sim_opts.n_list);
      merge_key(simulate, "--t", cfg, "t_list", sim_opts.t_list);
      merge_key(simulate, "--delta", cfg, "delta", sim_opts.delta);
      merge_key(simulate, "--innovation", cfg, "innovation", sim_opts.innovation);
      merge_key(simulate, "--nu", cfg, "nu", sim_opts.nu);
      merge_key(simulate, "--procedures", cfg, "procedures", sim_opts.procedures);
      merge_key(simulate, "--replications", cfg, "replications", sim_opts.replications);
      merge_key(simulate, "--B", cfg, "B", sim_opts.b_total);
      merge_key(simulate, "--alpha", cfg, "alpha", sim_opts.alpha);
      merge_key(simulate, "--frobenius", cfg, "frobenius", sim_opts.frobenius);
      run_simulate(sim_common, sim_opts);
    } else if (app.got_subcommand(backtest)) {
      command = "backtest";
      common = &bt_common;
      const json cfg = load_config(bt_common.config_path);
      merge_common(backtest, cfg, bt_common);
      merge_key(backtest, "--input", cfg, "input", bt_opts.input);
      merge_key(backtest, "--strategy", cfg, "strategies", bt_opts.strategies);
      merge_key(backtest, "--window", cfg, "window", bt_opts.window);
      merge_key(backtest, "--holding", cfg, "holding", bt_opts.holding);
      merge_key(backtest, "--kappa", cfg, "kappa", bt_opts.kappa);
      merge_key(backtest, "--allow-short", cfg, "allow_short", bt_opts.allow_short);
      merge_key(backtest, "--alpha", cfg, "alpha", bt_opts.alpha);
      merge_key(backtest, "--B", cfg, "B", bt_opts.b_total);
      merge_key(backtest, "--eps", cfg, "eps", bt_opts.eps);
      merge_key(backtest, "--initial-index", cfg, "initial_index", bt_opts.initial_index);
      run_backtest_cmd(bt_common, bt_opts);
    }
  } catch (const covmt::FdpNotProducible& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const covmt::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const covmt::DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const covmt::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << '\n';
    return 1;
  }

  if (common != nullptr) {
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    append_run_log(*common, command, seconds);
  }
  return 0;
}
