#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>

#include "covmt/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("covmt_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

RunResult run_cli(const std::string& args, const fs::path& scratch) {
  const fs::path out_file = scratch / "stdout.txt";
  const fs::path err_file = scratch / "stderr.txt";
  const std::string cmd = std::string(COVMT_CLI_PATH) + " " + args + " >" +
                          out_file.string() + " 2>" + err_file.string();
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(out_file);
  r.err = read_file(err_file);
  return r;
}

// Small deterministic panel with mildly correlated columns.
void write_panel(const fs::path& path, int t_len, int n, std::uint64_t key) {
  covmt::rng::CounterStream stream(key);
  std::ofstream out(path, std::ios::binary);
  out << "date";
  for (int i = 0; i < n; ++i) out << ",A" << static_cast<char>('A' + i);
  out << "\n";
  std::vector<double> common(t_len);
  for (int t = 0; t < t_len; ++t) common[t] = stream.normal();
  for (int t = 0; t < t_len; ++t) {
    out << "2024-01-" << (t / 10) << (t % 10);
    for (int i = 0; i < n; ++i)
      out << "," << 0.01 * (stream.normal() + 0.5 * common[t]);
    out << "\n";
  }
}

}  // namespace

TEST_CASE("adjusted p-values end to end with JSON and matrix outputs") {
  const fs::path dir = fresh_dir("adjust");
  const fs::path input = dir / "panel.csv";
  write_panel(input, 30, 3, 12);

  const RunResult r = run_cli("adjust-pvalues --input " + input.string() +
                                  " --procedure sd:k=1 --alpha 0.05 --B 20 --seed 7 --out " +
                                  (dir / "out").string(),
                              dir);
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);

  const json report = json::parse(read_file(dir / "out" / "pvalues.json"));
  CHECK(report.at("criterion") == "sd:k=1");
  CHECK(report.at("alpha") == 0.05);
  CHECK(report.at("B") == 20);
  CHECK(report.at("seed") == 7);
  CHECK(report.at("M") == 3);
  CHECK(report.at("n_assets") == 3);
  REQUIRE(report.at("p_values").size() == 3);
  REQUIRE(report.at("rejected").size() == 3);
  for (const auto& p : report.at("p_values")) {
    CHECK(p.get<double>() >= 0.05);
    CHECK(p.get<double>() <= 1.0);
  }
  CHECK(report.at("k_star").is_null());

  const std::string matrix = read_file(dir / "out" / "pvalue_matrix.csv");
  CHECK(matrix.rfind(",AA,AB,AC\n", 0) == 0);
  CHECK(std::count(matrix.begin(), matrix.end(), '\n') == 4);

  CHECK(fs::exists(dir / "out" / "run.log"));
}

TEST_CASE("non-integral alpha*B exits with the configuration code") {
  const fs::path dir = fresh_dir("alphab");
  const fs::path input = dir / "panel.csv";
  write_panel(input, 20, 3, 5);

  const RunResult r = run_cli("adjust-pvalues --input " + input.string() +
                                  " --alpha 0.05 --B 30 --out " + (dir / "out").string(),
                              dir);
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("alpha*B") != std::string::npos);
}

TEST_CASE("an infeasible FDP request exits with its dedicated code") {
  const fs::path dir = fresh_dir("fdpfail");
  const fs::path input = dir / "panel.csv";
  // Two assets leave a single hypothesis; gamma = 0.1 needs at least nine
  // rejections at k = 1, which one hypothesis cannot supply.
  write_panel(input, 20, 2, 9);

  const RunResult r = run_cli("adjust-pvalues --input " + input.string() +
                                  " --procedure sd:fdp=0.1 --B 20 --out " +
                                  (dir / "out").string(),
                              dir);
  CHECK(r.exit_code == 3);
  CHECK(r.err.find("cannot be produced") != std::string::npos);
}

TEST_CASE("corrupted input reports coordinates and exits as a data error") {
  const fs::path dir = fresh_dir("badcsv");
  const fs::path input = dir / "panel.csv";
  {
    std::ofstream out(input, std::ios::binary);
    out << "date,A,B\n2024-01-01,0.1,0.2\n2024-01-02,oops,0.2\n";
  }
  const RunResult r = run_cli("adjust-pvalues --input " + input.string() + " --B 20 --out " +
                                  (dir / "out").string(),
                              dir);
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("row 3, column 2") != std::string::npos);
}

TEST_CASE("repeated runs and worker counts give byte-identical outputs") {
  const fs::path dir = fresh_dir("determinism");
  const fs::path input = dir / "panel.csv";
  write_panel(input, 40, 4, 21);

  const std::string base = "adjust-pvalues --input " + input.string() +
                           " --procedure ss:k=2 --alpha 0.1 --B 20 --seed 99 --out ";
  REQUIRE(run_cli(base + (dir / "a").string() + " --workers 1", dir).exit_code == 0);
  REQUIRE(run_cli(base + (dir / "b").string() + " --workers 1", dir).exit_code == 0);
  REQUIRE(run_cli(base + (dir / "c").string() + " --workers 3", dir).exit_code == 0);

  const std::string ja = read_file(dir / "a" / "pvalues.json");
  CHECK(ja == read_file(dir / "b" / "pvalues.json"));
  CHECK(ja == read_file(dir / "c" / "pvalues.json"));
  const std::string ma = read_file(dir / "a" / "pvalue_matrix.csv");
  CHECK(ma == read_file(dir / "b" / "pvalue_matrix.csv"));
  CHECK(ma == read_file(dir / "c" / "pvalue_matrix.csv"));
}

TEST_CASE("config file values fill in where flags are absent") {
  const fs::path dir = fresh_dir("config");
  const fs::path input = dir / "panel.csv";
  write_panel(input, 30, 3, 31);
  {
    std::ofstream out(dir / "config.json");
    out << json{{"input", input.string()},
                {"procedure", "ss:k=1"},
                {"B", 20},
                {"seed", 5},
                {"out", (dir / "from_config").string()}}
               .dump();
  }

  const RunResult r =
      run_cli("adjust-pvalues --config " + (dir / "config.json").string(), dir);
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);
  const json report = json::parse(read_file(dir / "from_config" / "pvalues.json"));
  CHECK(report.at("criterion") == "ss:k=1");
  CHECK(report.at("seed") == 5);

  // A flag on the command line overrides the same key in the config.
  const RunResult r2 = run_cli("adjust-pvalues --config " + (dir / "config.json").string() +
                                   " --procedure sd:k=1 --out " + (dir / "override").string(),
                               dir);
  REQUIRE(r2.exit_code == 0);
  const json report2 = json::parse(read_file(dir / "override" / "pvalues.json"));
  CHECK(report2.at("criterion") == "sd:k=1");
}

TEST_CASE("regularize writes the covariance bundle and certificates") {
  const fs::path dir = fresh_dir("regularize");
  const fs::path input = dir / "panel.csv";
  write_panel(input, 40, 4, 44);

  const RunResult r = run_cli("regularize --input " + input.string() +
                                  " --rule sd:k=1 --B 20 --seed 2 --out " +
                                  (dir / "out").string(),
                              dir);
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);

  const json report = json::parse(read_file(dir / "out" / "regularize.json"));
  CHECK(report.at("rule") == "sd:k=1");
  CHECK(report.at("n_assets") == 4);
  CHECK(report.at("t_len") == 40);
  CHECK(report.at("xi_star").get<double>() >= 0.0);
  CHECK(report.at("lambda_min_after").get<double>() >= 0.01 - 1e-10);
  CHECK(report.at("mask_density").get<double>() >= 0.0);
  CHECK(report.at("mask_density").get<double>() <= 1.0);

  const std::string cov = read_file(dir / "out" / "covariance.csv");
  const std::string corr = read_file(dir / "out" / "correlation.csv");
  CHECK(cov.rfind(",AA,AB,AC,AD\n", 0) == 0);
  CHECK(corr.rfind(",AA,AB,AC,AD\n", 0) == 0);
  CHECK(std::count(corr.begin(), corr.end(), '\n') == 5);
}

TEST_CASE("a universal rule below its cutoff returns the identity correlation") {
  const fs::path dir = fresh_dir("identity");
  const fs::path input = dir / "panel.csv";
  {
    // Exactly orthogonal centered columns: every correlation is zero, and
    // the universal cutoff at T = 4 far exceeds any sample correlation.
    std::ofstream out(input, std::ios::binary);
    out << "date,X,Y,Z\n"
        << "2024-01-01,0.01,0.01,0.01\n"
        << "2024-01-02,-0.01,0.01,-0.01\n"
        << "2024-01-03,0.01,-0.01,-0.01\n"
        << "2024-01-04,-0.01,-0.01,0.01\n";
  }
  const RunResult r = run_cli("regularize --input " + input.string() +
                                  " --rule bps:b --out " + (dir / "out").string(),
                              dir);
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);

  const json report = json::parse(read_file(dir / "out" / "regularize.json"));
  CHECK(report.at("xi_star") == 0.0);
  CHECK(report.at("mask_density") == 0.0);

  const std::string corr = read_file(dir / "out" / "correlation.csv");
  std::istringstream lines(corr);
  std::string line;
  std::getline(lines, line);
  CHECK(line == ",X,Y,Z");
  std::getline(lines, line);
  CHECK(line == "X,1,0,0");
  std::getline(lines, line);
  CHECK(line == "Y,0,1,0");
  std::getline(lines, line);
  CHECK(line == "Z,0,0,1");
}

TEST_CASE("regularize refuses weighting rules and propagates FDP failures") {
  const fs::path dir = fresh_dir("regbad");
  const fs::path input = dir / "panel.csv";
  write_panel(input, 20, 2, 50);

  const RunResult bad = run_cli("regularize --input " + input.string() +
                                    " --rule ew --out " + (dir / "out").string(),
                                dir);
  CHECK(bad.exit_code == 2);

  const RunResult fdp = run_cli("regularize --input " + input.string() +
                                    " --rule sd:fdp=0.1 --B 20 --out " +
                                    (dir / "out").string(),
                                dir);
  CHECK(fdp.exit_code == 3);
  CHECK(fdp.err.find("cannot be produced") != std::string::npos);
}

TEST_CASE("simulate writes one row per cell and procedure") {
  const fs::path dir = fresh_dir("simulate");

  const RunResult r = run_cli(
      "simulate --n 4 --t 12 --delta 0.5 --procedures ss:k=1 --procedures sample"
      " --replications 5 --B 10 --alpha 0.1 --seed 3 --frobenius --out " +
          (dir / "out").string(),
      dir);
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);

  const std::string csv = read_file(dir / "out" / "simulate.csv");
  std::istringstream lines(csv);
  std::string header;
  std::getline(lines, header);
  CHECK(header ==
        "n,t,delta,innovation,procedure,k,gamma,error_rate,error_se,power,"
        "power_se,avg_rejections,frobenius_mean,frobenius_se,fdp_failures,"
        "replications");
  int rows = 0;
  std::string line;
  while (std::getline(lines, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 2);
  CHECK(csv.find("ss:k=1") != std::string::npos);
  CHECK(csv.find("sample") != std::string::npos);

  const RunResult bad = run_cli("simulate --n 4 --t 12 --procedures ew --replications 2"
                                " --B 10 --alpha 0.1 --out " +
                                    (dir / "out2").string(),
                                dir);
  CHECK(bad.exit_code == 2);
}

TEST_CASE("backtest emits per-strategy files plus a summary") {
  const fs::path dir = fresh_dir("backtest");
  const std::string input = std::string(COVMT_DATA_DIR) + "/sample_panel.csv";

  const std::string cmd = "backtest --input " + input +
                          " --strategy ew --strategy sd:k=1 --window 60 --holding 42"
                          " --B 20 --seed 4 --out ";
  const RunResult r = run_cli(cmd + (dir / "out").string(), dir);
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);

  CHECK(fs::exists(dir / "out" / "backtest_ew.json"));
  CHECK(fs::exists(dir / "out" / "net_returns_ew.csv"));
  CHECK_FALSE(fs::exists(dir / "out" / "significant_ew.csv"));
  CHECK(fs::exists(dir / "out" / "backtest_sd_k1.json"));
  CHECK(fs::exists(dir / "out" / "net_returns_sd_k1.csv"));
  CHECK(fs::exists(dir / "out" / "significant_sd_k1.csv"));

  const json report = json::parse(read_file(dir / "out" / "backtest_sd_k1.json"));
  CHECK(report.at("strategy") == "sd:k=1");
  CHECK(report.at("window") == 60);
  CHECK(report.at("metrics").contains("AV"));
  CHECK(report.at("metrics").contains("MDD"));

  const std::string summary = read_file(dir / "out" / "backtest_summary.csv");
  CHECK(summary.rfind("strategy,AV,SD,IR,TO,MDD,TW\n", 0) == 0);
  CHECK(std::count(summary.begin(), summary.end(), '\n') == 3);

  const std::string net = read_file(dir / "out" / "net_returns_sd_k1.csv");
  CHECK(net.rfind("index,date,net_return,wealth\n", 0) == 0);

  // Identical rerun, byte for byte.
  const RunResult r2 = run_cli(cmd + (dir / "out2").string(), dir);
  REQUIRE(r2.exit_code == 0);
  CHECK(read_file(dir / "out" / "backtest_sd_k1.json") ==
        read_file(dir / "out2" / "backtest_sd_k1.json"));
  CHECK(read_file(dir / "out" / "net_returns_sd_k1.csv") ==
        read_file(dir / "out2" / "net_returns_sd_k1.csv"));
  CHECK(read_file(dir / "out" / "significant_sd_k1.csv") ==
        read_file(dir / "out2" / "significant_sd_k1.csv"));

  const RunResult bad = run_cli("backtest --input " + input + " --strategy nonsense --out " +
                                    (dir / "out3").string(),
                                dir);
  CHECK(bad.exit_code == 2);
}

TEST_CASE("missing subcommands and help behave like a standard CLI") {
  const fs::path dir = fresh_dir("misc");
  CHECK(run_cli("", dir).exit_code == 2);
  CHECK(run_cli("--help", dir).exit_code == 0);
  CHECK(run_cli("adjust-pvalues --no-such-flag", dir).exit_code == 2);
}
