// End-to-end tests of the command-line binary: file outputs, exit codes,
// structured errors on stderr, and byte-exact reproducibility across thread
// counts.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch_root() {
  static const fs::path root = [] {
    fs::path r = fs::temp_directory_path() / "mfc_cli_tests";
    fs::remove_all(r);
    fs::create_directories(r);
    return r;
  }();
  return root;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = scratch_root() / name;
  fs::create_directories(dir);
  return dir;
}

std::string config_path(const char* name) {
  return std::string(MFC_CONFIG_DIR) + "/" + name;
}

RunResult run_cli(const std::string& args, const std::string& tag,
                  const std::string& env_prefix = "") {
  const fs::path dir = scratch("io_" + tag);
  const fs::path out_file = dir / "stdout.txt";
  const fs::path err_file = dir / "stderr.txt";
  const std::string cmd = env_prefix + std::string(MFC_CLI_PATH) + " " + args + " >" +
                          out_file.string() + " 2>" + err_file.string();
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out_file);
  r.err = slurp(err_file);
  return r;
}

// First data row, given column index, of a "name, v, v, ..." CSV.
double csv_cell(const std::string& text, int row, int col) {
  std::istringstream in(text);
  std::string line;
  for (int i = 0; i <= row; ++i) REQUIRE(std::getline(in, line));
  std::istringstream cells(line);
  std::string cell;
  for (int c = 0; c <= col; ++c) REQUIRE(std::getline(cells, cell, ','));
  return std::stod(cell);
}

int line_count(const std::string& text) {
  int n = 0;
  for (char ch : text) n += ch == '\n';
  return n;
}

}  // namespace

TEST_CASE("solve writes the Riccati family with the analytic corner value") {
  const fs::path out = scratch("solve");
  const RunResult r = run_cli("solve --problem " + config_path("scalar_classical.json") +
                                  " --out " + out.string(),
                              "solve");
  CHECK(r.exit_code == 0);
  CHECK(r.err.empty());
  const std::string pcsv = slurp(out / "P.csv");
  CHECK(pcsv.rfind("s, M_00\n", 0) == 0);
  CHECK(line_count(pcsv) == 1002);  // header + 1001 nodes
  CHECK(std::abs(csv_cell(pcsv, 1, 1) - 0.5) < 1e-8);   // P(0) = 1/2
  CHECK(std::abs(csv_cell(pcsv, 1001, 1) - 1.0) < 1e-14);  // P(T) = G = 1
  for (const char* name : {"Pi.csv", "Phi.csv", "Gamma.csv", "Gamma_bar.csv",
                           "Gamma_tilde.csv"}) {
    CHECK(fs::exists(out / name));
  }
}

TEST_CASE("gain schedules come out one file per block") {
  const fs::path out = scratch("gains");
  const RunResult r = run_cli("gains --problem " + config_path("scalar_meanfield.json") +
                                  " --kind pre --out " + out.string(),
                              "gains");
  CHECK(r.exit_code == 0);
  for (const char* name : {"pre_psi.csv", "pre_psi_bar.csv", "pre_psi_tilde.csv"}) {
    CHECK(fs::exists(out / name));
  }
}

TEST_CASE("simulation summaries are byte-identical across thread counts") {
  const std::string base = "simulate --problem " + config_path("scalar_meanfield.json") +
                           " --paths 200 --seed 5 --kind eq --out ";
  const fs::path out1 = scratch("sim_t2");
  const fs::path out2 = scratch("sim_t5");
  const RunResult r1 = run_cli(base + out1.string(), "sim1", "MFC_THREADS=2 ");
  const RunResult r2 = run_cli(base + out2.string(), "sim2", "MFC_THREADS=5 ");
  CHECK(r1.exit_code == 0);
  CHECK(r2.exit_code == 0);
  for (const char* name :
       {"summary_states.csv", "summary_cond_means.csv", "summary_controls.csv"}) {
    CHECK(slurp(out1 / name) == slurp(out2 / name));
    CHECK(!slurp(out1 / name).empty());
  }
}

TEST_CASE("cost on the frozen problem reports the exact value") {
  const fs::path out = scratch("cost");
  const RunResult r = run_cli("cost --problem " + config_path("frozen.json") +
                                  " --paths 100 --out " + out.string(),
                              "cost");
  CHECK(r.exit_code == 0);
  const json j = json::parse(slurp(out / "cost.json"));
  CHECK(std::abs(j.at("mc_value").get<double>() - 6.0) < 1e-9);
  CHECK(std::abs(j.at("quadratic_value").get<double>() - 6.0) < 1e-9);
  CHECK(j.at("paths") == 100);
}

TEST_CASE("compare lists all three notions at the same seed") {
  const fs::path out = scratch("compare");
  const RunResult r = run_cli("compare --problem " + config_path("frozen.json") +
                                  " --paths 50 --seed 9 --out " + out.string(),
                              "compare");
  CHECK(r.exit_code == 0);
  const std::string csv = slurp(out / "compare.csv");
  CHECK(csv.rfind("kind, mc_cost, std_error, quadratic_value\n", 0) == 0);
  CHECK(line_count(csv) == 4);
  const json j = json::parse(slurp(out / "compare.json"));
  REQUIRE(j.at("costs").size() == 3);
  for (const auto& row : j.at("costs")) {
    // No dynamics: every notion prices the frozen problem at exactly 6.
    CHECK(std::abs(row.at("mc_cost").get<double>() - 6.0) < 1e-9);
  }
}

TEST_CASE("converge exits cleanly and reports decreasing errors") {
  const fs::path out = scratch("converge");
  const RunResult r = run_cli("converge --problem " + config_path("scalar_meanfield.json") +
                                  " --kind game --steps 192 --meshes 2 4 8 --out " +
                                  out.string(),
                              "converge");
  CHECK(r.exit_code == 0);
  const std::string csv = slurp(out / "converge.csv");
  CHECK(csv.rfind("mesh, error\n", 0) == 0);
  CHECK(line_count(csv) == 4);
  const double e0 = csv_cell(csv, 1, 1);
  const double e2 = csv_cell(csv, 3, 1);
  CHECK(e2 < e0);
  const json j = json::parse(slurp(out / "converge.json"));
  CHECK(j.at("fitted_rate").get<double>() > 0.0);
}

TEST_CASE("verify runs the whole roster and passes") {
  const fs::path out = scratch("verify");
  const RunResult r = run_cli("verify --problem " + config_path("scalar_classical.json") +
                                  " --paths 400 --steps 200 --out " + out.string(),
                              "verify");
  CHECK(r.exit_code == 0);
  const json j = json::parse(slurp(out / "checks.json"));
  CHECK(j.at("all_passed") == true);
  CHECK(j.at("checks").size() >= 4);
  CHECK(r.out.find("pass") != std::string::npos);
}

TEST_CASE("a missing problem file is a structured io error") {
  const RunResult r = run_cli("solve --problem /nonexistent/nope.json", "bad_path");
  CHECK(r.exit_code == 2);
  CHECK(line_count(r.err) == 1);
  const json j = json::parse(r.err);
  CHECK(j.at("error").at("code") == "io");
}

TEST_CASE("a missing required flag is a structured usage error") {
  const RunResult r = run_cli("solve", "no_problem");
  CHECK(r.exit_code == 2);
  const json j = json::parse(r.err);
  CHECK(j.at("error").at("code") == "usage");
}

TEST_CASE("an unsound problem is rejected with the failed assumption") {
  const fs::path dir = scratch("bad_cfg");
  const fs::path cfg = dir / "negative_R.json";
  {
    std::ofstream f(cfg);
    f << R"({"n":1,"m":1,"T":1.0,"N":10,
             "coefficients":{"B":1.0,"R":-1.0},"terminal":{"G":1.0}})";
  }
  const RunResult r = run_cli("solve --problem " + cfg.string(), "bad_cfg");
  CHECK(r.exit_code == 2);
  const json j = json::parse(r.err);
  CHECK(j.at("error").at("code") == "precondition");
}

TEST_CASE("help exits zero without a structured error") {
  const RunResult r = run_cli("--help", "help");
  CHECK(r.exit_code == 0);
  CHECK(r.err.empty());
  CHECK(r.out.find("solve") != std::string::npos);
}
