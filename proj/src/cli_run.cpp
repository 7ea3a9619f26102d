// Subcommand dispatch for the mfcontrol binary. Orchestration is single
// threaded; path-level parallelism lives inside the simulation engine.

#include "mfcontrol/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "mfcontrol/game.hpp"
#include "mfcontrol/io.hpp"
#include "mfcontrol/problem.hpp"
#include "mfcontrol/riccati.hpp"
#include "mfcontrol/simulate.hpp"
#include "mfcontrol/strategies.hpp"
#include "mfcontrol/verify.hpp"

namespace mfc {

namespace {

struct Loaded {
  Problem problem;
  InitialPair initial;
};

Loaded load_spec_problem(const RunSpec& spec) {
  std::ifstream in(spec.problem_path);
  if (!in) throw Error("io", "cannot open problem file", {{"file", spec.problem_path}});
  json config;
  try {
    config = json::parse(in);
  } catch (const json::exception& e) {
    throw Error("schema", "problem file is not valid JSON",
                {{"file", spec.problem_path}, {"what", e.what()}});
  }
  Loaded out{load_problem(config), InitialPair{}};
  if (spec.steps > 0) out.problem = with_steps(out.problem, spec.steps);
  out.initial = load_initial_pair(config, out.problem);
  const ValidationReport rep = validate_assumptions(out.problem);
  if (!rep.ok()) {
    throw Error("precondition", "problem violates the standing assumptions",
                {{"violations", rep.violations}});
  }
  return out;
}

std::string out_path(const RunSpec& spec, const std::string& name) {
  std::filesystem::create_directories(spec.out_dir);
  return (std::filesystem::path(spec.out_dir) / name).string();
}

SimConfig sim_of(const RunSpec& spec, double t0) {
  SimConfig sim;
  sim.paths = spec.paths;
  sim.seed = spec.seed;
  sim.t0 = t0;
  return sim;
}

GainSchedule schedule_of(const Problem& p, const std::string& kind, double t) {
  if (kind == "pre") {
    return build_precommitted_strategy(p, solve_precommitted_riccati(p), t);
  }
  if (kind == "naive") {
    return build_naive_strategy(p, solve_precommitted_riccati(p));
  }
  if (kind == "eq") {
    return build_equilibrium_strategy(p, solve_equilibrium_riccati(p));
  }
  throw Error("usage", "unsupported strategy kind for this subcommand", {{"kind", kind}});
}

bool no_conditional_terms(const Problem& p) {
  return p.coef.Abar.is_zero() && p.coef.Cbar.is_zero() && p.coef.Qbar.is_zero() &&
         p.coef.Gbar.isZero(0.0);
}

int run_solve(const RunSpec& spec) {
  const Loaded L = load_spec_problem(spec);
  const RiccatiTriple tri = solve_precommitted_riccati(L.problem);
  const EquilibriumTriple eq = solve_equilibrium_riccati(L.problem);
  write_matrix_path_csv(out_path(spec, "P.csv"), tri.P);
  write_matrix_path_csv(out_path(spec, "Pi.csv"), tri.Pi);
  write_matrix_path_csv(out_path(spec, "Phi.csv"), tri.Phi);
  write_matrix_path_csv(out_path(spec, "Gamma.csv"), eq.Gamma);
  write_matrix_path_csv(out_path(spec, "Gamma_bar.csv"), eq.GammaBar);
  write_matrix_path_csv(out_path(spec, "Gamma_tilde.csv"), eq.GammaTilde);
  return 0;
}

int run_gains(const RunSpec& spec) {
  const Loaded L = load_spec_problem(spec);
  const double t = spec.t >= 0.0 ? spec.t : L.initial.t;
  write_gain_schedule_csv(out_path(spec, "pre"), schedule_of(L.problem, "pre", t));
  write_gain_schedule_csv(out_path(spec, "naive"), schedule_of(L.problem, "naive", t));
  write_gain_schedule_csv(out_path(spec, "eq"), schedule_of(L.problem, "eq", t));
  return 0;
}

int run_simulate(const RunSpec& spec) {
  const Loaded L = load_spec_problem(spec);
  const SimConfig sim = sim_of(spec, L.initial.t);
  PathEnsemble ens;
  if (spec.kind == "game") {
    const int cells = spec.meshes.empty() ? 4 : spec.meshes.front();
    const PartitionSolution sol =
        multiperson_game_solve(L.problem, uniform_partition(L.problem.grid, cells));
    ens = simulate_closed_loop(L.problem, sol.gains_D, L.initial, sim);
  } else {
    ens = simulate_closed_loop(L.problem, schedule_of(L.problem, spec.kind, L.initial.t),
                               L.initial, sim);
  }
  write_ensemble_summary_csv(out_path(spec, "summary_states.csv"), ens, EnsembleField::States);
  write_ensemble_summary_csv(out_path(spec, "summary_cond_means.csv"), ens,
                             EnsembleField::CondMeans);
  write_ensemble_summary_csv(out_path(spec, "summary_controls.csv"), ens,
                             EnsembleField::Controls);
  return 0;
}

int run_cost(const RunSpec& spec) {
  const Loaded L = load_spec_problem(spec);
  if (spec.kind == "game") {
    throw Error("usage", "cost supports kinds pre, naive, and eq; use compare for tables");
  }
  const GainSchedule g = schedule_of(L.problem, spec.kind, L.initial.t);
  const SimConfig sim = sim_of(spec, L.initial.t);
  const PathEnsemble ens = simulate_closed_loop(L.problem, g, L.initial, sim);
  const CostEstimate mc = estimate_cost(L.problem, ens, L.initial.t);
  const double analytic = closed_loop_cost_quadratic(L.problem, g, L.initial);
  write_json_file(out_path(spec, "cost.json"),
                  json{{"kind", spec.kind},
                       {"paths", mc.paths},
                       {"seed", spec.seed},
                       {"mc_value", mc.value},
                       {"mc_std_error", mc.std_error},
                       {"quadratic_value", analytic},
                       {"abs_difference", std::abs(mc.value - analytic)}});
  return 0;
}

std::vector<double> default_eps(const Problem& p, int kt) {
  const double h = p.grid.step();
  std::vector<double> eps;
  for (int mult : {8, 4, 2}) {
    if (kt + mult <= p.grid.N) eps.push_back(mult * h);
  }
  if (eps.size() < 2) {
    throw Error("precondition",
                "too few grid nodes after the perturbation time for extrapolation",
                {{"node", kt}, {"N", p.grid.N}});
  }
  return eps;
}

int run_verify(const RunSpec& spec) {
  const Loaded L = load_spec_problem(spec);
  const Problem& p = L.problem;
  const InitialPair& ip = L.initial;
  const SimConfig sim = sim_of(spec, ip.t);
  std::vector<CheckReport> reports;

  const RiccatiTriple tri = solve_precommitted_riccati(p);
  const EquilibriumTriple eq = solve_equilibrium_riccati(p);

  {
    const GainSchedule g = build_precommitted_strategy(p, tri, ip.t);
    const PathEnsemble ens = simulate_closed_loop(p, g, ip, sim);
    reports.push_back(check_stationarity(p, tri, ens));
  }
  {
    const std::vector<double> lambdas{-1.0, -0.5, -0.25, 0.25, 0.5, 1.0};
    reports.push_back(
        check_convexity_perturbation(p, ip, lambdas, Vector::Ones(p.dims.m), sim));
  }
  {
    LyapunovInput input;
    input.cA = p.coef.A;
    input.cAbar = p.coef.Abar;
    input.cAtilde = p.coef.Atilde;
    input.cC = p.coef.C;
    input.cCbar = p.coef.Cbar;
    input.cCtilde = p.coef.Ctilde;
    input.cQ1 = p.coef.Q;
    input.cQ2 = p.coef.Qbar;
    input.cQ3 = Coefficient(Matrix::Zero(p.dims.n, p.dims.n));
    input.cQ4 = p.coef.Qtilde;
    input.cG1 = p.coef.G;
    input.cG3 = Matrix::Zero(p.dims.n, p.dims.n);
    input.cG4 = p.coef.Gtilde;
    input.tau = ip.t;
    reports.push_back(check_representation(p, input, ip, sim));
  }
  {
    const int k0 = p.grid.index_of(ip.t);
    int kt = spec.t >= 0.0 ? p.grid.index_of(spec.t) : k0 + (p.grid.N - k0) / 2;
    kt = std::min(kt, p.grid.N - 1);
    std::vector<double> eps = spec.eps.empty() ? default_eps(p, kt) : spec.eps;
    std::vector<ControlCandidate> cands{
        ControlCandidate{Matrix::Zero(p.dims.m, p.dims.n), Vector::Ones(p.dims.m),
                         "constant_one"}};
    reports.push_back(check_equilibrium_local_optimality(p, eq, ip, p.grid.node(kt), cands,
                                                         eps, sim));
  }
  if (no_conditional_terms(p)) {
    reports.push_back(check_reductions(p));
  }

  write_check_reports_json(out_path(spec, "checks.json"), reports);
  const bool all = std::all_of(reports.begin(), reports.end(),
                               [](const CheckReport& r) { return r.passed; });
  for (const CheckReport& r : reports) {
    std::cout << r.name << ": " << (r.passed ? "pass" : "FAIL")
              << " (statistic " << format_g17(r.statistic) << ")\n";
  }
  return all ? 0 : 1;
}

int run_converge(const RunSpec& spec) {
  const Loaded L = load_spec_problem(spec);
  const Problem& p = L.problem;
  std::vector<int> cells = spec.meshes;
  if (cells.empty()) cells = spec.kind == "naive" ? std::vector<int>{4, 8, 16, 32, 64}
                                                  : std::vector<int>{4, 8, 16, 32};
  std::vector<Partition> parts;
  for (int c : cells) parts.push_back(uniform_partition(p.grid, c));

  ConvergenceReport rep;
  if (spec.kind == "naive") {
    rep = naive_convergence_study(p, parts, L.initial, sim_of(spec, L.initial.t));
  } else if (spec.kind == "game") {
    rep = game_convergence_study(p, parts, solve_equilibrium_riccati(p));
  } else {
    throw Error("usage", "converge supports kinds naive and game", {{"kind", spec.kind}});
  }
  write_convergence_csv(out_path(spec, "converge.csv"), rep);
  write_convergence_json(out_path(spec, "converge.json"), rep);

  bool decreasing = true;
  for (std::size_t i = 1; i < rep.errors.size(); ++i) {
    decreasing = decreasing && rep.errors[i] < rep.errors[i - 1];
  }
  std::cout << "converge " << spec.kind << ": fitted rate " << format_g17(rep.fitted_rate)
            << (decreasing ? " (errors decreasing)" : " (errors NOT decreasing)") << "\n";
  return decreasing ? 0 : 1;
}

int run_compare(const RunSpec& spec) {
  const Loaded L = load_spec_problem(spec);
  const SimConfig sim = sim_of(spec, L.initial.t);
  json rows = json::array();
  std::string csv = "kind, mc_cost, std_error, quadratic_value\n";
  for (const std::string kind : {"pre", "naive", "eq"}) {
    const GainSchedule g = schedule_of(L.problem, kind, L.initial.t);
    const PathEnsemble ens = simulate_closed_loop(L.problem, g, L.initial, sim);
    const CostEstimate mc = estimate_cost(L.problem, ens, L.initial.t);
    const double analytic = closed_loop_cost_quadratic(L.problem, g, L.initial);
    rows.push_back(json{{"kind", kind},
                        {"mc_cost", mc.value},
                        {"std_error", mc.std_error},
                        {"quadratic_value", analytic}});
    csv += kind + ", " + format_g17(mc.value) + ", " + format_g17(mc.std_error) + ", " +
           format_g17(analytic) + "\n";
  }
  const std::string file = out_path(spec, "compare.csv");
  std::ofstream out(file);
  if (!out) throw Error("io", "cannot open output file", {{"file", file}});
  out << csv;
  out.flush();
  if (!out) throw Error("io", "write failed", {{"file", file}});
  write_json_file(out_path(spec, "compare.json"),
                  json{{"seed", spec.seed}, {"paths", spec.paths}, {"costs", rows}});
  std::cout << csv;
  return 0;
}

}  // namespace

int run(const RunSpec& spec) {
  try {
    if (spec.subcommand == "solve") return run_solve(spec);
    if (spec.subcommand == "gains") return run_gains(spec);
    if (spec.subcommand == "simulate") return run_simulate(spec);
    if (spec.subcommand == "cost") return run_cost(spec);
    if (spec.subcommand == "verify") return run_verify(spec);
    if (spec.subcommand == "converge") return run_converge(spec);
    if (spec.subcommand == "compare") return run_compare(spec);
    throw Error("usage", "unknown subcommand", {{"subcommand", spec.subcommand}});
  } catch (const Error& e) {
    std::cerr << e.to_json().dump() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", {{"code", "internal"}, {"message", e.what()}}}}.dump() << "\n";
    return 2;
  }
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Mean-field linear-quadratic control: solvers, simulation, and checks"};
  app.require_subcommand(1);

  RunSpec spec;
  const auto add_common = [&spec](CLI::App* cmd) {
    cmd->add_option("--problem", spec.problem_path, "problem config JSON")->required();
    cmd->add_option("--out", spec.out_dir, "output directory");
    cmd->add_option("--seed", spec.seed, "random seed");
    cmd->add_option("--paths", spec.paths, "Monte Carlo sample paths");
    cmd->add_option("--steps", spec.steps, "override grid steps");
    cmd->add_option("--t", spec.t, "time parameter (anchor or perturbation time)");
    cmd->add_option("--eps", spec.eps, "perturbation window widths, decreasing");
    cmd->add_option("--meshes", spec.meshes, "partition cell counts");
    cmd->add_option("--kind", spec.kind, "strategy kind: pre|naive|eq|game");
  };
  for (const char* name : {"solve", "gains", "simulate", "cost", "verify", "converge",
                           "compare"}) {
    add_common(app.add_subcommand(name));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << json{{"error",
                       {{"code", "usage"}, {"message", e.what()}}}}
                     .dump()
              << "\n";
    return 2;
  }
  spec.subcommand = app.get_subcommands().front()->get_name();
  return run(spec);
}

}  // namespace mfc
