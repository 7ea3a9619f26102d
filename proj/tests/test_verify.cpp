// Tests for the certification checks: adjoint reconstruction, stationarity
// residual decay, convexity in control perturbations, the quadratic
// representation of conditional functionals, local optimality at the
// equilibrium feedback, and the no-conditional-term reductions.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mfcontrol/problem.hpp"
#include "mfcontrol/strategies.hpp"
#include "mfcontrol/verify.hpp"

using namespace mfc;

namespace {

std::string config_path(const char* name) {
  return std::string(MFC_CONFIG_DIR) + "/" + name;
}

struct Prepared {
  Problem p;
  RiccatiTriple tri;
  GainSchedule gains;
  InitialPair ip;
  PathEnsemble ens;
};

Prepared prepare(const char* name, int paths, std::uint64_t seed, int steps = 0) {
  Problem p = load_problem_file(config_path(name));
  if (steps > 0) p = with_steps(p, steps);
  const RiccatiTriple tri = solve_precommitted_riccati(p);
  const GainSchedule g = build_precommitted_strategy(p, tri, 0.0);
  const InitialPair ip = load_initial_pair(json::object(), p);
  SimConfig sim;
  sim.paths = paths;
  sim.seed = seed;
  PathEnsemble ens = simulate_closed_loop(p, g, ip, sim);
  return Prepared{std::move(p), tri, g, ip, std::move(ens)};
}

}  // namespace

TEST_CASE("reconstructed adjoint hits its terminal condition") {
  const Prepared pr = prepare("scalar_meanfield.json", 200, 101);
  const AdjointPath adj = reconstruct_adjoint(pr.p, pr.tri, pr.ens);
  REQUIRE(adj.Y.size() == pr.ens.states.size());
  const int N = pr.p.grid.N;
  double worst = 0.0;
  for (std::size_t j = 0; j < adj.Y.size(); ++j) {
    // Y(T) = G x + Gbar E_t[x] + Gtilde E[x]; the conditional channel in the
    // ansatz is the per-path Euler chain, an O(h) neighbor of the exact one.
    const Vector want = pr.p.coef.G * pr.ens.states[j].col(N) +
                        pr.p.coef.Gbar * pr.ens.cond_means[j].col(N) +
                        pr.p.coef.Gtilde * pr.ens.mean[static_cast<std::size_t>(N)];
    worst = std::max(worst, (adj.Y[j].col(N) - want).norm());
  }
  CHECK(worst < 0.05);
}

TEST_CASE("stationarity residual is small and shrinks under refinement") {
  const Prepared fine = prepare("scalar_meanfield.json", 400, 7);
  const CheckReport rep = check_stationarity(fine.p, fine.tri, fine.ens);
  CHECK(rep.passed);
  CHECK(rep.statistic < 1e-2);

  const Prepared coarse = prepare("scalar_meanfield.json", 400, 7, 500);
  const CheckReport rep2 = check_stationarity(coarse.p, coarse.tri, coarse.ens);
  CHECK(rep.statistic < 0.8 * rep2.statistic);
}

TEST_CASE("stationarity residual vanishes without mean-field terms") {
  const Prepared pr = prepare("scalar_classical.json", 100, 3);
  const CheckReport rep = check_stationarity(pr.p, pr.tri, pr.ens);
  CHECK(rep.passed);
  CHECK(rep.statistic < 1e-12);
}

TEST_CASE("cost is convex along constant control perturbations") {
  const Problem p = load_problem_file(config_path("scalar_classical.json"));
  const InitialPair ip = load_initial_pair(json::object(), p);
  SimConfig sim;
  sim.paths = 2000;
  sim.seed = 19;
  const std::vector<double> lambdas{-1.0, -0.5, -0.25, 0.25, 0.5, 1.0};
  const CheckReport rep =
      check_convexity_perturbation(p, ip, lambdas, Vector::Ones(1), sim);
  CHECK(rep.passed);
  CHECK(rep.statistic < 0.05);
}

TEST_CASE("convexity inputs are validated") {
  const Problem p = load_problem_file(config_path("scalar_classical.json"));
  const InitialPair ip = load_initial_pair(json::object(), p);
  SimConfig sim;
  sim.paths = 10;
  sim.seed = 1;
  try {
    check_convexity_perturbation(p, ip, {0.25, 0.5, 1.0}, Vector::Ones(1), sim);
    FAIL("expected a usage error");
  } catch (const Error& e) {
    CHECK(e.code() == "usage");
  }
  try {
    check_convexity_perturbation(p, ip, {-1.0, -0.5, 0.5, 1.0}, Vector::Ones(2), sim);
    FAIL("expected a shape error");
  } catch (const Error& e) {
    CHECK(e.code() == "shape");
  }
}

TEST_CASE("control-free cost is flat in the perturbation") {
  // B = D = 0: the state never sees the control, so only the explicit
  // <R u, u> term reacts. The quadratic fit must recover it with no linear
  // part: the cost difference J(lambda) - J(0) = lambda^2 <R v, v> T.
  json cfg = json{{"n", 1},
                  {"m", 1},
                  {"T", 1.0},
                  {"N", 100},
                  {"coefficients", {{"A", -0.5}, {"C", 0.3}, {"Q", 1.0}, {"R", 1.0}}},
                  {"terminal", {{"G", 1.0}}}};
  const Problem p = load_problem(cfg);
  const InitialPair ip = load_initial_pair(json::object(), p);
  SimConfig sim;
  sim.paths = 800;
  sim.seed = 29;
  const std::vector<double> lambdas{-1.0, -0.5, 0.5, 1.0};
  const CheckReport rep =
      check_convexity_perturbation(p, ip, lambdas, Vector::Ones(1), sim);
  CHECK(rep.passed);
  CHECK(rep.statistic < 1e-10);
  CHECK(rep.details.at("quadratic_fit").get<double>() ==
        doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("representation is exact on the frozen problem") {
  const Problem p = load_problem_file(config_path("frozen.json"));
  LyapunovInput input;
  const Matrix one = Matrix::Identity(1, 1);
  const Matrix zero = Matrix::Zero(1, 1);
  input.cA = Coefficient(zero);
  input.cAbar = Coefficient(zero);
  input.cAtilde = Coefficient(zero);
  input.cC = Coefficient(zero);
  input.cCbar = Coefficient(zero);
  input.cCtilde = Coefficient(zero);
  input.cQ1 = Coefficient(one);
  input.cQ2 = Coefficient(one);
  input.cQ3 = Coefficient(zero);
  input.cQ4 = Coefficient(one);
  input.cG1 = one;
  input.cG3 = zero;
  input.cG4 = one;
  input.tau = 0.0;
  const InitialPair ip = InitialPair::deterministic(0.0, Vector::Ones(1));
  SimConfig sim;
  sim.paths = 100;
  sim.seed = 5;
  const CheckReport rep = check_representation(p, input, ip, sim);
  CHECK(rep.passed);
  CHECK(std::abs(rep.details.at("mc_value").get<double>() -
                 rep.details.at("analytic").get<double>()) < 1e-10);
}

TEST_CASE("representation holds along noisy uncontrolled dynamics") {
  const Problem p = load_problem_file(config_path("martingale.json"));
  LyapunovInput input;
  const Matrix one = Matrix::Identity(1, 1);
  const Matrix zero = Matrix::Zero(1, 1);
  input.cA = Coefficient(zero);
  input.cAbar = Coefficient(zero);
  input.cAtilde = Coefficient(zero);
  input.cC = Coefficient(one);
  input.cCbar = Coefficient(zero);
  input.cCtilde = Coefficient(zero);
  input.cQ1 = Coefficient(one);
  input.cQ2 = Coefficient(zero);
  input.cQ3 = Coefficient(zero);
  input.cQ4 = Coefficient(zero);
  input.cG1 = one;
  input.cG3 = zero;
  input.cG4 = zero;
  input.tau = 0.0;
  const InitialPair ip = InitialPair::gaussian(0.0, Vector::Ones(1), 0.25 * one);
  SimConfig sim;
  sim.paths = 40000;
  sim.seed = 13;
  const CheckReport rep = check_representation(p, input, ip, sim);
  CHECK(rep.passed);
}

TEST_CASE("representation separates the strict-past anchor channel") {
  // tau < t with an active E_tau weight: the Gaussian split sends
  // tau_cov_fraction of the covariance through the GammaBar block and the
  // rest through Gamma, which is where the two blocks genuinely differ.
  const Problem base = load_problem_file(config_path("scalar_meanfield.json"));
  const Problem p = with_steps(base, 500);
  LyapunovInput input;
  const Matrix one = Matrix::Identity(1, 1);
  const Matrix zero = Matrix::Zero(1, 1);
  input.cA = p.coef.A;
  input.cAbar = p.coef.Abar;
  input.cAtilde = p.coef.Atilde;
  input.cC = p.coef.C;
  input.cCbar = p.coef.Cbar;
  input.cCtilde = p.coef.Ctilde;
  input.cQ1 = Coefficient(one);
  input.cQ2 = Coefficient(0.5 * one);
  input.cQ3 = Coefficient(one);
  input.cQ4 = Coefficient(0.25 * one);
  input.cG1 = one;
  input.cG3 = one;
  input.cG4 = 0.25 * one;
  input.tau = 0.25;
  const InitialPair ip = InitialPair::gaussian(0.5, Vector::Ones(1), 0.09 * one);
  SimConfig sim;
  sim.paths = 20000;
  sim.seed = 37;
  sim.t0 = 0.5;
  const CheckReport rep = check_representation(p, input, ip, sim, 0.5);
  CHECK(rep.passed);
  // The split must matter: the two Lyapunov blocks differ at the node.
  const double full = rep.details.at("analytic").get<double>();
  const CheckReport rep_other = check_representation(p, input, ip, sim, 0.0);
  CHECK(std::abs(rep_other.details.at("analytic").get<double>() - full) > 1e-4);
}

TEST_CASE("representation validates the anchor") {
  const Problem p = load_problem_file(config_path("scalar_classical.json"));
  LyapunovInput input;
  const Matrix zero = Matrix::Zero(1, 1);
  input.cA = Coefficient(zero);
  input.cAbar = Coefficient(zero);
  input.cAtilde = Coefficient(zero);
  input.cC = Coefficient(zero);
  input.cCbar = Coefficient(zero);
  input.cCtilde = Coefficient(zero);
  input.cQ1 = Coefficient(Matrix::Identity(1, 1));
  input.cQ2 = Coefficient(zero);
  input.cQ3 = Coefficient(zero);
  input.cQ4 = Coefficient(zero);
  input.cG1 = Matrix::Identity(1, 1);
  input.cG3 = zero;
  input.cG4 = zero;
  input.tau = 0.75;  // anchor after the evaluation time
  const InitialPair ip = InitialPair::deterministic(0.5, Vector::Ones(1));
  SimConfig sim;
  sim.paths = 10;
  sim.seed = 1;
  sim.t0 = 0.5;
  try {
    check_representation(p, input, ip, sim);
    FAIL("expected a precondition error");
  } catch (const Error& e) {
    CHECK(e.code() == "precondition");
  }
}

TEST_CASE("spike variations cannot beat the equilibrium feedback") {
  const Problem base = load_problem_file(config_path("scalar_meanfield.json"));
  const Problem p = with_steps(base, 500);
  const EquilibriumTriple eq = solve_equilibrium_riccati(p);
  const InitialPair ip = load_initial_pair(json::object(), p);
  SimConfig sim;
  sim.paths = 4000;
  sim.seed = 53;
  std::vector<ControlCandidate> candidates;
  candidates.push_back({Matrix::Identity(1, 1), Vector::Ones(1), "affine"});
  candidates.push_back({Matrix::Zero(1, 1), -0.5 * Vector::Ones(1), "constant"});
  const double h = p.grid.step();
  const std::vector<double> eps{8 * h, 4 * h, 2 * h};
  const CheckReport rep =
      check_equilibrium_local_optimality(p, eq, ip, 0.5, candidates, eps, sim);
  CHECK(rep.passed);
  REQUIRE(rep.details.at("candidates").is_array());
  // First entry is the equilibrium control itself: its quotient must sit at
  // zero within the allowance, and the off-equilibrium ones must be positive.
  const auto& cands = rep.details.at("candidates");
  CHECK(cands.size() == 3);
  for (std::size_t i = 1; i < cands.size(); ++i) {
    CHECK(cands[i].at("extrapolated").get<double>() > 0.0);
    CHECK(cands[i].at("analytic").get<double>() > 0.0);
  }
}

TEST_CASE("local optimality validates the window list") {
  const Problem p = load_problem_file(config_path("scalar_meanfield.json"));
  const EquilibriumTriple eq = solve_equilibrium_riccati(p);
  const InitialPair ip = load_initial_pair(json::object(), p);
  SimConfig sim;
  sim.paths = 10;
  sim.seed = 1;
  const double h = p.grid.step();
  try {
    check_equilibrium_local_optimality(p, eq, ip, 0.5, {}, {2 * h, 4 * h}, sim);
    FAIL("expected a usage error");
  } catch (const Error& e) {
    CHECK(e.code() == "usage");  // eps must decrease
  }
  try {
    check_equilibrium_local_optimality(p, eq, ip, 0.5, {}, {4 * h}, sim);
    FAIL("expected a usage error");
  } catch (const Error& e) {
    CHECK(e.code() == "usage");  // need at least two eps
  }
}

TEST_CASE("reductions hold exactly without conditional terms") {
  const Problem p = load_problem_file(config_path("reduction.json"));
  const CheckReport rep = check_reductions(p);
  CHECK(rep.passed);
  CHECK(rep.statistic <= 1e-10);
  const Problem p2 = load_problem_file(config_path("scalar_classical.json"));
  const CheckReport rep2 = check_reductions(p2);
  CHECK(rep2.passed);
}

TEST_CASE("reductions refuse problems with conditional terms") {
  const Problem p = load_problem_file(config_path("scalar_meanfield.json"));
  try {
    check_reductions(p);
    FAIL("expected a precondition error");
  } catch (const Error& e) {
    CHECK(e.code() == "precondition");
  }
}

TEST_CASE("check reports serialize with all fields") {
  CheckReport r;
  r.name = "example";
  r.statistic = 0.25;
  r.threshold = 1.0;
  r.passed = true;
  r.details = json{{"note", 3}};
  const json j = check_report_to_json(r);
  CHECK(j.at("name") == "example");
  CHECK(j.at("statistic") == 0.25);
  CHECK(j.at("threshold") == 1.0);
  CHECK(j.at("passed") == true);
  CHECK(j.at("details").at("note") == 3);
}
