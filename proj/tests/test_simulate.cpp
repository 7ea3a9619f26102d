// Tests for the forward simulation layer: exact frozen-cost reproduction,
// a martingale second moment with a discrete closed form, channel anchoring,
// determinism across seeds and thread counts, and Monte Carlo cost agreement
// with the quadratic representation.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>

#include "mfcontrol/problem.hpp"
#include "mfcontrol/simulate.hpp"
#include "mfcontrol/strategies.hpp"

using namespace mfc;

namespace {

std::string config_path(const char* name) {
  return std::string(MFC_CONFIG_DIR) + "/" + name;
}

GainSchedule zero_schedule(const Problem& p) {
  const RiccatiTriple tri = solve_precommitted_riccati(p);
  GainSchedule g = build_precommitted_strategy(p, tri, 0.0);
  const Matrix z = Matrix::Zero(p.dims.m, p.dims.n);
  for (Matrix& v : g.psi.values) v = z;
  for (Matrix& v : g.psiBar.values) v = z;
  for (Matrix& v : g.psiTilde.values) v = z;
  return g;
}

double max_state_distance(const PathEnsemble& a, const PathEnsemble& b) {
  double d = 0.0;
  for (std::size_t j = 0; j < a.states.size(); ++j) {
    d = std::max(d, (a.states[j] - b.states[j]).cwiseAbs().maxCoeff());
  }
  return d;
}

}  // namespace

TEST_CASE("frozen problem reproduces its cost exactly") {
  // No dynamics, unit state: each running block integrates to T = 1 and the
  // terminal blocks add 3 more, so the cost is exactly 6 for every path.
  const Problem p = load_problem_file(config_path("frozen.json"));
  const GainSchedule g = zero_schedule(p);
  const InitialPair ip = load_initial_pair(json::object(), p);
  SimConfig sim;
  sim.paths = 50;
  sim.seed = 7;
  const PathEnsemble ens = simulate_closed_loop(p, g, ip, sim);
  const CostEstimate c = estimate_cost(p, ens, ip.t);
  CHECK(std::abs(c.value - 6.0) < 1e-12);
  CHECK(c.std_error < 1e-13);
  CHECK(c.paths == 50);
}

TEST_CASE("geometric diffusion matches its discrete second moment") {
  // dX = X dW from X(0) = 1: the Euler chain gives E[X_N^2] = (1+h)^N
  // exactly, and that converges to e at rate h.
  const Problem p = load_problem_file(config_path("martingale.json"));
  const GainSchedule g = zero_schedule(p);
  const InitialPair ip = load_initial_pair(json::object(), p);
  SimConfig sim;
  sim.paths = 40000;
  sim.seed = 11;
  const PathEnsemble ens = simulate_closed_loop(p, g, ip, sim);
  const int N = p.grid.N;
  const double h = p.grid.step();

  double sum = 0.0, sumsq = 0.0;
  for (const Matrix& st : ens.states) {
    const double v = st(0, N) * st(0, N);
    sum += v;
    sumsq += v * v;
  }
  const double mc = sum / sim.paths;
  const double var = (sumsq - sim.paths * mc * mc) / (sim.paths - 1);
  const double se = std::sqrt(var / sim.paths);

  const double discrete = std::pow(1.0 + h, N);
  CHECK(std::abs(mc - discrete) < 3.0 * se);
  CHECK(std::abs(mc - std::exp(1.0)) < 3.0 * se + std::exp(1.0) * h);
}

TEST_CASE("conditional means anchor at the start node") {
  const Problem p = load_problem_file(config_path("scalar_meanfield.json"));
  const RiccatiTriple tri = solve_precommitted_riccati(p);
  const GainSchedule g = build_precommitted_strategy(p, tri, 0.0);
  const InitialPair ip = InitialPair::gaussian(0.0, Vector::Ones(1), 0.04 * Matrix::Identity(1, 1));
  SimConfig sim;
  sim.paths = 64;
  sim.seed = 3;
  const PathEnsemble ens = simulate_closed_loop(p, g, ip, sim);
  CHECK(ens.k0 == 0);
  for (double a : ens.anchor_times) CHECK(a == 0.0);
  for (int j = 0; j < sim.paths; ++j) {
    // At the anchor the conditional mean is the state itself.
    CHECK((ens.cond_means[j].col(0) - ens.states[j].col(0)).norm() == 0.0);
  }
}

TEST_CASE("antithetic pairing mirrors the Brownian draws") {
  const Problem p = load_problem_file(config_path("scalar_meanfield.json"));
  const GainSchedule g = zero_schedule(p);
  const InitialPair ip = load_initial_pair(json::object(), p);
  SimConfig sim;
  sim.paths = 8;
  sim.seed = 5;
  sim.antithetic = true;
  const PathEnsemble ens = simulate_closed_loop(p, g, ip, sim);
  for (int j = 0; j + 1 < sim.paths; j += 2) {
    CHECK((ens.increments[j] + ens.increments[j + 1]).norm() == 0.0);
  }
}

TEST_CASE("analytic mean path tracks the cross-path average") {
  const Problem p = load_problem_file(config_path("scalar_meanfield.json"));
  const RiccatiTriple tri = solve_precommitted_riccati(p);
  const GainSchedule g = build_precommitted_strategy(p, tri, 0.0);
  const InitialPair ip = load_initial_pair(json::object(), p);
  SimConfig sim;
  sim.paths = 20000;
  sim.seed = 17;
  const PathEnsemble ens = simulate_closed_loop(p, g, ip, sim);
  const int N = p.grid.N;
  for (int k : {N / 2, N}) {
    double avg = 0.0, avg_c = 0.0, sumsq = 0.0;
    for (const Matrix& st : ens.states) {
      avg += st(0, k);
      sumsq += st(0, k) * st(0, k);
    }
    for (const Matrix& cm : ens.cond_means) avg_c += cm(0, k);
    avg /= sim.paths;
    avg_c /= sim.paths;
    const double var = (sumsq - sim.paths * avg * avg) / (sim.paths - 1);
    const double se = std::sqrt(var / sim.paths);
    const double slack = 4.0 * se + 4.0 * p.grid.step();
    CHECK(std::abs(avg - ens.mean[static_cast<std::size_t>(k)](0)) < slack);
    // The conditional chain averages onto the same mean.
    CHECK(std::abs(avg_c - ens.mean[static_cast<std::size_t>(k)](0)) < slack);
  }
}

TEST_CASE("zero-width perturbation reduces to the closed loop") {
  const Problem p = load_problem_file(config_path("scalar_meanfield.json"));
  const EquilibriumTriple eq = solve_equilibrium_riccati(p);
  const GainSchedule g = build_equilibrium_strategy(p, eq);
  const InitialPair ip = load_initial_pair(json::object(), p);
  SimConfig sim;
  sim.paths = 16;
  sim.seed = 23;
  const PathEnsemble base = simulate_closed_loop(p, g, ip, sim);
  const PathEnsemble pert =
      simulate_perturbed(p, g, ip, 0.25, 0.0, Vector::Zero(1), sim);
  CHECK(pert.k0 == p.grid.index_of(0.25));
  const int N = p.grid.N;
  double d = 0.0;
  for (int j = 0; j < sim.paths; ++j) {
    for (int k = pert.k0; k <= N; ++k) {
      d = std::max(d, (base.states[j].col(k) - pert.states[j].col(k)).norm());
    }
  }
  CHECK(d == 0.0);
}

TEST_CASE("same seed gives bitwise identical ensembles") {
  const Problem p = load_problem_file(config_path("mf2d.json"));
  const RiccatiTriple tri = solve_precommitted_riccati(p);
  const GainSchedule g = build_precommitted_strategy(p, tri, 0.0);
  const InitialPair ip = load_initial_pair(json{{"initial", {{"kind", "gaussian"}, {"value", 1.0}, {"cov", 0.09}}}}, p);
  SimConfig sim;
  sim.paths = 24;
  sim.seed = 31;
  const PathEnsemble a = simulate_closed_loop(p, g, ip, sim);
  const PathEnsemble b = simulate_closed_loop(p, g, ip, sim);
  CHECK(max_state_distance(a, b) == 0.0);
  sim.seed = 32;
  const PathEnsemble c = simulate_closed_loop(p, g, ip, sim);
  CHECK(max_state_distance(a, c) > 0.0);
}

TEST_CASE("thread count does not change the result") {
  const Problem p = load_problem_file(config_path("scalar_meanfield.json"));
  const RiccatiTriple tri = solve_precommitted_riccati(p);
  const GainSchedule g = build_precommitted_strategy(p, tri, 0.0);
  const InitialPair ip = load_initial_pair(json::object(), p);
  SimConfig sim;
  sim.paths = 40;
  sim.seed = 41;
  setenv("MFC_THREADS", "1", 1);
  const PathEnsemble a = simulate_closed_loop(p, g, ip, sim);
  const CostEstimate ca = estimate_cost(p, a, ip.t);
  setenv("MFC_THREADS", "7", 1);
  const PathEnsemble b = simulate_closed_loop(p, g, ip, sim);
  const CostEstimate cb = estimate_cost(p, b, ip.t);
  unsetenv("MFC_THREADS");
  CHECK(max_state_distance(a, b) == 0.0);
  CHECK(ca.value == cb.value);
  CHECK(ca.std_error == cb.std_error);
}

TEST_CASE("Monte Carlo cost agrees with the quadratic representation") {
  const Problem p = load_problem_file(config_path("scalar_meanfield.json"));
  const RiccatiTriple tri = solve_precommitted_riccati(p);
  const GainSchedule g = build_precommitted_strategy(p, tri, 0.0);
  const InitialPair ip = load_initial_pair(json::object(), p);
  const double quad = closed_loop_cost_quadratic(p, g, ip);
  SimConfig sim;
  sim.paths = 20000;
  sim.seed = 47;
  const PathEnsemble ens = simulate_closed_loop(p, g, ip, sim);
  const CostEstimate c = estimate_cost(p, ens, ip.t);
  const double slack = 3.0 * c.std_error + 3.0 * p.grid.step() * std::max(1.0, std::abs(quad));
  CHECK(std::abs(c.value - quad) < slack);
}

TEST_CASE("cost evaluation rejects mismatched anchors") {
  // A game rollout re-anchors the conditional channel at every cell start;
  // with an active E_t weight the anchored cost formula no longer applies.
  const Problem p = load_problem_file(config_path("scalar_meanfield.json"));
  const RiccatiTriple tri = solve_precommitted_riccati(p);
  const GainSchedule g = build_precommitted_strategy(p, tri, 0.0);
  const InitialPair ip = load_initial_pair(json::object(), p);
  SimConfig sim;
  sim.paths = 4;
  sim.seed = 2;
  PathEnsemble ens = simulate_closed_loop(p, g, ip, sim);
  ens.anchor_times[ens.anchor_times.size() / 2] = 0.5;
  try {
    estimate_cost(p, ens, ip.t);
    FAIL("expected a precondition error");
  } catch (const Error& e) {
    CHECK(e.code() == "precondition");
  }
  // Without conditional weights the anchor does not matter.
  const Problem pr = load_problem_file(config_path("reduction.json"));
  const RiccatiTriple trir = solve_precommitted_riccati(pr);
  const GainSchedule gr = build_precommitted_strategy(pr, trir, 0.0);
  PathEnsemble ensr = simulate_closed_loop(pr, gr, load_initial_pair(json::object(), pr), sim);
  ensr.anchor_times[ensr.anchor_times.size() / 2] = 0.5;
  CHECK_NOTHROW(estimate_cost(pr, ensr, 0.0));
}

TEST_CASE("initial sampling is deterministic and centered") {
  const InitialPair ip =
      InitialPair::gaussian(0.0, (Vector(2) << 1.0, -0.5).finished(), 0.04 * Matrix::Identity(2, 2));
  const Matrix sqrt_cov = 0.2 * Matrix::Identity(2, 2);
  const Vector a = sample_initial(ip, sqrt_cov, 9, 0);
  const Vector b = sample_initial(ip, sqrt_cov, 9, 0);
  CHECK((a - b).norm() == 0.0);
  const Vector c = sample_initial(ip, sqrt_cov, 9, 1);
  CHECK((a - c).norm() > 0.0);

  const int paths = 40000;
  Vector mean = Vector::Zero(2);
  double var0 = 0.0;
  for (int j = 0; j < paths; ++j) {
    const Vector x = sample_initial(ip, sqrt_cov, 9, static_cast<std::uint64_t>(j));
    mean += x;
    var0 += (x(0) - 1.0) * (x(0) - 1.0);
  }
  mean /= paths;
  var0 /= paths - 1;
  const double se = 0.2 / std::sqrt(static_cast<double>(paths));
  CHECK(std::abs(mean(0) - 1.0) < 4.0 * se);
  CHECK(std::abs(mean(1) + 0.5) < 4.0 * se);
  CHECK(std::abs(var0 - 0.04) < 0.004);

  const InitialPair det = InitialPair::deterministic(0.0, Vector::Ones(2));
  const Vector d = sample_initial(det, Matrix::Zero(2, 2), 1, 5);
  CHECK((d - Vector::Ones(2)).norm() == 0.0);
}
