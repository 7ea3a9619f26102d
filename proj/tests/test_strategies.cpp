// Tests for the feedback schedules: folding rules, coincidence when the
// conditional and plain mean channels vanish, and the pointwise feedback map.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mfcontrol/problem.hpp"
#include "mfcontrol/strategies.hpp"

using namespace mfc;

namespace {

std::string config_path(const char* name) {
  return std::string(MFC_CONFIG_DIR) + "/" + name;
}

double max_path_distance(const MatrixPath& a, const MatrixPath& b) {
  double d = 0.0;
  for (std::size_t k = 0; k < a.values.size(); ++k) {
    d = std::max(d, spectral_norm(a.values[k] - b.values[k]));
  }
  return d;
}

double max_norm_along(const MatrixPath& mp) {
  double d = 0.0;
  for (const Matrix& v : mp.values) d = std::max(d, spectral_norm(v));
  return d;
}

}  // namespace

TEST_CASE("naive schedule folds the pre-committed gains") {
  const Problem p = load_problem_file(config_path("scalar_meanfield.json"));
  const RiccatiTriple tri = solve_precommitted_riccati(p);
  const GainSchedule pre = build_precommitted_strategy(p, tri, 0.0);
  const GainSchedule naive = build_naive_strategy(p, tri);
  CHECK(naive.kind == GainSchedule::Kind::Naive);
  for (int k = 0; k <= p.grid.N; ++k) {
    CHECK((naive.psi.at(k) - (pre.psi.at(k) + pre.psiBar.at(k))).norm() == 0.0);
    CHECK((naive.psiTilde.at(k) - pre.psiTilde.at(k)).norm() == 0.0);
    CHECK(naive.psiBar.at(k).norm() == 0.0);
  }
}

TEST_CASE("anchor time is recorded and validated") {
  const Problem p = load_problem_file(config_path("scalar_meanfield.json"));
  const RiccatiTriple tri = solve_precommitted_riccati(p);
  const GainSchedule g = build_precommitted_strategy(p, tri, 0.25);
  CHECK(g.t == 0.25);
  CHECK(g.kind == GainSchedule::Kind::PreCommitted);
  try {
    build_precommitted_strategy(p, tri, p.grid.T + 0.5);
    FAIL("expected a grid error");
  } catch (const Error& e) {
    CHECK(e.code() == "grid");
  }
  CHECK_THROWS_AS(build_precommitted_strategy(p, tri, 0.12345), Error);
}

TEST_CASE("all three notions coincide without conditional or plain mean terms") {
  // reduction.json still has Atilde/Ctilde/Qtilde/Gtilde, so only the
  // conditional channel is empty: pre-committed and naive must agree with the
  // equilibrium schedule once the anchoring distinction disappears.
  const Problem p = load_problem_file(config_path("scalar_classical.json"));
  const RiccatiTriple tri = solve_precommitted_riccati(p);
  const EquilibriumTriple eq = solve_equilibrium_riccati(p);
  const GainSchedule pre = build_precommitted_strategy(p, tri, 0.0);
  const GainSchedule naive = build_naive_strategy(p, tri);
  const GainSchedule equi = build_equilibrium_strategy(p, eq);
  CHECK(max_path_distance(pre.psi, naive.psi) < 1e-13);
  CHECK(max_path_distance(naive.psi, equi.psi) < 1e-9);
  CHECK(max_path_distance(naive.psiTilde, equi.psiTilde) < 1e-9);
  CHECK(max_norm_along(pre.psiBar) < 1e-13);
  CHECK(max_norm_along(pre.psiTilde) < 1e-13);
}

TEST_CASE("conditional-term-free problems keep the state gain shared") {
  const Problem p = load_problem_file(config_path("reduction.json"));
  const RiccatiTriple tri = solve_precommitted_riccati(p);
  const EquilibriumTriple eq = solve_equilibrium_riccati(p);
  const GainSchedule naive = build_naive_strategy(p, tri);
  const GainSchedule equi = build_equilibrium_strategy(p, eq);
  CHECK(max_path_distance(naive.psi, equi.psi) < 1e-8);
  CHECK(max_path_distance(naive.psiTilde, equi.psiTilde) < 1e-8);
}

TEST_CASE("conditional terms separate naive from equilibrium gains") {
  const Problem p = load_problem_file(config_path("scalar_meanfield.json"));
  const RiccatiTriple tri = solve_precommitted_riccati(p);
  const EquilibriumTriple eq = solve_equilibrium_riccati(p);
  const GainSchedule naive = build_naive_strategy(p, tri);
  const GainSchedule equi = build_equilibrium_strategy(p, eq);
  double gap = 0.0;
  for (int k = 0; k <= p.grid.N; ++k) {
    gap = std::max(gap, (naive.psi.at(k) - equi.psi.at(k)).norm());
  }
  CHECK(gap > 1e-3);
}

TEST_CASE("pointwise feedback combines the three channels by kind") {
  const Problem p = load_problem_file(config_path("mf2d.json"));
  const RiccatiTriple tri = solve_precommitted_riccati(p);
  const int k = 17;
  const Vector x = (Vector(2) << 0.7, -0.4).finished();
  const Vector xc = (Vector(2) << 0.5, -0.1).finished();
  const Vector xm = (Vector(2) << 0.4, 0.2).finished();

  const GainSchedule pre = build_precommitted_strategy(p, tri, 0.0);
  const Vector u_pre = apply_feedback(pre, k, x, xc, xm);
  const Vector want_pre =
      pre.psi.at(k) * x + pre.psiBar.at(k) * xc + pre.psiTilde.at(k) * xm;
  CHECK((u_pre - want_pre).norm() < 1e-14);

  const GainSchedule naive = build_naive_strategy(p, tri);
  const Vector u_naive = apply_feedback(naive, k, x, xc, xm);
  const Vector want_naive = naive.psi.at(k) * x + naive.psiTilde.at(k) * xm;
  CHECK((u_naive - want_naive).norm() < 1e-14);
  // The conditional-mean slot must be dead weight for the folded kinds.
  const Vector u_naive2 = apply_feedback(naive, k, x, 100.0 * xc, xm);
  CHECK((u_naive - u_naive2).norm() == 0.0);
}

TEST_CASE("gain schedules carry one block per grid node") {
  const Problem p = load_problem_file(config_path("scalar_meanfield.json"));
  const RiccatiTriple tri = solve_precommitted_riccati(p);
  const GainSchedule g = build_precommitted_strategy(p, tri, 0.0);
  CHECK(static_cast<int>(g.psi.values.size()) == p.grid.N + 1);
  CHECK(g.psi.at(0).rows() == p.dims.m);
  CHECK(g.psi.at(0).cols() == p.dims.n);
}
