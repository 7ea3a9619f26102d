#pragma once
// Backward matrix ODE integration (classical fixed-step RK4) and the
// Riccati / Lyapunov systems behind the three feedback solution notions.
//
// Solvers integrate stacked blocks jointly; coupled blocks see each other's
// current stage values, so the natural triangular order (P before Pi before
// Phi, gains before the Lyapunov blocks) is honored at every RK stage and
// the scheme keeps classical order 4.

#include <functional>
#include <vector>

#include "mfcontrol/problem.hpp"

namespace mfc {

struct GainSchedule;  // strategies.hpp

// Matrix-valued function of time sampled at grid nodes.
struct MatrixPath {
  TimeGrid grid;
  std::vector<Matrix> values;  // size N+1

  const Matrix& at(int k) const { return values[static_cast<std::size_t>(k)]; }
  Matrix& at(int k) { return values[static_cast<std::size_t>(k)]; }
};

// Pre-committed system:
//   P:   loop A,          quadratic C' P C,             weight Q,          P(T)   = G
//   Pi:  loop A+Abar,     quadratic (C+Cbar)' P (.),    weight Q+Qbar,     Pi(T)  = G+Gbar
//   Phi: loop A+Abar+Atilde, quadratic with full C sum, weight Q+Qbar+Qtilde, Phi(T) = G+Gbar+Gtilde
// each with the subtracted numerator/denominator term built from P.
struct RiccatiTriple {
  MatrixPath P, Pi, Phi;
};

// Equilibrium system Gamma, GammaBar, GammaTilde (closed-loop Lyapunov form
// with gains computed from the system itself at every stage).
struct EquilibriumTriple {
  MatrixPath Gamma, GammaBar, GammaTilde;
};

// Inputs of the four-equation Lyapunov system for the functional with
// weights Q1 (state), Q2 (E_t block), Q3 (E_tau block), Q4 (E block) and
// terminal blocks G1 (state), G3 (E_tau), G4 (E).
struct LyapunovInput {
  Coefficient cA, cAbar, cAtilde;  // n x n drift blocks
  Coefficient cC, cCbar, cCtilde;  // n x n diffusion blocks
  Coefficient cQ1, cQ2, cQ3, cQ4;  // n x n symmetric running weights
  Matrix cG1, cG3, cG4;            // terminal blocks
  double tau = 0.0;                // evaluation anchor, <= evaluation time
};

struct LyapunovQuad {
  MatrixPath GammaCheck, Gamma, GammaBar, GammaTilde;
};

// Derivative callback for the stacked backward integrator. Coefficients are
// frozen over each step at the step's left node (left-value convention);
// left_node identifies that node so lookups stay exact at RK stage times.
using BackwardRhs = std::function<void(int left_node, double s, const std::vector<Matrix>& y,
                                       std::vector<Matrix>& dy)>;

// Integrates y' = rhs backward from node_hi (terminal data, stored bit-exact)
// down to node_lo with classical RK4 and per-step re-symmetrization of square
// blocks. node_hi == -1 means the last node. Nodes outside [node_lo, node_hi]
// are filled with the nearest computed value. Throws Error("nonfinite") with
// the failing time when the solution leaves the representable range.
std::vector<MatrixPath> integrate_backward_matrix_ode(const TimeGrid& grid,
                                                      const std::vector<Matrix>& terminal,
                                                      const BackwardRhs& rhs, int node_lo = 0,
                                                      int node_hi = -1);

// Solves K x = rhs for symmetric positive definite K (pivoted LDLT). Throws
// Error("factorization") naming `time` when the smallest pivot is below
// inv_tol.
Matrix spd_solve(const Matrix& K, const Matrix& rhs, double time, double inv_tol = 1e-10);

struct GainBlocks {
  Matrix psi, psiBar, psiTilde;  // m x n
};

// Feedback gains from a solution triple (X1, X2, X3):
//   psi      = -(R + D'X1 D)^{-1} (B'X1 + D'X1 C)
//   psiBar   = -(R + D'X1 D)^{-1} (B'(X2-X1) + D'X1 Cbar)
//   psiTilde = -(R + D'X1 D)^{-1} (B'(X3-X2) + D'X1 Ctilde)
// with (X1,X2,X3) = (P,Pi,Phi), (Gamma,GammaBar,GammaTilde), or a per-cell
// triple in the game construction.
GainBlocks feedback_gains(const Problem& p, int k, const Matrix& X1, const Matrix& X2,
                          const Matrix& X3, double time, double inv_tol = 1e-10);

RiccatiTriple solve_precommitted_riccati(const Problem& p);

EquilibriumTriple solve_equilibrium_riccati(const Problem& p);

// node_lo restricts integration to [node_lo, N]; earlier nodes repeat the
// node_lo value.
LyapunovQuad solve_lyapunov_quadruple(const LyapunovInput& input, const TimeGrid& grid,
                                      int node_lo = 0);

// Closed-loop Lyapunov inputs for a PreCommitted, Naive, or Equilibrium
// schedule: drift/diffusion blocks absorb B/D times the gains, running
// weights absorb the control cost of the feedback.
LyapunovInput closed_loop_lyapunov_input(const Problem& p, const GainSchedule& gains);

// Representation value at node k for an initial pair anchored at its own
// evaluation time (tau = t): deterministic xi gives <GammaTilde xi, xi>,
// Gaussian xi gives tr(GammaBar Sigma) + <GammaTilde mu, mu>.
double quadratic_value_at(const MatrixPath& GammaBar, const MatrixPath& GammaTilde, int k,
                          const InitialPair& ip);

// Exact cost J(ip.t, xi) of the closed loop generated by `gains`
// (PreCommitted anchored at ip.t, Naive, or Equilibrium), computed through
// the Lyapunov representation.
double closed_loop_cost_quadratic(const Problem& p, const GainSchedule& gains,
                                  const InitialPair& ip);

}  // namespace mfc
