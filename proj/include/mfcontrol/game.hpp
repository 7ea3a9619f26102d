#pragma once
// Partition-based constructions: the per-cell re-optimized feedback rollout,
// the multi-person differential game with its piecewise Riccati/Lyapunov
// systems, and mesh-refinement convergence studies against the limit objects.

#include "mfcontrol/riccati.hpp"
#include "mfcontrol/simulate.hpp"

namespace mfc {

// A partition of [0, T] restricted to master-grid nodes, so cell boundaries
// align with ODE/SDE steps and boundary values are imposed bit-exactly.
struct Partition {
  std::vector<int> indices;  // strictly increasing, first = 0, last = N

  int cells() const { return static_cast<int>(indices.size()) - 1; }
  double mesh(const TimeGrid& grid) const;
  // Cell containing a grid node; cells are [a, b) except the last, which is
  // closed on the right.
  int locate_cell(int node) const;
};

Partition uniform_partition(const TimeGrid& grid, int cells);

// Piecewise-defined solution of the partition game. P_D/Pi_D/Phi_D solve the
// local Riccati triple on each cell with boundary data pulled from the
// Gamma-family to the right; GammaCheck_D resets to Gamma_D at cell starts
// while Gamma_D/GammaBar_D/GammaTilde_D are continuous. Values at interior
// partition nodes are the imposed boundary values.
struct PartitionSolution {
  Partition part;
  MatrixPath P_D, Pi_D, Phi_D;
  MatrixPath GammaCheck_D, Gamma_D, GammaBar_D, GammaTilde_D;
  GainSchedule gains_D;  // kind PiecewiseGame, per-node gains from the triple
};

PartitionSolution multiperson_game_solve(const Problem& p, const Partition& part);

struct ConvergenceReport {
  std::vector<double> meshes;  // strictly decreasing
  std::vector<double> errors;  // distance to the limit object per mesh
  double fitted_rate = 0.0;    // least-squares slope of log error vs log mesh
  json details;
};

// errors[k] = max over grid nodes of the spectral-norm distance between the
// partition Gamma-family and the limit triple; details carry per-mesh max
// spectral norms for uniform-boundedness checks.
ConvergenceReport game_convergence_study(const Problem& p, const std::vector<Partition>& parts,
                                         const EquilibriumTriple& limit);

// Rollout of the per-cell re-optimized feedback: global pre-committed gains
// applied with the conditional-expectation channel re-anchored at every cell
// start. Controls are recorded in the returned ensemble.
PathEnsemble naive_partition_rollout(const Problem& p, const Partition& part,
                                     const InitialPair& ip, const SimConfig& sim);

// errors[k] = L2 distance sqrt(E \int |u_part - u_limit|^2 ds) estimated with
// common random numbers across partitions against the instantaneous-anchor
// limit loop.
ConvergenceReport naive_convergence_study(const Problem& p, const std::vector<Partition>& parts,
                                          const InitialPair& ip, const SimConfig& sim);

}  // namespace mfc
