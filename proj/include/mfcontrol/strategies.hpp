#pragma once
// Feedback gain schedules for the three solution notions plus the piecewise
// game strategy, and the pointwise feedback map.

#include "mfcontrol/riccati.hpp"

namespace mfc {

// Control at node k is psi[k] x + psiBar[k] xc + psiTilde[k] xm, where xc is
// the conditional mean for the schedule's anchor and xm the full mean.
//   PreCommitted: anchor fixed at t; all three blocks active.
//   Naive / Equilibrium: psi holds Psi_1, psiTilde holds Psi_2, psiBar = 0;
//     the conditional-mean slot is unused by the feedback.
//   PiecewiseGame: anchors at cell starts listed in `partition`.
struct GainSchedule {
  enum class Kind { PreCommitted, Naive, Equilibrium, PiecewiseGame };

  Kind kind = Kind::PreCommitted;
  double t = 0.0;              // PreCommitted anchor time
  std::vector<int> partition;  // PiecewiseGame cell boundary node indices
  MatrixPath psi, psiBar, psiTilde;
};

// Pre-committed feedback anchored at grid node t:
// u = psi X + psiBar E_t[X] + psiTilde E[X] with gains from (P, Pi, Phi).
GainSchedule build_precommitted_strategy(const Problem& p, const RiccatiTriple& tri, double t);

// Naive feedback u = Psi1_hat X + Psi2_hat E[X] with Psi1_hat = psi + psiBar
// and Psi2_hat = psiTilde of the pre-committed schedule.
GainSchedule build_naive_strategy(const Problem& p, const RiccatiTriple& tri);

// Equilibrium feedback u = Psi1 X + Psi2 E[X] from the equilibrium system.
GainSchedule build_equilibrium_strategy(const Problem& p, const EquilibriumTriple& eq);

Vector apply_feedback(const GainSchedule& g, int k, const Vector& x, const Vector& cond_mean,
                      const Vector& mean);

}  // namespace mfc
