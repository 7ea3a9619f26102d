#pragma once
// Numerical certification of the structural claims: the stationarity system
// satisfied by the pre-committed pair, convexity of the cost in control
// perturbations, the quadratic representation of conditional mean-field
// functionals, local optimality of the equilibrium feedback, and the
// time-consistency reductions when conditional-expectation terms vanish.

#include <string>

#include "mfcontrol/riccati.hpp"
#include "mfcontrol/simulate.hpp"

namespace mfc {

struct CheckReport {
  std::string name;
  double statistic = 0.0;
  double threshold = 0.0;
  bool passed = false;
  json details;
};

inline json check_report_to_json(const CheckReport& r) {
  return json{{"name", r.name},
              {"statistic", r.statistic},
              {"threshold", r.threshold},
              {"passed", r.passed},
              {"details", r.details}};
}

// Adjoint pair reconstructed from the decoupling ansatz along simulated
// paths: Y = P(X - M) + Pi(M - Mbar) + Phi Mbar and Z = P(CX + Cbar M +
// Ctilde Mbar + Du), where M and Mbar are the conditional and plain means of
// the discrete state chain. One n x (N+1) matrix per path and channel.
struct AdjointPath {
  std::vector<Matrix> Y;
  std::vector<Matrix> Z;
};

AdjointPath reconstruct_adjoint(const Problem& p, const RiccatiTriple& tri,
                                const PathEnsemble& ens);

// Root-mean-square residual of R u + B^T Y + D^T Z along a pre-committed
// ensemble; the exact pair makes it vanish, so the statistic isolates the
// time-discretization error and must shrink under grid refinement.
CheckReport check_stationarity(const Problem& p, const RiccatiTriple& tri, const PathEnsemble& ens,
                               double threshold = 1e-2);

// Simulates J(ip; u* + lambda v) for a constant perturbation direction v
// under common random numbers, fits a quadratic in lambda, and reports
// |linear| / quadratic. Also asserts J(lambda) >= J(0) - 3 SE for every
// lambda. A quadratic coefficient indistinguishable from zero is reported as
// degenerate, not failed; one negative beyond noise fails.
CheckReport check_convexity_perturbation(const Problem& p, const InitialPair& ip,
                                         const std::vector<double>& lambdas, const Vector& v,
                                         const SimConfig& sim, double threshold = 0.05);

// Monte Carlo evaluation of the quadratic functional along the uncontrolled
// dynamics against the closed-form value from solve_lyapunov_quadruple.
// For a Gaussian initial pair with input.tau < ip.t, tau_cov_fraction of the
// covariance is attributed to tau-measurable randomness (all of it when
// tau == ip.t). statistic = |MC - analytic| / (3 SE + discretization
// allowance); the allowance is calibrated by one coarse-grid rerun when the
// grid permits.
CheckReport check_representation(const Problem& p, const LyapunovInput& input,
                                 const InitialPair& ip, const SimConfig& sim,
                                 double tau_cov_fraction = 0.5);

// A spike candidate u = K X(t) + u0 applied on [t, t+eps).
struct ControlCandidate {
  Matrix K;   // m x n
  Vector u0;  // m
  std::string label;
};

// For each candidate and eps, estimates D(eps) = (J(spike) - J(equilibrium))
// / eps with common random numbers, Richardson-extrapolates over the two
// smallest eps, and compares against the analytic first-variation quadratic
// at time t. The equilibrium control itself is always prepended as the zero
// case. Passes iff every extrapolated D matches its analytic value within
// the combined allowance and is above -1e-3 * scale.
CheckReport check_equilibrium_local_optimality(const Problem& p, const EquilibriumTriple& tri,
                                               const InitialPair& ip, double t,
                                               const std::vector<ControlCandidate>& candidates,
                                               const std::vector<double>& eps_list,
                                               const SimConfig& sim);

// With all conditional-expectation coefficients zero, the three solution
// notions collapse: statistic = max node distance over {Pi - P, GammaBar -
// Gamma, Gamma - P, GammaTilde - Phi, the Psi1/Psi2 schedule gaps, and the
// pre-committed conditional gain}. Errors if called on a problem with active
// conditional-expectation terms.
CheckReport check_reductions(const Problem& p, double threshold = 1e-8);

}  // namespace mfc
