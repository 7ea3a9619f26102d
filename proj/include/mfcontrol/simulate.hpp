#pragma once
// Euler-Maruyama simulation of closed-loop and perturbed mean-field dynamics,
// with expectation and conditional-expectation channels propagated by exact
// auxiliary ODEs, plus Monte Carlo cost evaluation.

#include <cstdint>

#include "mfcontrol/strategies.hpp"

namespace mfc {

struct SimConfig {
  int paths = 1000;
  std::uint64_t seed = 0;
  double t0 = 0.0;          // start node, must equal ip.t
  bool antithetic = false;  // pair 2j/2j+1 with mirrored draws
};

// states/cond_means are n x (N+1) per path, controls m x (N+1); nodes before
// k0 hold the initial column. cond_means carries the conditional-expectation
// channel the schedule kind prescribes (fixed anchor for PreCommitted,
// cell-start anchors for PiecewiseGame, the start node otherwise);
// anchor_times records the anchor in force at each node.
struct PathEnsemble {
  TimeGrid grid;
  Dimensions dims;
  int k0 = 0;
  std::vector<double> anchor_times;   // size N+1
  std::vector<Vector> mean;           // analytic mean path, size N+1
  std::vector<Matrix> states;         // per path
  std::vector<Matrix> cond_means;     // per path
  std::vector<Matrix> controls;       // per path
  std::vector<Vector> increments;     // per path, N entries (zeros before k0)
};

struct CostEstimate {
  double value = 0.0;
  double std_error = 0.0;
  int paths = 0;
};

PathEnsemble simulate_closed_loop(const Problem& p, const GainSchedule& g, const InitialPair& ip,
                                  const SimConfig& sim);

// Spike variation around an equilibrium schedule: from ip the equilibrium
// loop runs to node t; on [t, t+eps) the raw dynamics carry the constant
// control u_const with the conditional mean re-anchored at t; from t+eps the
// equilibrium loop resumes. The returned ensemble starts at node t.
PathEnsemble simulate_perturbed(const Problem& p, const GainSchedule& g, const InitialPair& ip,
                                double t, double eps, const Vector& u_const,
                                const SimConfig& sim);

// Trapezoid running cost plus terminal terms, averaged over paths. The E_t
// blocks read cond_means, so the ensemble's anchors must equal t whenever the
// problem has active Qbar/Gbar blocks.
CostEstimate estimate_cost(const Problem& p, const PathEnsemble& ens, double t);

// Per-path initial draw: the deterministic value, or mean + S z with S the
// symmetric square root of the covariance and z keyed by (seed, path).
Vector sample_initial(const InitialPair& ip, const Matrix& sqrt_cov, std::uint64_t seed,
                      std::uint64_t path);

}  // namespace mfc
