#pragma once
// Shared path-simulation core: gain schedules resolved into per-node affine
// loop coefficients, the deterministic mean channel on a half grid, one-cell
// conditional-mean transfer operators, and per-path Euler-Maruyama stepping.
// simulate, game, and verify all drive their paths through this layer so that
// common-random-number comparisons are exact by construction.

#include <cstdint>
#include <functional>

#include "mfcontrol/problem.hpp"
#include "mfcontrol/rng.hpp"
#include "mfcontrol/strategies.hpp"

namespace mfc::detail {

// Per-node resolved affine system on (x, xc, m):
//   drift     = Fx x + Fc xc + Fm m   (+ Bw u_ext inside the window)
//   diffusion = Gx x + Gc xc + Gm m   (+ Dw u_ext inside the window)
//   control   = Kx x + Kc xc + Km m   (+ u_ext inside the window)
// where xc is the conditional-mean channel (restarted to x at anchor nodes)
// and m the deterministic mean path.
struct LoopCoeffs {
  TimeGrid grid;
  int k0 = 0;
  int n = 0;
  int m_dim = 0;
  std::vector<Matrix> Fx, Fc, Fm, Gx, Gc, Gm, Kx, Kc, Km;  // node 0..N
  std::vector<char> is_anchor;      // size N+1, is_anchor[k0] = 1
  std::vector<double> anchor_time;  // anchor in force at each node
  int win_lo = 0, win_hi = 0;       // external-control window [win_lo, win_hi)
  std::vector<Matrix> Bw, Dw;       // control blocks, filled on window nodes
  Vector u_ext_mean;                // E[u_ext]; drives the mean ODE in the window

  bool in_window(int k) const { return k >= win_lo && k < win_hi; }
};

// Resolve a gain schedule into loop coefficients on [node k0, T].
LoopCoeffs build_loop(const Problem& p, const GainSchedule& g, int k0);

// Same loop, but on window nodes [win_lo, win_hi) the raw dynamics run under
// an external per-path control (gains suppressed there).
LoopCoeffs build_windowed_loop(const Problem& p, const GainSchedule& g, int k0, int win_lo,
                               int win_hi, const Vector& u_ext_mean);

// Uncontrolled dynamics taken directly from Lyapunov-input coefficient blocks.
LoopCoeffs build_plain_loop(const LyapunovInput& input, const TimeGrid& grid, int n, int m_dim,
                            int k0);

// Deterministic mean path plus per-cell conditional-mean transfers:
//   xc_{k+1} = mcT[k] xc_k + mcIn[k] (+ mcW[k] u_ext on window cells),
// the RK4 update of d/ds xc = (Fx+Fc) xc + Fm m(s) (+ Bw u_ext) with the mean
// sampled on the half grid so the stages are consistent to fourth order.
struct PreparedLoop {
  LoopCoeffs loop;
  std::vector<Vector> mean_half;  // index j <-> time j*h/2, size 2N+1
  std::vector<Matrix> mcT;        // size N, cells k0..N-1 filled
  std::vector<Vector> mcIn;
  std::vector<Matrix> mcW;

  const Vector& mean_at(int k) const { return mean_half[static_cast<std::size_t>(2 * k)]; }
};

PreparedLoop prepare_loop(LoopCoeffs loop, const Vector& mean0);

// Live state of one path. xtau is an optional extra conditional-mean channel
// with a caller-chosen start (same transfer, never restarted).
struct PathState {
  Vector x, xc, xtau;
  bool has_tau = false;
};

void init_path(const PreparedLoop& pl, const Vector& x0, PathState& st);

Vector path_control(const PreparedLoop& pl, int k, const PathState& st, const Vector* u_ext);

// Advance node k -> k+1 with Brownian increment dw; u_ext may be null outside
// the window. Throws Error("nonfinite") on blow-up.
void step_path(const PreparedLoop& pl, int k, double dw, const Vector* u_ext, PathState& st);

inline double brownian_increment(std::uint64_t seed, std::uint64_t path, int step, double h) {
  return std::sqrt(h) * rng::normal(seed, path, static_cast<std::uint64_t>(step), 0);
}

// Symmetric PSD square root; eigenvalues below -psd_tol raise an error and
// small negatives are clamped to zero.
Matrix symmetric_sqrt(const Matrix& cov, double psd_tol = 1e-10);

// Worker count: MFC_THREADS when set, else hardware concurrency (capped).
int thread_count();

// Runs visit(path) once for every path in [0, paths), split over worker
// threads in contiguous chunks. Results must be written to per-path slots;
// reductions are the caller's job (pairwise, order-independent).
void for_each_path(int paths, const std::function<void(int)>& visit);

}  // namespace mfc::detail
