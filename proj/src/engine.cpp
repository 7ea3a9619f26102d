// Loop resolution, mean/conditional-mean channels, and per-path stepping.

#include "mfcontrol/detail/engine.hpp"

#include <cstdlib>
#include <exception>
#include <string>
#include <thread>

namespace mfc::detail {

namespace {

void check_schedule(const Problem& p, const GainSchedule& g) {
  const int N = p.grid.N;
  const auto expect = static_cast<std::size_t>(N + 1);
  if (g.psi.values.size() != expect || g.psiBar.values.size() != expect ||
      g.psiTilde.values.size() != expect || g.psi.grid.N != N ||
      std::abs(g.psi.grid.T - p.grid.T) > 1e-12 * std::max(1.0, p.grid.T)) {
    throw Error("precondition", "gain schedule does not match the problem grid",
                {{"schedule_nodes", g.psi.values.size()}, {"grid_nodes", expect}});
  }
  for (int k = 0; k <= N; ++k) {
    if (g.psi.at(k).rows() != p.dims.m || g.psi.at(k).cols() != p.dims.n) {
      throw Error("shape", "gain block has wrong shape", {{"node", k}});
    }
  }
}

void size_loop(LoopCoeffs& lc) {
  const auto sz = static_cast<std::size_t>(lc.grid.N + 1);
  lc.Fx.resize(sz);
  lc.Fc.resize(sz);
  lc.Fm.resize(sz);
  lc.Gx.resize(sz);
  lc.Gc.resize(sz);
  lc.Gm.resize(sz);
  lc.Kx.resize(sz);
  lc.Kc.resize(sz);
  lc.Km.resize(sz);
  lc.Bw.resize(sz);
  lc.Dw.resize(sz);
  lc.is_anchor.assign(sz, 0);
  lc.anchor_time.assign(sz, lc.grid.node(lc.k0));
}

}  // namespace

LoopCoeffs build_loop(const Problem& p, const GainSchedule& g, int k0) {
  check_schedule(p, g);
  if (k0 < 0 || k0 >= p.grid.N) {
    throw Error("precondition", "start node out of range", {{"k0", k0}, {"N", p.grid.N}});
  }
  LoopCoeffs lc;
  lc.grid = p.grid;
  lc.k0 = k0;
  lc.n = p.dims.n;
  lc.m_dim = p.dims.m;
  size_loop(lc);
  lc.is_anchor[static_cast<std::size_t>(k0)] = 1;

  const bool anchored =
      g.kind == GainSchedule::Kind::PreCommitted || g.kind == GainSchedule::Kind::PiecewiseGame;
  if (g.kind == GainSchedule::Kind::PreCommitted && p.grid.index_of(g.t) != k0) {
    throw Error("precondition", "pre-committed schedule anchored at a different node",
                {{"anchor", g.t}, {"start", p.grid.node(k0)}});
  }

  for (int k = 0; k <= p.grid.N; ++k) {
    const Matrix& B = p.B(k);
    const Matrix& D = p.D(k);
    const Matrix& psi = g.psi.at(k);
    const Matrix& psiBar = g.psiBar.at(k);
    const Matrix& psiTilde = g.psiTilde.at(k);
    if (anchored) {
      lc.Fx[k] = p.A(k) + B * psi;
      lc.Fc[k] = p.Abar(k) + B * psiBar;
      lc.Gx[k] = p.C(k) + D * psi;
      lc.Gc[k] = p.Cbar(k) + D * psiBar;
      lc.Kc[k] = psiBar;
    } else {
      // Naive/Equilibrium loops anchor the conditional expectation at the
      // running instant, so the bar blocks act on the state itself.
      lc.Fx[k] = p.A(k) + p.Abar(k) + B * psi;
      lc.Fc[k] = Matrix::Zero(p.dims.n, p.dims.n);
      lc.Gx[k] = p.C(k) + p.Cbar(k) + D * psi;
      lc.Gc[k] = Matrix::Zero(p.dims.n, p.dims.n);
      lc.Kc[k] = Matrix::Zero(p.dims.m, p.dims.n);
    }
    lc.Fm[k] = p.Atilde(k) + B * psiTilde;
    lc.Gm[k] = p.Ctilde(k) + D * psiTilde;
    lc.Kx[k] = psi;
    lc.Km[k] = psiTilde;
  }

  if (g.kind == GainSchedule::Kind::PreCommitted) {
    for (double& a : lc.anchor_time) a = g.t;
  } else if (g.kind == GainSchedule::Kind::PiecewiseGame) {
    if (g.partition.size() < 2 || g.partition.front() != 0 || g.partition.back() != p.grid.N) {
      throw Error("precondition", "piecewise schedule has no valid partition");
    }
    for (std::size_t j = 0; j + 1 < g.partition.size(); ++j) {
      const int a = g.partition[j];
      const int b = g.partition[j + 1];
      if (a >= k0 && a < p.grid.N) lc.is_anchor[static_cast<std::size_t>(a)] = 1;
      const double ta = p.grid.node(std::max(a, k0));
      // Last cell is right-closed: node N keeps the final cell's anchor.
      const int hi = (b == p.grid.N) ? b : b - 1;
      for (int k = a; k <= hi; ++k) {
        if (k >= k0) lc.anchor_time[static_cast<std::size_t>(k)] = ta;
      }
    }
    lc.is_anchor[static_cast<std::size_t>(k0)] = 1;
  }
  return lc;
}

LoopCoeffs build_windowed_loop(const Problem& p, const GainSchedule& g, int k0, int win_lo,
                               int win_hi, const Vector& u_ext_mean) {
  if (!(k0 <= win_lo && win_lo <= win_hi && win_hi <= p.grid.N)) {
    throw Error("precondition", "invalid control window",
                {{"win_lo", win_lo}, {"win_hi", win_hi}, {"k0", k0}, {"N", p.grid.N}});
  }
  if (u_ext_mean.size() != p.dims.m) {
    throw Error("shape", "external control mean has wrong size",
                {{"expected", p.dims.m}, {"got", u_ext_mean.size()}});
  }
  LoopCoeffs lc = build_loop(p, g, k0);
  lc.win_lo = win_lo;
  lc.win_hi = win_hi;
  lc.u_ext_mean = u_ext_mean;
  for (int k = win_lo; k < win_hi; ++k) {
    lc.Fx[k] = p.A(k);
    lc.Fc[k] = p.Abar(k);
    lc.Fm[k] = p.Atilde(k);
    lc.Gx[k] = p.C(k);
    lc.Gc[k] = p.Cbar(k);
    lc.Gm[k] = p.Ctilde(k);
    lc.Kx[k] = Matrix::Zero(p.dims.m, p.dims.n);
    lc.Kc[k] = Matrix::Zero(p.dims.m, p.dims.n);
    lc.Km[k] = Matrix::Zero(p.dims.m, p.dims.n);
    lc.Bw[k] = p.B(k);
    lc.Dw[k] = p.D(k);
  }
  return lc;
}

LoopCoeffs build_plain_loop(const LyapunovInput& input, const TimeGrid& grid, int n, int m_dim,
                            int k0) {
  LoopCoeffs lc;
  lc.grid = grid;
  lc.k0 = k0;
  lc.n = n;
  lc.m_dim = m_dim;
  size_loop(lc);
  lc.is_anchor[static_cast<std::size_t>(k0)] = 1;
  const Matrix zeroK = Matrix::Zero(m_dim, n);
  for (int k = 0; k <= grid.N; ++k) {
    lc.Fx[k] = input.cA.at(k);
    lc.Fc[k] = input.cAbar.at(k);
    lc.Fm[k] = input.cAtilde.at(k);
    lc.Gx[k] = input.cC.at(k);
    lc.Gc[k] = input.cCbar.at(k);
    lc.Gm[k] = input.cCtilde.at(k);
    lc.Kx[k] = zeroK;
    lc.Kc[k] = zeroK;
    lc.Km[k] = zeroK;
  }
  return lc;
}

PreparedLoop prepare_loop(LoopCoeffs loop, const Vector& mean0) {
  if (mean0.size() != loop.n) {
    throw Error("shape", "initial mean has wrong size",
                {{"expected", loop.n}, {"got", mean0.size()}});
  }
  PreparedLoop pl;
  const int N = loop.grid.N;
  const double h = loop.grid.step();
  const double h2 = 0.5 * h;

  pl.mean_half.assign(static_cast<std::size_t>(2 * N + 1), mean0);
  Vector y = mean0;
  for (int k = loop.k0; k < N; ++k) {
    const Matrix M = loop.Fx[k] + loop.Fc[k] + loop.Fm[k];
    Vector b = Vector::Zero(loop.n);
    if (loop.in_window(k)) b = loop.Bw[k] * loop.u_ext_mean;
    for (int half = 0; half < 2; ++half) {
      const Vector k1 = M * y + b;
      const Vector k2 = M * (y + 0.5 * h2 * k1) + b;
      const Vector k3 = M * (y + 0.5 * h2 * k2) + b;
      const Vector k4 = M * (y + h2 * k3) + b;
      y += (h2 / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      pl.mean_half[static_cast<std::size_t>(2 * k + half + 1)] = y;
    }
    if (!y.allFinite()) {
      throw Error("nonfinite", "mean path blew up", {{"time", loop.grid.node(k + 1)}});
    }
  }

  pl.mcT.resize(static_cast<std::size_t>(N));
  pl.mcIn.resize(static_cast<std::size_t>(N));
  pl.mcW.resize(static_cast<std::size_t>(N));
  const Matrix I = Matrix::Identity(loop.n, loop.n);
  for (int k = loop.k0; k < N; ++k) {
    const Matrix M = loop.Fx[k] + loop.Fc[k];
    const Matrix M2 = M * M;
    const Matrix M3 = M2 * M;
    // RK4 stage-response operators for d/ds xc = M xc + v(s) over one cell,
    // with the input sampled at the left node, midpoint, and right node.
    const Matrix T = I + h * M + (h * h / 2.0) * M2 + (h * h * h / 6.0) * M3 +
                     (h * h * h * h / 24.0) * M2 * M2;
    const Matrix E1 = (h / 6.0) * (I + h * M + (h * h / 2.0) * M2 + (h * h * h / 4.0) * M3);
    const Matrix E2 = (h / 6.0) * (4.0 * I + 2.0 * h * M + (h * h / 2.0) * M2);
    const Matrix E4 = (h / 6.0) * I;
    const std::size_t j = static_cast<std::size_t>(k);
    pl.mcT[j] = T;
    pl.mcIn[j] = E1 * (loop.Fm[k] * pl.mean_half[2 * j]) +
                 E2 * (loop.Fm[k] * pl.mean_half[2 * j + 1]) +
                 E4 * (loop.Fm[k] * pl.mean_half[2 * j + 2]);
    if (loop.in_window(k)) pl.mcW[j] = (E1 + E2 + E4) * loop.Bw[k];
  }

  pl.loop = std::move(loop);
  return pl;
}

void init_path(const PreparedLoop&, const Vector& x0, PathState& st) {
  st.x = x0;
  st.xc = x0;
  st.has_tau = false;
}

Vector path_control(const PreparedLoop& pl, int k, const PathState& st, const Vector* u_ext) {
  Vector u = pl.loop.Kx[k] * st.x + pl.loop.Kc[k] * st.xc + pl.loop.Km[k] * pl.mean_at(k);
  if (u_ext != nullptr && pl.loop.in_window(k)) u += *u_ext;
  return u;
}

void step_path(const PreparedLoop& pl, int k, double dw, const Vector* u_ext, PathState& st) {
  const LoopCoeffs& lc = pl.loop;
  const double h = lc.grid.step();
  const Vector& m = pl.mean_at(k);
  const bool win = u_ext != nullptr && lc.in_window(k);

  Vector drift = lc.Fx[k] * st.x + lc.Fc[k] * st.xc + lc.Fm[k] * m;
  Vector diff = lc.Gx[k] * st.x + lc.Gc[k] * st.xc + lc.Gm[k] * m;
  if (win) {
    drift += lc.Bw[k] * (*u_ext);
    diff += lc.Dw[k] * (*u_ext);
  }
  st.x += h * drift + dw * diff;

  const std::size_t j = static_cast<std::size_t>(k);
  if (lc.is_anchor[j + 1]) {
    st.xc = st.x;
  } else {
    st.xc = pl.mcT[j] * st.xc + pl.mcIn[j];
    if (win) st.xc += pl.mcW[j] * (*u_ext);
  }
  if (st.has_tau) {
    st.xtau = pl.mcT[j] * st.xtau + pl.mcIn[j];
    if (win) st.xtau += pl.mcW[j] * (*u_ext);
  }

  if (!st.x.allFinite()) {
    throw Error("nonfinite", "state blew up during simulation",
                {{"time", lc.grid.node(k + 1)}, {"step", k}});
  }
}

Matrix symmetric_sqrt(const Matrix& cov, double psd_tol) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(cov));
  if (es.info() != Eigen::Success) {
    throw Error("factorization", "eigendecomposition of covariance failed");
  }
  Vector lam = es.eigenvalues();
  for (int i = 0; i < lam.size(); ++i) {
    if (lam[i] < -psd_tol) {
      throw Error("precondition", "covariance is not positive semidefinite",
                  {{"min_eigenvalue", lam[i]}});
    }
    lam[i] = std::sqrt(std::max(lam[i], 0.0));
  }
  return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

int thread_count() {
  static const int cached = [] {
    if (const char* env = std::getenv("MFC_THREADS")) {
      const int v = std::atoi(env);
      if (v >= 1) return std::min(v, 64);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return static_cast<int>(std::min(hw == 0 ? 1u : hw, 16u));
  }();
  return cached;
}

void for_each_path(int paths, const std::function<void(int)>& visit) {
  const int workers = std::min(thread_count(), paths);
  if (workers <= 1) {
    for (int p = 0; p < paths; ++p) visit(p);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  const int chunk = (paths + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const int lo = w * chunk;
    const int hi = std::min(paths, lo + chunk);
    pool.emplace_back([&, w, lo, hi] {
      try {
        for (int p = lo; p < hi; ++p) visit(p);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace mfc::detail
