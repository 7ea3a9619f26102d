// Partition game solver and the two mesh-refinement convergence studies.

#include "mfcontrol/game.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mfcontrol/detail/engine.hpp"

namespace mfc {

namespace {

void validate_partition(const Partition& part, const TimeGrid& grid) {
  if (part.indices.size() < 2) {
    throw Error("grid", "partition needs at least two node indices");
  }
  if (part.indices.front() != 0 || part.indices.back() != grid.N) {
    throw Error("grid", "partition must start at node 0 and end at node N",
                {{"first", part.indices.front()}, {"last", part.indices.back()}, {"N", grid.N}});
  }
  for (std::size_t i = 1; i < part.indices.size(); ++i) {
    if (part.indices[i] <= part.indices[i - 1]) {
      throw Error("grid", "partition indices must be strictly increasing");
    }
  }
}

void validate_mesh_sequence(const std::vector<Partition>& parts, const TimeGrid& grid) {
  if (parts.empty()) throw Error("usage", "at least one partition required");
  double prev = std::numeric_limits<double>::infinity();
  for (const Partition& part : parts) {
    validate_partition(part, grid);
    const double m = part.mesh(grid);
    if (m >= prev) {
      throw Error("precondition", "partition meshes must be strictly decreasing",
                  {{"mesh", m}, {"previous", prev}});
    }
    prev = m;
  }
}

double fit_log_slope(const std::vector<double>& meshes, const std::vector<double>& errors) {
  const std::size_t n = meshes.size();
  if (n < 2) return 0.0;
  double mx = 0.0, my = 0.0;
  std::vector<double> xs(n), ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    xs[i] = std::log(meshes[i]);
    ys[i] = std::log(std::max(errors[i], 1e-16));
    mx += xs[i];
    my += ys[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  return sxx > 0.0 ? sxy / sxx : 0.0;
}

MatrixPath empty_path(const TimeGrid& grid) {
  MatrixPath mp;
  mp.grid = grid;
  mp.values.assign(static_cast<std::size_t>(grid.N + 1), Matrix());
  return mp;
}

// Shared by the public rollout op and the convergence study so both run the
// same schedule construction for a given pre-committed triple.
PathEnsemble rollout_with_triple(const Problem& p, const Partition& part,
                                 const RiccatiTriple& tri, const InitialPair& ip,
                                 const SimConfig& sim) {
  GainSchedule g = build_precommitted_strategy(p, tri, 0.0);
  g.kind = GainSchedule::Kind::PiecewiseGame;
  g.partition = part.indices;
  return simulate_closed_loop(p, g, ip, sim);
}

}  // namespace

double Partition::mesh(const TimeGrid& grid) const {
  double m = 0.0;
  for (std::size_t i = 1; i < indices.size(); ++i) {
    m = std::max(m, (indices[i] - indices[i - 1]) * grid.step());
  }
  return m;
}

int Partition::locate_cell(int node) const {
  if (indices.size() < 2 || node < indices.front() || node > indices.back()) {
    throw Error("index", "node outside the partition range", {{"node", node}});
  }
  // Right-closed last cell: the final node belongs to the last cell.
  if (node == indices.back()) return cells() - 1;
  const auto it = std::upper_bound(indices.begin(), indices.end(), node);
  return static_cast<int>(it - indices.begin()) - 1;
}

Partition uniform_partition(const TimeGrid& grid, int cells) {
  if (cells < 1 || grid.N % cells != 0) {
    throw Error("grid", "cell count must divide the master grid",
                {{"cells", cells}, {"N", grid.N}});
  }
  Partition part;
  const int w = grid.N / cells;
  for (int c = 0; c <= cells; ++c) part.indices.push_back(c * w);
  return part;
}

PartitionSolution multiperson_game_solve(const Problem& p, const Partition& part) {
  validate_partition(part, p.grid);
  const TimeGrid& grid = p.grid;

  PartitionSolution sol;
  sol.part = part;
  sol.P_D = empty_path(grid);
  sol.Pi_D = empty_path(grid);
  sol.Phi_D = empty_path(grid);
  sol.GammaCheck_D = empty_path(grid);
  sol.Gamma_D = empty_path(grid);
  sol.GammaBar_D = empty_path(grid);
  sol.GammaTilde_D = empty_path(grid);

  const Matrix G2 = p.coef.G + p.coef.Gbar;
  const Matrix G3 = G2 + p.coef.Gtilde;

  // One stacked integration per cell: the local Riccati triple {P, Pi, Phi}
  // (identical arithmetic to the global pre-committed solver, so a single
  // cell reproduces it bit-for-bit) plus the four Lyapunov blocks driven by
  // the stage-consistent local gains.
  BackwardRhs rhs = [&p](int k, double s, const std::vector<Matrix>& y, std::vector<Matrix>& dy) {
    const Matrix& P = y[0];
    const Matrix& Pi = y[1];
    const Matrix& Ph = y[2];
    const Matrix& Gc = y[3];
    const Matrix& Ga = y[4];
    const Matrix& Gb = y[5];
    const Matrix& Gt = y[6];
    const Matrix& A = p.A(k);
    const Matrix& B = p.B(k);
    const Matrix& C = p.C(k);
    const Matrix& D = p.D(k);
    const Matrix& R = p.R(k);

    const Matrix K = R + D.transpose() * P * D;
    const Matrix DP = D.transpose() * P;

    const Matrix S1 = B.transpose() * P + DP * C;
    dy[0] = -(P * A + A.transpose() * P + C.transpose() * P * C + p.Q(k) -
              S1.transpose() * spd_solve(K, S1, s));

    const Matrix A2 = A + p.Abar(k);
    const Matrix C2 = C + p.Cbar(k);
    const Matrix S2 = B.transpose() * Pi + DP * C2;
    dy[1] = -(Pi * A2 + A2.transpose() * Pi + C2.transpose() * P * C2 + p.Q(k) + p.Qbar(k) -
              S2.transpose() * spd_solve(K, S2, s));

    const Matrix A3 = A2 + p.Atilde(k);
    const Matrix C3 = C2 + p.Ctilde(k);
    const Matrix S3 = B.transpose() * Ph + DP * C3;
    dy[2] = -(Ph * A3 + A3.transpose() * Ph + C3.transpose() * P * C3 + p.Q(k) + p.Qbar(k) +
              p.Qtilde(k) - S3.transpose() * spd_solve(K, S3, s));

    const GainBlocks g = feedback_gains(p, k, P, Pi, Ph, s);
    const Matrix Psi1 = g.psi + g.psiBar;
    const Matrix Psi12 = Psi1 + g.psiTilde;

    const Matrix A0 = A + B * g.psi;
    const Matrix C0 = C + D * g.psi;
    dy[3] = -(Gc * A0 + A0.transpose() * Gc + C0.transpose() * Gc * C0 + p.Q(k) +
              g.psi.transpose() * R * g.psi);

    const Matrix Al = A2 + B * Psi1;
    const Matrix Cl = C2 + D * Psi1;
    const Matrix quad1 = Cl.transpose() * Gc * Cl;
    const Matrix ctrl1 = Psi1.transpose() * R * Psi1;
    dy[4] = -(Ga * Al + Al.transpose() * Ga + quad1 + p.Q(k) + ctrl1);
    dy[5] = -(Gb * Al + Al.transpose() * Gb + quad1 + p.Q(k) + p.Qbar(k) + ctrl1);

    const Matrix Am = A3 + B * Psi12;
    const Matrix Cm = C3 + D * Psi12;
    dy[6] = -(Gt * Am + Am.transpose() * Gt + Cm.transpose() * Gc * Cm + p.Q(k) + p.Qbar(k) +
              p.Qtilde(k) + Psi12.transpose() * R * Psi12);
  };

  // Backward over cells; the left cell overwrites the shared node with the
  // imposed boundary values, so reset families hold the Gamma-family pulls
  // at every interior partition node.
  for (int c = part.cells() - 1; c >= 0; --c) {
    const int a = part.indices[static_cast<std::size_t>(c)];
    const int b = part.indices[static_cast<std::size_t>(c) + 1];
    Matrix GaT, GbT, GtT;
    if (c == part.cells() - 1) {
      GaT = p.coef.G;
      GbT = G2;
      GtT = G3;
    } else {
      GaT = sol.Gamma_D.values[static_cast<std::size_t>(b)];
      GbT = sol.GammaBar_D.values[static_cast<std::size_t>(b)];
      GtT = sol.GammaTilde_D.values[static_cast<std::size_t>(b)];
    }
    auto paths =
        integrate_backward_matrix_ode(grid, {GaT, GbT, GtT, GaT, GaT, GbT, GtT}, rhs, a, b);
    for (int k = a; k <= b; ++k) {
      const std::size_t kk = static_cast<std::size_t>(k);
      sol.P_D.values[kk] = paths[0].values[kk];
      sol.Pi_D.values[kk] = paths[1].values[kk];
      sol.Phi_D.values[kk] = paths[2].values[kk];
      sol.GammaCheck_D.values[kk] = paths[3].values[kk];
      sol.Gamma_D.values[kk] = paths[4].values[kk];
      sol.GammaBar_D.values[kk] = paths[5].values[kk];
      sol.GammaTilde_D.values[kk] = paths[6].values[kk];
    }
  }

  RiccatiTriple tri{sol.P_D, sol.Pi_D, sol.Phi_D};
  sol.gains_D = build_precommitted_strategy(p, tri, 0.0);
  sol.gains_D.kind = GainSchedule::Kind::PiecewiseGame;
  sol.gains_D.partition = part.indices;
  return sol;
}

ConvergenceReport game_convergence_study(const Problem& p, const std::vector<Partition>& parts,
                                         const EquilibriumTriple& limit) {
  validate_mesh_sequence(parts, p.grid);
  const std::size_t nn = static_cast<std::size_t>(p.grid.N + 1);
  if (limit.Gamma.values.size() != nn || limit.GammaBar.values.size() != nn ||
      limit.GammaTilde.values.size() != nn) {
    throw Error("shape", "limit triple does not live on the problem grid");
  }

  ConvergenceReport rep;
  std::vector<double> max_norms;
  for (const Partition& part : parts) {
    const PartitionSolution sol = multiperson_game_solve(p, part);
    double err = 0.0;
    double mx = 0.0;
    for (std::size_t k = 0; k < nn; ++k) {
      err = std::max(err, spectral_norm(sol.Gamma_D.values[k] - limit.Gamma.values[k]));
      err = std::max(err, spectral_norm(sol.GammaBar_D.values[k] - limit.GammaBar.values[k]));
      err = std::max(err, spectral_norm(sol.GammaTilde_D.values[k] - limit.GammaTilde.values[k]));
      for (const MatrixPath* mp : {&sol.P_D, &sol.Pi_D, &sol.Phi_D, &sol.GammaCheck_D,
                                   &sol.Gamma_D, &sol.GammaBar_D, &sol.GammaTilde_D}) {
        mx = std::max(mx, spectral_norm(mp->values[k]));
      }
    }
    if (!std::isfinite(err)) throw Error("nonfinite", "convergence error is not finite");
    rep.meshes.push_back(part.mesh(p.grid));
    rep.errors.push_back(err);
    max_norms.push_back(mx);
  }
  rep.fitted_rate = fit_log_slope(rep.meshes, rep.errors);
  rep.details = json{{"max_norms", max_norms}};
  return rep;
}

PathEnsemble naive_partition_rollout(const Problem& p, const Partition& part,
                                     const InitialPair& ip, const SimConfig& sim) {
  validate_partition(part, p.grid);
  if (p.grid.index_of(ip.t) != 0) {
    throw Error("precondition", "rollout must start at the initial time 0", {{"t", ip.t}});
  }
  const RiccatiTriple tri = solve_precommitted_riccati(p);
  return rollout_with_triple(p, part, tri, ip, sim);
}

ConvergenceReport naive_convergence_study(const Problem& p, const std::vector<Partition>& parts,
                                          const InitialPair& ip, const SimConfig& sim) {
  validate_mesh_sequence(parts, p.grid);
  if (p.grid.index_of(ip.t) != 0) {
    throw Error("precondition", "study must start at the initial time 0", {{"t", ip.t}});
  }

  const RiccatiTriple tri = solve_precommitted_riccati(p);
  const GainSchedule g_lim = build_naive_strategy(p, tri);
  const PathEnsemble ens_lim = simulate_closed_loop(p, g_lim, ip, sim);

  const int N = p.grid.N;
  const double h = p.grid.step();
  ConvergenceReport rep;
  std::vector<double> sq_means, sq_ses, err_ses;
  for (const Partition& part : parts) {
    const PathEnsemble ens_d = rollout_with_triple(p, part, tri, ip, sim);
    const int paths = static_cast<int>(ens_d.controls.size());
    std::vector<double> sq(static_cast<std::size_t>(paths), 0.0);
    detail::for_each_path(paths, [&](int path) {
      const Matrix& ud = ens_d.controls[static_cast<std::size_t>(path)];
      const Matrix& ul = ens_lim.controls[static_cast<std::size_t>(path)];
      double acc = 0.0;
      for (int k = 0; k <= N; ++k) {
        const double w = (k == 0 || k == N) ? 0.5 * h : h;
        acc += w * (ud.col(k) - ul.col(k)).squaredNorm();
      }
      sq[static_cast<std::size_t>(path)] = acc;
    });
    const double mean_sq = pairwise_mean(sq);
    const double se_sq = standard_error(sq);
    const double err = std::sqrt(std::max(mean_sq, 0.0));
    if (!std::isfinite(err)) throw Error("nonfinite", "convergence error is not finite");
    rep.meshes.push_back(part.mesh(p.grid));
    rep.errors.push_back(err);
    sq_means.push_back(mean_sq);
    sq_ses.push_back(se_sq);
    err_ses.push_back(err > 0.0 ? se_sq / (2.0 * err) : 0.0);
  }
  rep.fitted_rate = fit_log_slope(rep.meshes, rep.errors);
  rep.details = json{{"squared_errors", sq_means},
                     {"squared_std_errors", sq_ses},
                     {"error_std_errors", err_ses},
                     {"paths", sim.paths}};
  return rep;
}

}  // namespace mfc
