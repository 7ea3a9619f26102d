// Backward RK4 integration and the Riccati / Lyapunov solvers.

#include "mfcontrol/riccati.hpp"

#include <cmath>

#include "mfcontrol/strategies.hpp"

namespace mfc {

namespace {

void check_blocks_finite(const std::vector<Matrix>& y, double time) {
  for (const Matrix& m : y) {
    if (!m.allFinite()) {
      throw Error("nonfinite", "backward integration produced a non-finite value",
                  {{"time", time}});
    }
  }
}

}  // namespace

std::vector<MatrixPath> integrate_backward_matrix_ode(const TimeGrid& grid,
                                                      const std::vector<Matrix>& terminal,
                                                      const BackwardRhs& rhs, int node_lo,
                                                      int node_hi) {
  if (node_hi < 0) node_hi = grid.N;
  if (node_lo < 0 || node_hi > grid.N || node_lo >= node_hi) {
    throw Error("usage", "invalid integration range",
                {{"node_lo", node_lo}, {"node_hi", node_hi}, {"N", grid.N}});
  }
  if (terminal.empty()) throw Error("usage", "terminal data must contain at least one block");
  check_blocks_finite(terminal, grid.node(node_hi));

  const std::size_t nb = terminal.size();
  std::vector<MatrixPath> out(nb);
  for (std::size_t b = 0; b < nb; ++b) {
    out[b].grid = grid;
    out[b].values.assign(static_cast<std::size_t>(grid.N + 1), Matrix());
    out[b].values[static_cast<std::size_t>(node_hi)] = terminal[b];  // stored bit-exact
  }

  const double h = grid.step();
  std::vector<Matrix> y(terminal), k1(nb), k2(nb), k3(nb), k4(nb), stage(nb);

  for (int k = node_hi - 1; k >= node_lo; --k) {
    const double s1 = grid.node(k + 1);
    const double s0 = grid.node(k);
    const double smid = 0.5 * (s0 + s1);

    rhs(k, s1, y, k1);
    for (std::size_t b = 0; b < nb; ++b) stage[b] = y[b] - 0.5 * h * k1[b];
    rhs(k, smid, stage, k2);
    for (std::size_t b = 0; b < nb; ++b) stage[b] = y[b] - 0.5 * h * k2[b];
    rhs(k, smid, stage, k3);
    for (std::size_t b = 0; b < nb; ++b) stage[b] = y[b] - h * k3[b];
    rhs(k, s0, stage, k4);

    for (std::size_t b = 0; b < nb; ++b) {
      y[b] -= (h / 6.0) * (k1[b] + 2.0 * k2[b] + 2.0 * k3[b] + k4[b]);
      if (y[b].rows() == y[b].cols()) y[b] = symmetrized(y[b]);
    }
    check_blocks_finite(y, s0);
    for (std::size_t b = 0; b < nb; ++b) out[b].values[static_cast<std::size_t>(k)] = y[b];
  }

  // Constant fill outside the integration range keeps every node populated.
  for (std::size_t b = 0; b < nb; ++b) {
    for (int k = node_lo - 1; k >= 0; --k) {
      out[b].values[static_cast<std::size_t>(k)] = out[b].values[static_cast<std::size_t>(node_lo)];
    }
    for (int k = node_hi + 1; k <= grid.N; ++k) {
      out[b].values[static_cast<std::size_t>(k)] = out[b].values[static_cast<std::size_t>(node_hi)];
    }
  }
  return out;
}

Matrix spd_solve(const Matrix& K, const Matrix& rhs, double time, double inv_tol) {
  Eigen::LDLT<Matrix> ldlt(symmetrized(K));
  const double min_pivot = ldlt.vectorD().minCoeff();
  if (ldlt.info() != Eigen::Success || min_pivot < inv_tol) {
    throw Error("factorization", "control weight matrix is not safely positive definite",
                {{"time", time}, {"min_pivot", min_pivot}, {"inv_tol", inv_tol}});
  }
  return ldlt.solve(rhs);
}

GainBlocks feedback_gains(const Problem& p, int k, const Matrix& X1, const Matrix& X2,
                          const Matrix& X3, double time, double inv_tol) {
  const Matrix& B = p.B(k);
  const Matrix& D = p.D(k);
  const Matrix K = p.R(k) + D.transpose() * X1 * D;
  const Matrix DX1 = D.transpose() * X1;

  GainBlocks g;
  g.psi = -spd_solve(K, (B.transpose() * X1 + DX1 * p.C(k)).eval(), time, inv_tol);
  g.psiBar = -spd_solve(K, (B.transpose() * (X2 - X1) + DX1 * p.Cbar(k)).eval(), time, inv_tol);
  g.psiTilde = -spd_solve(K, (B.transpose() * (X3 - X2) + DX1 * p.Ctilde(k)).eval(), time, inv_tol);
  return g;
}

RiccatiTriple solve_precommitted_riccati(const Problem& p) {
  const Matrix G2 = p.coef.G + p.coef.Gbar;
  const Matrix G3 = G2 + p.coef.Gtilde;

  BackwardRhs rhs = [&p](int k, double s, const std::vector<Matrix>& y, std::vector<Matrix>& dy) {
    const Matrix& P = y[0];
    const Matrix& Pi = y[1];
    const Matrix& Ph = y[2];
    const Matrix& A = p.A(k);
    const Matrix& B = p.B(k);
    const Matrix& C = p.C(k);
    const Matrix& D = p.D(k);

    const Matrix K = p.R(k) + D.transpose() * P * D;
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
  };

  auto paths = integrate_backward_matrix_ode(p.grid, {p.coef.G, G2, G3}, rhs);
  return RiccatiTriple{std::move(paths[0]), std::move(paths[1]), std::move(paths[2])};
}

EquilibriumTriple solve_equilibrium_riccati(const Problem& p) {
  const Matrix G2 = p.coef.G + p.coef.Gbar;
  const Matrix G3 = G2 + p.coef.Gtilde;

  BackwardRhs rhs = [&p](int k, double s, const std::vector<Matrix>& y, std::vector<Matrix>& dy) {
    const Matrix& Ga = y[0];
    const Matrix& Gb = y[1];
    const Matrix& Gt = y[2];
    const Matrix& A = p.A(k);
    const Matrix& B = p.B(k);
    const Matrix& C = p.C(k);
    const Matrix& D = p.D(k);
    const Matrix& R = p.R(k);

    const GainBlocks g = feedback_gains(p, k, Ga, Gb, Gt, s);
    const Matrix Psi1 = g.psi + g.psiBar;
    const Matrix Psi12 = Psi1 + g.psiTilde;

    const Matrix A1 = A + p.Abar(k) + B * Psi1;
    const Matrix C1 = C + p.Cbar(k) + D * Psi1;
    const Matrix quad1 = C1.transpose() * Ga * C1;
    const Matrix ctrl1 = Psi1.transpose() * R * Psi1;

    dy[0] = -(Ga * A1 + A1.transpose() * Ga + quad1 + p.Q(k) + ctrl1);
    dy[1] = -(Gb * A1 + A1.transpose() * Gb + quad1 + p.Q(k) + p.Qbar(k) + ctrl1);

    const Matrix A2 = A + p.Abar(k) + p.Atilde(k) + B * Psi12;
    const Matrix C2 = C + p.Cbar(k) + p.Ctilde(k) + D * Psi12;
    dy[2] = -(Gt * A2 + A2.transpose() * Gt + C2.transpose() * Ga * C2 + p.Q(k) + p.Qbar(k) +
              p.Qtilde(k) + Psi12.transpose() * R * Psi12);
  };

  auto paths = integrate_backward_matrix_ode(p.grid, {p.coef.G, G2, G3}, rhs);
  return EquilibriumTriple{std::move(paths[0]), std::move(paths[1]), std::move(paths[2])};
}

LyapunovQuad solve_lyapunov_quadruple(const LyapunovInput& input, const TimeGrid& grid,
                                      int node_lo) {
  const int n = static_cast<int>(input.cG1.rows());
  auto check_coeff = [&](const Coefficient& c, const char* name) {
    if (c.empty()) throw Error("shape", std::string("Lyapunov input '") + name + "' is empty");
    if (!c.is_constant() && c.path_size() != grid.N + 1) {
      throw Error("shape", std::string("Lyapunov input '") + name + "' has wrong path length",
                  {{"expected", grid.N + 1}, {"got", c.path_size()}});
    }
    for (const Matrix& m : c.values()) {
      if (m.rows() != n || m.cols() != n) {
        throw Error("shape", std::string("Lyapunov input '") + name + "' has wrong shape");
      }
    }
  };
  check_coeff(input.cA, "cA");
  check_coeff(input.cAbar, "cAbar");
  check_coeff(input.cAtilde, "cAtilde");
  check_coeff(input.cC, "cC");
  check_coeff(input.cCbar, "cCbar");
  check_coeff(input.cCtilde, "cCtilde");
  check_coeff(input.cQ1, "cQ1");
  check_coeff(input.cQ2, "cQ2");
  check_coeff(input.cQ3, "cQ3");
  check_coeff(input.cQ4, "cQ4");

  BackwardRhs rhs = [&input](int k, double /*s*/, const std::vector<Matrix>& y,
                             std::vector<Matrix>& dy) {
    const Matrix& Gc = y[0];
    const Matrix& Ga = y[1];
    const Matrix& Gb = y[2];
    const Matrix& Gt = y[3];

    const Matrix& cA = input.cA.at(k);
    const Matrix& cC = input.cC.at(k);
    dy[0] = -(Gc * cA + cA.transpose() * Gc + cC.transpose() * Gc * cC + input.cQ1.at(k));

    const Matrix A12 = cA + input.cAbar.at(k);
    const Matrix C12 = cC + input.cCbar.at(k);
    const Matrix quad12 = C12.transpose() * Gc * C12;
    const Matrix Q12 = input.cQ1.at(k) + input.cQ2.at(k);
    dy[1] = -(Ga * A12 + A12.transpose() * Ga + quad12 + Q12);
    dy[2] = -(Gb * A12 + A12.transpose() * Gb + quad12 + Q12 + input.cQ3.at(k));

    const Matrix A123 = A12 + input.cAtilde.at(k);
    const Matrix C123 = C12 + input.cCtilde.at(k);
    dy[3] = -(Gt * A123 + A123.transpose() * Gt + C123.transpose() * Gc * C123 + Q12 +
              input.cQ3.at(k) + input.cQ4.at(k));
  };

  const Matrix G13 = input.cG1 + input.cG3;
  const Matrix G134 = G13 + input.cG4;
  auto paths = integrate_backward_matrix_ode(grid, {input.cG1, input.cG1, G13, G134}, rhs,
                                             node_lo, grid.N);
  return LyapunovQuad{std::move(paths[0]), std::move(paths[1]), std::move(paths[2]),
                      std::move(paths[3])};
}

LyapunovInput closed_loop_lyapunov_input(const Problem& p, const GainSchedule& gains) {
  if (gains.kind == GainSchedule::Kind::PiecewiseGame) {
    throw Error("precondition",
                "piecewise game schedules have cell-local anchors and no single Lyapunov input");
  }
  const int N = p.grid.N;
  const bool pre = gains.kind == GainSchedule::Kind::PreCommitted;

  std::vector<Matrix> vA(N + 1), vAbar(N + 1), vAtilde(N + 1);
  std::vector<Matrix> vC(N + 1), vCbar(N + 1), vCtilde(N + 1);
  std::vector<Matrix> vQ1(N + 1), vQ2(N + 1), vQ3(N + 1), vQ4(N + 1);

  for (int k = 0; k <= N; ++k) {
    const Matrix& B = p.B(k);
    const Matrix& D = p.D(k);
    const Matrix& R = p.R(k);
    const Matrix& psi = gains.psi.at(k);
    const Matrix& psiBar = gains.psiBar.at(k);
    const Matrix& psiTilde = gains.psiTilde.at(k);

    if (pre) {
      vA[k] = p.A(k) + B * psi;
      vAbar[k] = p.Abar(k) + B * psiBar;
      vC[k] = p.C(k) + D * psi;
      vCbar[k] = p.Cbar(k) + D * psiBar;
    } else {
      // The instantaneous anchor collapses E_t[X] onto X: the bar blocks of
      // the dynamics act on the state itself and the schedule has psiBar = 0.
      vA[k] = p.A(k) + p.Abar(k) + B * psi;
      vAbar[k] = Matrix::Zero(p.dims.n, p.dims.n);
      vC[k] = p.C(k) + p.Cbar(k) + D * psi;
      vCbar[k] = Matrix::Zero(p.dims.n, p.dims.n);
    }
    vAtilde[k] = p.Atilde(k) + B * psiTilde;
    vCtilde[k] = p.Ctilde(k) + D * psiTilde;

    const Matrix Rpsi = R * psi;
    const Matrix RpsiBar = R * psiBar;
    const Matrix RpsiTilde = R * psiTilde;

    vQ1[k] = p.Q(k) + psi.transpose() * Rpsi;
    vQ2[k] = psi.transpose() * RpsiBar + psiBar.transpose() * Rpsi +
             psiBar.transpose() * RpsiBar;
    vQ3[k] = p.Qbar(k);
    vQ4[k] = p.Qtilde(k) + psi.transpose() * RpsiTilde + psiTilde.transpose() * Rpsi +
             psiBar.transpose() * RpsiTilde + psiTilde.transpose() * RpsiBar +
             psiTilde.transpose() * RpsiTilde;
  }

  LyapunovInput input;
  input.cA = Coefficient(std::move(vA));
  input.cAbar = Coefficient(std::move(vAbar));
  input.cAtilde = Coefficient(std::move(vAtilde));
  input.cC = Coefficient(std::move(vC));
  input.cCbar = Coefficient(std::move(vCbar));
  input.cCtilde = Coefficient(std::move(vCtilde));
  input.cQ1 = Coefficient(std::move(vQ1));
  input.cQ2 = Coefficient(std::move(vQ2));
  input.cQ3 = Coefficient(std::move(vQ3));
  input.cQ4 = Coefficient(std::move(vQ4));
  input.cG1 = p.coef.G;
  input.cG3 = p.coef.Gbar;
  input.cG4 = p.coef.Gtilde;
  input.tau = gains.t;
  return input;
}

double quadratic_value_at(const MatrixPath& GammaBar, const MatrixPath& GammaTilde, int k,
                          const InitialPair& ip) {
  const Matrix& Gb = GammaBar.at(k);
  const Matrix& Gt = GammaTilde.at(k);
  if (ip.kind == InitialPair::Kind::Deterministic) {
    return ip.value.dot(Gt * ip.value);
  }
  return (Gb * ip.cov).trace() + ip.value.dot(Gt * ip.value);
}

double closed_loop_cost_quadratic(const Problem& p, const GainSchedule& gains,
                                  const InitialPair& ip) {
  validate_initial_pair(p, ip);
  const int k0 = p.grid.index_of(ip.t);
  if (gains.kind == GainSchedule::Kind::PreCommitted && p.grid.index_of(gains.t) != k0) {
    throw Error("precondition", "pre-committed schedule anchor must equal the evaluation time",
                {{"anchor", gains.t}, {"t", ip.t}});
  }
  LyapunovInput input = closed_loop_lyapunov_input(p, gains);
  input.tau = ip.t;
  const LyapunovQuad quad = solve_lyapunov_quadruple(input, p.grid, k0);
  return quadratic_value_at(quad.GammaBar, quad.GammaTilde, k0, ip);
}

}  // namespace mfc
