// Certification checks: stationarity, convexity, representation, local
// optimality of the equilibrium feedback, and time-consistency reductions.

#include "mfcontrol/verify.hpp"

#include <algorithm>
#include <cmath>

#include "mfcontrol/detail/engine.hpp"
#include "mfcontrol/strategies.hpp"

namespace mfc {

namespace {

void check_ensemble_grid(const Problem& p, const PathEnsemble& ens) {
  if (ens.grid.N != p.grid.N ||
      std::abs(ens.grid.T - p.grid.T) > 1e-12 * std::max(1.0, p.grid.T)) {
    throw Error("shape", "ensemble grid does not match the problem grid");
  }
  if (ens.states.empty() || ens.cond_means.size() != ens.states.size() ||
      ens.controls.size() != ens.states.size()) {
    throw Error("shape", "ensemble path arrays are inconsistent");
  }
}

// Discrete-chain means of the simulated state recursion. mchan follows the
// exact one-cell transfer of the conditional channel (so it equals
// E[cond_means]); mbar is the Euler-chain plain mean, which matches the
// discretization of the states themselves.
struct ChainMeans {
  std::vector<Vector> mchan;
  std::vector<Vector> mbar;
};

ChainMeans build_chain_means(const detail::PreparedLoop& pl, const PathEnsemble& ens) {
  const int N = pl.loop.grid.N;
  const int k0 = pl.loop.k0;
  const double h = pl.loop.grid.step();
  ChainMeans cm;
  cm.mchan.assign(static_cast<std::size_t>(N + 1), Vector());
  cm.mbar.assign(static_cast<std::size_t>(N + 1), Vector());
  cm.mchan[static_cast<std::size_t>(k0)] = ens.mean[static_cast<std::size_t>(k0)];
  cm.mbar[static_cast<std::size_t>(k0)] = ens.mean[static_cast<std::size_t>(k0)];
  for (int k = k0; k < N; ++k) {
    const std::size_t kk = static_cast<std::size_t>(k);
    cm.mbar[kk + 1] = cm.mbar[kk] + h * (pl.loop.Fx[kk] * cm.mbar[kk] +
                                         pl.loop.Fc[kk] * cm.mchan[kk] +
                                         pl.loop.Fm[kk] * ens.mean[kk]);
    cm.mchan[kk + 1] = pl.mcT[kk] * cm.mchan[kk] + pl.mcIn[kk];
  }
  for (int k = 0; k < k0; ++k) {
    cm.mchan[static_cast<std::size_t>(k)] = cm.mchan[static_cast<std::size_t>(k0)];
    cm.mbar[static_cast<std::size_t>(k)] = cm.mbar[static_cast<std::size_t>(k0)];
  }
  return cm;
}

// Walks one path, rebuilding the adjoint pair from the decoupling ansatz at
// every node from k0 to N; sink(k, x, u, Y, Z) consumes the values.
template <class Sink>
void adjoint_walk(const Problem& p, const RiccatiTriple& tri, const PathEnsemble& ens,
                  const detail::PreparedLoop& pl, const ChainMeans& cm, int path, Sink&& sink) {
  const int N = p.grid.N;
  const int k0 = ens.k0;
  const double h = p.grid.step();
  const Matrix& xs = ens.states[static_cast<std::size_t>(path)];
  const Matrix& cs = ens.cond_means[static_cast<std::size_t>(path)];
  const Matrix& us = ens.controls[static_cast<std::size_t>(path)];
  Vector M = xs.col(k0);  // conditional mean of the Euler state chain
  for (int k = k0; k <= N; ++k) {
    const std::size_t kk = static_cast<std::size_t>(k);
    const Vector x = xs.col(k);
    const Vector u = us.col(k);
    const Vector& Mb = cm.mbar[kk];
    const Vector Y = tri.P.at(k) * (x - M) + tri.Pi.at(k) * (M - Mb) + tri.Phi.at(k) * Mb;
    const Vector Z =
        tri.P.at(k) * (p.C(k) * x + p.Cbar(k) * M + p.Ctilde(k) * Mb + p.D(k) * u);
    sink(k, x, u, Y, Z);
    if (k < N) {
      M += h * (pl.loop.Fx[kk] * M + pl.loop.Fc[kk] * cs.col(k) + pl.loop.Fm[kk] * ens.mean[kk]);
    }
  }
}

// Shared setup for the adjoint reconstruction: rebuilds the pre-committed
// loop the ensemble was simulated under.
detail::PreparedLoop precommitted_loop_of(const Problem& p, const RiccatiTriple& tri,
                                          const PathEnsemble& ens) {
  check_ensemble_grid(p, ens);
  const std::size_t nn = static_cast<std::size_t>(p.grid.N + 1);
  if (tri.P.values.size() != nn || tri.Pi.values.size() != nn || tri.Phi.values.size() != nn) {
    throw Error("shape", "Riccati triple does not live on the problem grid");
  }
  const double t_anchor = ens.anchor_times[static_cast<std::size_t>(ens.k0)];
  for (int k = ens.k0; k <= p.grid.N; ++k) {
    if (ens.anchor_times[static_cast<std::size_t>(k)] != t_anchor) {
      throw Error("precondition", "ensemble must come from a fixed-anchor pre-committed loop");
    }
  }
  if (p.grid.index_of(t_anchor) != ens.k0) {
    throw Error("precondition", "ensemble anchor does not match its start node");
  }
  const GainSchedule g = build_precommitted_strategy(p, tri, t_anchor);
  return detail::prepare_loop(detail::build_loop(p, g, ens.k0),
                              ens.mean[static_cast<std::size_t>(ens.k0)]);
}

double trace_of(const Matrix& a, const Matrix& b) { return (a * b).trace(); }

Coefficient subsample_even(const Coefficient& c) {
  if (c.is_constant()) return c;
  std::vector<Matrix> vals;
  for (std::size_t k = 0; k < c.values().size(); k += 2) vals.push_back(c.values()[k]);
  return Coefficient(std::move(vals));
}

// Monte Carlo value of the quadratic functional along the uncontrolled
// dynamics, with the initial randomness split into a tau-measurable part and
// an independent remainder.
struct McFunctional {
  double value = 0.0;
  double se = 0.0;
};

McFunctional mc_functional(const LyapunovInput& input, const TimeGrid& grid, int n, int k0,
                           const Vector& mu, const Matrix& sqrt_tau, const Matrix& sqrt_eta,
                           int paths, std::uint64_t seed) {
  const detail::PreparedLoop pl =
      detail::prepare_loop(detail::build_plain_loop(input, grid, n, 1, k0), mu);
  const int N = grid.N;
  const double h = grid.step();
  std::vector<double> vals(static_cast<std::size_t>(paths), 0.0);
  detail::for_each_path(paths, [&](int path) {
    Vector ztau(n), zeta(n);
    for (int j = 0; j < n; ++j) {
      ztau[j] = rng::normal(seed, static_cast<std::uint64_t>(path), rng::kInitStep,
                            static_cast<std::uint64_t>(j));
      zeta[j] = rng::normal(seed, static_cast<std::uint64_t>(path), rng::kInitStep,
                            static_cast<std::uint64_t>(n + j));
    }
    detail::PathState st;
    const Vector xtau0 = mu + sqrt_tau * ztau;
    detail::init_path(pl, (xtau0 + sqrt_eta * zeta).eval(), st);
    st.xtau = xtau0;
    st.has_tau = true;
    double acc = 0.0;
    for (int k = k0; k <= N; ++k) {
      const Vector& m = pl.mean_at(k);
      const double f = st.x.dot(input.cQ1.at(k) * st.x) + st.xc.dot(input.cQ2.at(k) * st.xc) +
                       st.xtau.dot(input.cQ3.at(k) * st.xtau) + m.dot(input.cQ4.at(k) * m);
      const double w = (k == k0 || k == N) ? 0.5 * h : h;
      acc += w * f;
      if (k < N) {
        detail::step_path(pl, k, detail::brownian_increment(seed, static_cast<std::uint64_t>(path),
                                                            k, h),
                          nullptr, st);
      }
    }
    const Vector& mT = pl.mean_at(N);
    acc += st.x.dot(input.cG1 * st.x) + st.xtau.dot(input.cG3 * st.xtau) +
           mT.dot(input.cG4 * mT);
    vals[static_cast<std::size_t>(path)] = acc;
  });
  McFunctional out;
  out.value = pairwise_mean(vals);
  out.se = standard_error(vals);
  return out;
}

}  // namespace

AdjointPath reconstruct_adjoint(const Problem& p, const RiccatiTriple& tri,
                                const PathEnsemble& ens) {
  const detail::PreparedLoop pl = precommitted_loop_of(p, tri, ens);
  const ChainMeans cm = build_chain_means(pl, ens);
  const int N = p.grid.N;
  const int paths = static_cast<int>(ens.states.size());
  AdjointPath adj;
  adj.Y.assign(static_cast<std::size_t>(paths), Matrix());
  adj.Z.assign(static_cast<std::size_t>(paths), Matrix());
  detail::for_each_path(paths, [&](int path) {
    Matrix& Yp = adj.Y[static_cast<std::size_t>(path)];
    Matrix& Zp = adj.Z[static_cast<std::size_t>(path)];
    Yp.resize(p.dims.n, N + 1);
    Zp.resize(p.dims.n, N + 1);
    adjoint_walk(p, tri, ens, pl, cm, path,
                 [&](int k, const Vector&, const Vector&, const Vector& Y, const Vector& Z) {
                   Yp.col(k) = Y;
                   Zp.col(k) = Z;
                 });
    for (int k = 0; k < ens.k0; ++k) {
      Yp.col(k) = Yp.col(ens.k0);
      Zp.col(k) = Zp.col(ens.k0);
    }
  });
  return adj;
}

CheckReport check_stationarity(const Problem& p, const RiccatiTriple& tri, const PathEnsemble& ens,
                               double threshold) {
  const detail::PreparedLoop pl = precommitted_loop_of(p, tri, ens);
  const ChainMeans cm = build_chain_means(pl, ens);
  const int N = p.grid.N;
  const double h = p.grid.step();
  const int paths = static_cast<int>(ens.states.size());
  std::vector<double> sq(static_cast<std::size_t>(paths), 0.0);
  detail::for_each_path(paths, [&](int path) {
    double acc = 0.0;
    adjoint_walk(p, tri, ens, pl, cm, path,
                 [&](int k, const Vector&, const Vector& u, const Vector& Y, const Vector& Z) {
                   const Vector res =
                       p.R(k) * u + p.B(k).transpose() * Y + p.D(k).transpose() * Z;
                   const double w = (k == ens.k0 || k == N) ? 0.5 * h : h;
                   acc += w * res.squaredNorm();
                 });
    sq[static_cast<std::size_t>(path)] = acc;
  });

  CheckReport rep;
  rep.name = "stationarity";
  rep.statistic = std::sqrt(std::max(pairwise_mean(sq), 0.0));
  rep.threshold = threshold;
  rep.passed = rep.statistic <= rep.threshold;
  rep.details = json{{"paths", paths}, {"h", h}, {"squared_se", standard_error(sq)}};
  return rep;
}

CheckReport check_convexity_perturbation(const Problem& p, const InitialPair& ip,
                                         const std::vector<double>& lambdas, const Vector& v,
                                         const SimConfig& sim, double threshold) {
  validate_initial_pair(p, ip);
  if (v.size() != p.dims.m) {
    throw Error("shape", "perturbation direction has wrong size",
                {{"expected", p.dims.m}, {"got", v.size()}});
  }
  if (lambdas.size() < 3) {
    throw Error("usage", "need at least three lambda values for the quadratic fit");
  }
  for (double l : lambdas) {
    const bool mirrored = std::any_of(lambdas.begin(), lambdas.end(),
                                      [l](double o) { return std::abs(o + l) <= 1e-12; });
    if (!mirrored) {
      throw Error("usage", "lambda grid must be symmetric around zero", {{"lambda", l}});
    }
  }
  if (sim.paths < 2) throw Error("precondition", "at least two paths required");
  const int k0 = p.grid.index_of(ip.t);
  if (p.grid.index_of(sim.t0) != k0) {
    throw Error("precondition", "simulation start differs from the initial pair time");
  }

  const RiccatiTriple tri = solve_precommitted_riccati(p);
  const GainSchedule g = build_precommitted_strategy(p, tri, p.grid.node(k0));
  const detail::PreparedLoop plA =
      detail::prepare_loop(detail::build_loop(p, g, k0), ip.mean());
  const detail::PreparedLoop plV = detail::prepare_loop(
      detail::build_windowed_loop(p, g, k0, k0, p.grid.N, v), Vector::Zero(p.dims.n));
  Matrix sqrt_cov;
  if (ip.kind == InitialPair::Kind::Gaussian) sqrt_cov = detail::symmetric_sqrt(ip.cov);

  const int N = p.grid.N;
  const double h = p.grid.step();
  const std::size_t np = static_cast<std::size_t>(sim.paths);
  std::vector<double> alpha(np, 0.0), beta(np, 0.0), gamma(np, 0.0);
  detail::for_each_path(sim.paths, [&](int path) {
    Vector x0 = ip.value;
    if (ip.kind == InitialPair::Kind::Gaussian) {
      x0 = sample_initial(ip, sqrt_cov, sim.seed, static_cast<std::uint64_t>(path));
    }
    detail::PathState stA, stV;
    detail::init_path(plA, x0, stA);
    detail::init_path(plV, Vector::Zero(p.dims.n), stV);
    double a = 0.0, b = 0.0, c = 0.0;
    for (int k = k0; k <= N; ++k) {
      const Vector uA = detail::path_control(plA, k, stA, nullptr);
      const Vector& mA = plA.mean_at(k);
      const Vector& mV = plV.mean_at(k);
      const Vector Qx = p.Q(k) * stA.x;
      const Vector Qc = p.Qbar(k) * stA.xc;
      const Vector Qm = p.Qtilde(k) * mA;
      const Vector Ru = p.R(k) * uA;
      const double w = (k == k0 || k == N) ? 0.5 * h : h;
      a += w * (Qx.dot(stA.x) + Qc.dot(stA.xc) + Qm.dot(mA) + Ru.dot(uA));
      b += w * 2.0 * (Qx.dot(stV.x) + Qc.dot(stV.xc) + Qm.dot(mV) + Ru.dot(v));
      c += w * (stV.x.dot(p.Q(k) * stV.x) + stV.xc.dot(p.Qbar(k) * stV.xc) +
                mV.dot(p.Qtilde(k) * mV) + v.dot(p.R(k) * v));
      if (k < N) {
        const double dw =
            detail::brownian_increment(sim.seed, static_cast<std::uint64_t>(path), k, h);
        detail::step_path(plA, k, dw, nullptr, stA);
        detail::step_path(plV, k, dw, &v, stV);
      }
    }
    const Vector Gx = p.coef.G * stA.x;
    const Vector Gc = p.coef.Gbar * stA.xc;
    const Vector Gm = p.coef.Gtilde * plA.mean_at(N);
    a += Gx.dot(stA.x) + Gc.dot(stA.xc) + Gm.dot(plA.mean_at(N));
    b += 2.0 * (Gx.dot(stV.x) + Gc.dot(stV.xc) + Gm.dot(plV.mean_at(N)));
    c += stV.x.dot(p.coef.G * stV.x) + stV.xc.dot(p.coef.Gbar * stV.xc) +
         plV.mean_at(N).dot(p.coef.Gtilde * plV.mean_at(N));
    alpha[static_cast<std::size_t>(path)] = a;
    beta[static_cast<std::size_t>(path)] = b;
    gamma[static_cast<std::size_t>(path)] = c;
  });

  // Per-lambda cost means and the one-sided comparison against lambda = 0.
  std::vector<double> j_means, j_ses, d_means, d_ses;
  bool one_sided_ok = true;
  std::vector<double> tmp(np, 0.0);
  for (double l : lambdas) {
    for (std::size_t i = 0; i < np; ++i) tmp[i] = alpha[i] + l * beta[i] + l * l * gamma[i];
    j_means.push_back(pairwise_mean(tmp));
    j_ses.push_back(standard_error(tmp));
    for (std::size_t i = 0; i < np; ++i) tmp[i] = l * beta[i] + l * l * gamma[i];
    const double dm = pairwise_mean(tmp);
    const double ds = standard_error(tmp);
    d_means.push_back(dm);
    d_ses.push_back(ds);
    if (dm < -3.0 * ds - 1e-12 * std::max(1.0, std::abs(j_means.back()))) one_sided_ok = false;
  }

  // Least-squares quadratic fit over the lambda grid.
  const int nl = static_cast<int>(lambdas.size());
  Matrix V(nl, 3);
  Vector yv(nl);
  for (int i = 0; i < nl; ++i) {
    V(i, 0) = 1.0;
    V(i, 1) = lambdas[static_cast<std::size_t>(i)];
    V(i, 2) = lambdas[static_cast<std::size_t>(i)] * lambdas[static_cast<std::size_t>(i)];
    yv[i] = j_means[static_cast<std::size_t>(i)];
  }
  const Vector coef = V.colPivHouseholderQr().solve(yv);
  const double b_fit = coef[1];
  const double c_fit = coef[2];
  const double gamma_se = standard_error(gamma);
  const double noise = 3.0 * gamma_se + 1e-12 * std::max(1.0, std::abs(pairwise_mean(alpha)));

  CheckReport rep;
  rep.name = "convexity";
  rep.threshold = threshold;
  bool degenerate = false;
  bool negative_quadratic = false;
  if (c_fit < -noise) {
    negative_quadratic = true;
    rep.statistic = std::abs(b_fit);
    rep.passed = false;
  } else if (c_fit <= noise) {
    degenerate = true;
    rep.statistic = 0.0;
    rep.passed = one_sided_ok;
  } else {
    rep.statistic = std::abs(b_fit) / c_fit;
    rep.passed = one_sided_ok && rep.statistic <= threshold;
  }
  rep.details = json{{"lambdas", lambdas},          {"cost_means", j_means},
                     {"cost_ses", j_ses},           {"diff_means", d_means},
                     {"diff_ses", d_ses},           {"linear_fit", b_fit},
                     {"quadratic_fit", c_fit},      {"quadratic_noise", noise},
                     {"one_sided_ok", one_sided_ok}, {"degenerate", degenerate},
                     {"negative_quadratic", negative_quadratic}};
  return rep;
}

CheckReport check_representation(const Problem& p, const LyapunovInput& input,
                                 const InitialPair& ip, const SimConfig& sim,
                                 double tau_cov_fraction) {
  validate_initial_pair(p, ip);
  if (sim.paths < 2) throw Error("precondition", "at least two paths required");
  const int k0 = p.grid.index_of(ip.t);
  if (p.grid.index_of(sim.t0) != k0) {
    throw Error("precondition", "simulation start differs from the initial pair time");
  }
  const double tol = 1e-9 * std::max(1.0, p.grid.T);
  if (input.tau < -tol || input.tau > ip.t + tol) {
    throw Error("precondition", "anchor tau must lie in [0, ip.t]",
                {{"tau", input.tau}, {"t", ip.t}});
  }
  double f = tau_cov_fraction;
  if (std::abs(input.tau - ip.t) <= tol) f = 1.0;  // X(t) is tau-measurable
  if (f < 0.0 || f > 1.0) {
    throw Error("usage", "tau covariance fraction must lie in [0, 1]", {{"fraction", f}});
  }

  const int n = p.dims.n;
  const Vector mu = ip.mean();
  Matrix cov = Matrix::Zero(n, n);
  if (ip.kind == InitialPair::Kind::Gaussian) cov = ip.cov;
  const Matrix sqrt_tau = detail::symmetric_sqrt((f * cov).eval());
  const Matrix sqrt_eta = detail::symmetric_sqrt(((1.0 - f) * cov).eval());

  const LyapunovQuad quad = solve_lyapunov_quadruple(input, p.grid, k0);
  const double analytic = trace_of(quad.Gamma.at(k0), ((1.0 - f) * cov).eval()) +
                          trace_of(quad.GammaBar.at(k0), (f * cov).eval()) +
                          mu.dot(quad.GammaTilde.at(k0) * mu);

  const McFunctional fine =
      mc_functional(input, p.grid, n, k0, mu, sqrt_tau, sqrt_eta, sim.paths, sim.seed);

  double allowance;
  json calibration;
  if (p.grid.N % 2 == 0 && k0 % 2 == 0 && p.grid.N / 2 >= 1 && k0 / 2 < p.grid.N / 2) {
    LyapunovInput coarse = input;
    coarse.cA = subsample_even(input.cA);
    coarse.cAbar = subsample_even(input.cAbar);
    coarse.cAtilde = subsample_even(input.cAtilde);
    coarse.cC = subsample_even(input.cC);
    coarse.cCbar = subsample_even(input.cCbar);
    coarse.cCtilde = subsample_even(input.cCtilde);
    coarse.cQ1 = subsample_even(input.cQ1);
    coarse.cQ2 = subsample_even(input.cQ2);
    coarse.cQ3 = subsample_even(input.cQ3);
    coarse.cQ4 = subsample_even(input.cQ4);
    const TimeGrid half{p.grid.T, p.grid.N / 2};
    const McFunctional rough =
        mc_functional(coarse, half, n, k0 / 2, mu, sqrt_tau, sqrt_eta, sim.paths, sim.seed);
    allowance = 3.0 * fine.se + std::abs(rough.value - fine.value) + 3.0 * rough.se;
    calibration = json{{"coarse_value", rough.value}, {"coarse_se", rough.se}};
  } else {
    allowance = 3.0 * fine.se + p.grid.step() * std::max(1.0, std::abs(analytic));
    calibration = json{{"fallback", true}};
  }
  allowance = std::max(allowance, 1e-12 * std::max(1.0, std::abs(analytic)));

  CheckReport rep;
  rep.name = "representation";
  rep.statistic = std::abs(fine.value - analytic) / allowance;
  rep.threshold = 1.0;
  rep.passed = rep.statistic <= rep.threshold;
  rep.details = json{{"mc_value", fine.value},   {"mc_se", fine.se},
                     {"analytic", analytic},     {"allowance", allowance},
                     {"tau_fraction", f},        {"calibration", calibration},
                     {"paths", sim.paths}};
  return rep;
}

CheckReport check_equilibrium_local_optimality(const Problem& p, const EquilibriumTriple& tri,
                                               const InitialPair& ip, double t,
                                               const std::vector<ControlCandidate>& candidates,
                                               const std::vector<double>& eps_list,
                                               const SimConfig& sim) {
  validate_initial_pair(p, ip);
  if (sim.paths < 2) throw Error("precondition", "at least two paths required");
  const int k0 = p.grid.index_of(ip.t);
  if (p.grid.index_of(sim.t0) != k0) {
    throw Error("precondition", "simulation start differs from the initial pair time");
  }
  const int N = p.grid.N;
  const int kt = p.grid.index_of(t);
  if (kt < k0 || kt >= N) {
    throw Error("precondition", "perturbation time outside the horizon", {{"t", t}});
  }
  if (eps_list.size() < 2) {
    throw Error("usage", "need at least two eps values for extrapolation");
  }
  std::vector<int> ke;
  for (std::size_t i = 0; i < eps_list.size(); ++i) {
    if (eps_list[i] <= 0.0 || (i > 0 && eps_list[i] >= eps_list[i - 1])) {
      throw Error("usage", "eps values must be positive and strictly decreasing");
    }
    ke.push_back(p.grid.index_of(t + eps_list[i]));  // throws when off-grid
  }
  for (const ControlCandidate& c : candidates) {
    if (c.K.rows() != p.dims.m || c.K.cols() != p.dims.n || c.u0.size() != p.dims.m) {
      throw Error("shape", "control candidate has wrong dimensions", {{"label", c.label}});
    }
  }

  const GainSchedule g = build_equilibrium_strategy(p, tri);
  const detail::PreparedLoop warm =
      detail::prepare_loop(detail::build_loop(p, g, k0), ip.mean());
  const Vector m_t = warm.mean_at(kt);

  std::vector<ControlCandidate> cands;
  cands.push_back(
      ControlCandidate{g.psi.at(kt), (g.psiTilde.at(kt) * m_t).eval(), "equilibrium"});
  cands.insert(cands.end(), candidates.begin(), candidates.end());
  const int nc = static_cast<int>(cands.size());
  const int ne = static_cast<int>(eps_list.size());

  std::vector<std::vector<detail::PreparedLoop>> branch(static_cast<std::size_t>(nc));
  for (int c = 0; c < nc; ++c) {
    const Vector u_mean = cands[static_cast<std::size_t>(c)].K * m_t +
                          cands[static_cast<std::size_t>(c)].u0;
    for (int e = 0; e < ne; ++e) {
      branch[static_cast<std::size_t>(c)].push_back(detail::prepare_loop(
          detail::build_windowed_loop(p, g, kt, kt, ke[static_cast<std::size_t>(e)], u_mean),
          m_t));
    }
  }

  // Analytic first-variation blocks at time t.
  const Matrix& Gm = tri.Gamma.at(kt);
  const Matrix& Gb = tri.GammaBar.at(kt);
  const Matrix& Gt = tri.GammaTilde.at(kt);
  const Matrix KR = p.R(kt) + p.D(kt).transpose() * Gm * p.D(kt);
  const Matrix Sx = p.B(kt).transpose() * Gb + p.D(kt).transpose() * Gm * p.C(kt) +
                    p.D(kt).transpose() * Gm * p.Cbar(kt);
  const Matrix Sm =
      p.D(kt).transpose() * Gm * p.Ctilde(kt) + p.B(kt).transpose() * (Gt - Gb);
  const Matrix Psi1 = g.psi.at(kt);
  const Matrix Psi2 = g.psiTilde.at(kt);

  const double h = p.grid.step();
  const std::size_t np = static_cast<std::size_t>(sim.paths);
  Matrix sqrt_cov;
  if (ip.kind == InitialPair::Kind::Gaussian) sqrt_cov = detail::symmetric_sqrt(ip.cov);

  std::vector<double> cost0(np, 0.0);
  std::vector<std::vector<std::vector<double>>> dq(
      static_cast<std::size_t>(nc),
      std::vector<std::vector<double>>(static_cast<std::size_t>(ne),
                                       std::vector<double>(np, 0.0)));
  std::vector<std::vector<double>> an(static_cast<std::size_t>(nc),
                                      std::vector<double>(np, 0.0));

  // Trapezoid cost along one tail. The perturbed control jumps back to the
  // feedback at switch_node, so that node takes the left limit of the control
  // cost on its trailing half-cell and the right limit on its leading one.
  auto tail_cost = [&](const detail::PreparedLoop& pl, detail::PathState& st, int path,
                       const Vector* u_ext, int switch_node) {
    double acc = 0.0;
    for (int k = kt; k <= N; ++k) {
      const Vector uR = detail::path_control(pl, k, st, u_ext);
      const Vector& m = pl.mean_at(k);
      const double f_state = st.x.dot(p.Q(k) * st.x) + st.xc.dot(p.Qbar(k) * st.xc) +
                             m.dot(p.Qtilde(k) * m);
      const double fcR = uR.dot(p.R(k) * uR);
      double fcL = fcR;
      if (u_ext != nullptr && k == switch_node) fcL = u_ext->dot(p.R(k) * (*u_ext));
      if (k > kt) acc += 0.5 * h * (f_state + fcL);
      if (k < N) {
        acc += 0.5 * h * (f_state + fcR);
        detail::step_path(pl, k,
                          detail::brownian_increment(sim.seed, static_cast<std::uint64_t>(path),
                                                     k, h),
                          u_ext, st);
      }
    }
    const Vector& mT = pl.mean_at(N);
    acc += st.x.dot(p.coef.G * st.x) + st.xc.dot(p.coef.Gbar * st.xc) +
           mT.dot(p.coef.Gtilde * mT);
    return acc;
  };

  detail::for_each_path(sim.paths, [&](int path) {
    Vector x = ip.value;
    if (ip.kind == InitialPair::Kind::Gaussian) {
      x = sample_initial(ip, sqrt_cov, sim.seed, static_cast<std::uint64_t>(path));
    }
    if (kt > k0) {
      detail::PathState st;
      detail::init_path(warm, x, st);
      for (int k = k0; k < kt; ++k) {
        detail::step_path(warm, k,
                          detail::brownian_increment(sim.seed, static_cast<std::uint64_t>(path),
                                                     k, h),
                          nullptr, st);
      }
      x = st.x;
    }

    // Unperturbed continuation with the conditional channel re-anchored at t.
    detail::PathState st0;
    detail::init_path(warm, x, st0);
    const double j0 = tail_cost(warm, st0, path, nullptr, -1);
    cost0[static_cast<std::size_t>(path)] = j0;

    const Vector u_dag = Psi1 * x + Psi2 * m_t;
    const double base_quad = u_dag.dot(KR * u_dag) + 2.0 * u_dag.dot(Sx * x + Sm * m_t);
    for (int c = 0; c < nc; ++c) {
      const Vector u_p = cands[static_cast<std::size_t>(c)].K * x +
                         cands[static_cast<std::size_t>(c)].u0;
      an[static_cast<std::size_t>(c)][static_cast<std::size_t>(path)] =
          u_p.dot(KR * u_p) + 2.0 * u_p.dot(Sx * x + Sm * m_t) - base_quad;
      for (int e = 0; e < ne; ++e) {
        detail::PathState st;
        detail::init_path(branch[static_cast<std::size_t>(c)][static_cast<std::size_t>(e)], x,
                          st);
        const double je =
            tail_cost(branch[static_cast<std::size_t>(c)][static_cast<std::size_t>(e)], st, path,
                      &u_p, ke[static_cast<std::size_t>(e)]);
        dq[static_cast<std::size_t>(c)][static_cast<std::size_t>(e)]
          [static_cast<std::size_t>(path)] = (je - j0) / eps_list[static_cast<std::size_t>(e)];
      }
    }
  });

  // Richardson extrapolation over the two smallest eps values.
  const std::size_t i1 = eps_list.size() - 1;  // smallest
  const std::size_t i2 = eps_list.size() - 2;
  const double e1 = eps_list[i1];
  const double e2 = eps_list[i2];
  const double r = e2 / e1;

  double statistic = 0.0;
  double scale = 0.0;
  json cand_details = json::array();
  std::vector<double> extrap(np, 0.0), delta(np, 0.0);
  struct CandStat {
    double dx = 0.0;
    double se_x = 0.0;
    double se_delta = 0.0;
    double slope = 0.0;
    double an_mean = 0.0;
    double an_se = 0.0;
  };
  std::vector<CandStat> stats(static_cast<std::size_t>(nc));
  for (int c = 0; c < nc; ++c) {
    const std::size_t cc = static_cast<std::size_t>(c);
    for (std::size_t i = 0; i < np; ++i) {
      extrap[i] = (r * dq[cc][i1][i] - dq[cc][i2][i]) / (r - 1.0);
      delta[i] = extrap[i] - an[cc][i];
    }
    CandStat& cs = stats[cc];
    cs.dx = pairwise_mean(extrap);
    cs.se_x = standard_error(extrap);
    cs.se_delta = standard_error(delta);
    cs.an_mean = pairwise_mean(an[cc]);
    cs.an_se = standard_error(an[cc]);
    const double d1 = pairwise_mean(dq[cc][i1]);
    const double d2 = pairwise_mean(dq[cc][i2]);
    cs.slope = std::abs((d2 - d1) / (e2 - e1));
    scale = std::max(scale, std::abs(cs.an_mean));
  }
  // The quotient carries an O(h) offset inherited from discretizing the
  // feedback (the continuous minimizer is not the discrete one), and e1 is a
  // grid multiple, so the discretization component of the allowance scales
  // with e1 times the problem's curvature scale.
  const double disc = 0.5 * e1 * std::max(1.0, scale);
  for (int c = 0; c < nc; ++c) {
    const std::size_t cc = static_cast<std::size_t>(c);
    const CandStat& cs = stats[cc];
    const double allowance = 3.0 * cs.se_delta + cs.slope * e1 + disc;
    const double match = std::abs(cs.dx - cs.an_mean) / allowance;
    const double one_sided = -cs.dx / (1e-3 * scale + 3.0 * cs.se_x + disc + 1e-14);
    statistic = std::max(statistic, std::max(match, one_sided));

    json dd = json::array();
    for (int e = 0; e < ne; ++e) {
      dd.push_back(json{{"eps", eps_list[static_cast<std::size_t>(e)]},
                        {"mean", pairwise_mean(dq[cc][static_cast<std::size_t>(e)])},
                        {"se", standard_error(dq[cc][static_cast<std::size_t>(e)])}});
    }
    cand_details.push_back(json{{"label", cands[cc].label},
                                {"analytic", cs.an_mean},
                                {"analytic_se", cs.an_se},
                                {"extrapolated", cs.dx},
                                {"extrapolated_se", cs.se_x},
                                {"allowance", allowance},
                                {"match_statistic", match},
                                {"one_sided_statistic", one_sided},
                                {"quotients", dd}});
  }

  // Side information: the simulated cost at t against the mean part of its
  // closed form (the state part needs E<GammaBar x, x>, reported via MC only).
  const double j0_mean = pairwise_mean(cost0);
  const double an_cost = m_t.dot((Gt - Gb) * m_t);

  CheckReport rep;
  rep.name = "local_optimality";
  rep.statistic = statistic;
  rep.threshold = 1.0;
  rep.passed = statistic <= 1.0;
  rep.details = json{{"candidates", cand_details},
                     {"scale", scale},
                     {"paths", sim.paths},
                     {"cost_at_t_mc", j0_mean},
                     {"cost_at_t_mc_se", standard_error(cost0)},
                     {"cost_at_t_mean_term", an_cost}};
  return rep;
}

CheckReport check_reductions(const Problem& p, double threshold) {
  if (!p.coef.Abar.is_zero() || !p.coef.Cbar.is_zero() || !p.coef.Qbar.is_zero() ||
      !p.coef.Gbar.isZero(0.0)) {
    throw Error("precondition",
                "reduction check requires all conditional-expectation coefficients to vanish");
  }

  const RiccatiTriple tri = solve_precommitted_riccati(p);
  const EquilibriumTriple eq = solve_equilibrium_riccati(p);
  const GainSchedule g_pre = build_precommitted_strategy(p, tri, 0.0);
  const GainSchedule g_nai = build_naive_strategy(p, tri);
  const GainSchedule g_eq = build_equilibrium_strategy(p, eq);

  double d_pi = 0.0, d_gb = 0.0, d_gp = 0.0, d_phi = 0.0, d_psi1 = 0.0, d_psi2 = 0.0,
         d_bar = 0.0;
  for (int k = 0; k <= p.grid.N; ++k) {
    d_pi = std::max(d_pi, spectral_norm(tri.Pi.at(k) - tri.P.at(k)));
    d_gb = std::max(d_gb, spectral_norm(eq.GammaBar.at(k) - eq.Gamma.at(k)));
    d_gp = std::max(d_gp, spectral_norm(eq.Gamma.at(k) - tri.P.at(k)));
    d_phi = std::max(d_phi, spectral_norm(eq.GammaTilde.at(k) - tri.Phi.at(k)));
    const Matrix psi1_pre = g_pre.psi.at(k) + g_pre.psiBar.at(k);
    d_psi1 = std::max(d_psi1, spectral_norm(psi1_pre - g_nai.psi.at(k)));
    d_psi1 = std::max(d_psi1, spectral_norm(g_nai.psi.at(k) - g_eq.psi.at(k)));
    d_psi2 = std::max(d_psi2, spectral_norm(g_pre.psiTilde.at(k) - g_eq.psiTilde.at(k)));
    d_psi2 = std::max(d_psi2, spectral_norm(g_nai.psiTilde.at(k) - g_eq.psiTilde.at(k)));
    d_bar = std::max(d_bar, spectral_norm(g_pre.psiBar.at(k)));
  }

  CheckReport rep;
  rep.name = "reductions";
  rep.statistic =
      std::max({d_pi, d_gb, d_gp, d_phi, d_psi1, d_psi2, d_bar});
  rep.threshold = threshold;
  rep.passed = rep.statistic <= rep.threshold;
  rep.details = json{{"pi_vs_p", d_pi},         {"gammabar_vs_gamma", d_gb},
                     {"gamma_vs_p", d_gp},      {"gammatilde_vs_phi", d_phi},
                     {"psi1_gap", d_psi1},      {"psi2_gap", d_psi2},
                     {"precommitted_cond_gain", d_bar}};
  return rep;
}

}  // namespace mfc
