// Closed-loop and spike-perturbed ensemble simulation, and Monte Carlo cost.

#include "mfcontrol/simulate.hpp"

#include "mfcontrol/detail/engine.hpp"
#include "mfcontrol/riccati.hpp"

namespace mfc {

namespace {

Vector draw_initial(const InitialPair& ip, const Matrix& sqrt_cov, std::uint64_t seed,
                    std::uint64_t path, double sign) {
  if (ip.kind == InitialPair::Kind::Deterministic) return ip.value;
  Vector z(ip.value.size());
  for (int j = 0; j < z.size(); ++j) {
    z[j] = rng::normal(seed, path, rng::kInitStep, static_cast<std::uint64_t>(j));
  }
  return ip.value + sign * (sqrt_cov * z);
}

struct EnsembleLayout {
  int paths = 0;
  int k0 = 0;
};

PathEnsemble make_ensemble(const Problem& p, const detail::LoopCoeffs& loop,
                           const EnsembleLayout& lay) {
  PathEnsemble ens;
  ens.grid = p.grid;
  ens.dims = p.dims;
  ens.k0 = lay.k0;
  ens.anchor_times = loop.anchor_time;
  const std::size_t np = static_cast<std::size_t>(lay.paths);
  ens.states.assign(np, Matrix());
  ens.cond_means.assign(np, Matrix());
  ens.controls.assign(np, Matrix());
  ens.increments.assign(np, Vector());
  ens.mean.assign(static_cast<std::size_t>(p.grid.N + 1), Vector());
  return ens;
}

// Runs one path through a prepared loop over [run_lo, N], recording into the
// ensemble from node rec_lo on; warm-up nodes repeat the first recorded
// column. ext(k) supplies the per-path window control (null outside).
void run_recorded_path(const Problem& p, const detail::PreparedLoop& pl, PathEnsemble& ens,
                       int path, const Vector& x_start, std::uint64_t seed, std::uint64_t base,
                       double sign, const Vector* u_ext) {
  const int N = p.grid.N;
  const int k0 = pl.loop.k0;
  const double h = p.grid.step();
  Matrix& xs = ens.states[static_cast<std::size_t>(path)];
  Matrix& cs = ens.cond_means[static_cast<std::size_t>(path)];
  Matrix& us = ens.controls[static_cast<std::size_t>(path)];
  Vector& dws = ens.increments[static_cast<std::size_t>(path)];
  xs.resize(p.dims.n, N + 1);
  cs.resize(p.dims.n, N + 1);
  us.resize(p.dims.m, N + 1);
  dws = Vector::Zero(N);

  detail::PathState st;
  detail::init_path(pl, x_start, st);
  try {
    for (int k = k0; k <= N; ++k) {
      xs.col(k) = st.x;
      cs.col(k) = st.xc;
      us.col(k) = detail::path_control(pl, k, st, u_ext);
      if (k == N) break;
      const double dw = sign * detail::brownian_increment(seed, base, k, h);
      dws[k] = dw;
      detail::step_path(pl, k, dw, u_ext, st);
    }
  } catch (const Error& e) {
    json detail = e.detail();
    detail["path"] = path;
    throw Error(e.code(), e.what(), detail);
  }
  for (int k = 0; k < k0; ++k) {
    xs.col(k) = xs.col(k0);
    cs.col(k) = cs.col(k0);
    us.col(k).setZero();
  }
}

void check_sim(const SimConfig& sim) {
  if (sim.paths < 2) {
    throw Error("precondition", "at least two paths required", {{"paths", sim.paths}});
  }
}

}  // namespace

Vector sample_initial(const InitialPair& ip, const Matrix& sqrt_cov, std::uint64_t seed,
                      std::uint64_t path) {
  return draw_initial(ip, sqrt_cov, seed, path, 1.0);
}

PathEnsemble simulate_closed_loop(const Problem& p, const GainSchedule& g, const InitialPair& ip,
                                  const SimConfig& sim) {
  check_sim(sim);
  validate_initial_pair(p, ip);
  const int k0 = p.grid.index_of(ip.t);
  if (p.grid.index_of(sim.t0) != k0) {
    throw Error("precondition", "simulation start differs from the initial pair time",
                {{"t0", sim.t0}, {"ip_t", ip.t}});
  }

  detail::PreparedLoop pl = detail::prepare_loop(detail::build_loop(p, g, k0), ip.mean());
  Matrix sqrt_cov;
  if (ip.kind == InitialPair::Kind::Gaussian) sqrt_cov = detail::symmetric_sqrt(ip.cov);

  PathEnsemble ens = make_ensemble(p, pl.loop, {sim.paths, k0});
  for (int k = 0; k <= p.grid.N; ++k) ens.mean[static_cast<std::size_t>(k)] = pl.mean_at(k);

  detail::for_each_path(sim.paths, [&](int path) {
    const std::uint64_t base = sim.antithetic ? static_cast<std::uint64_t>(path / 2)
                                              : static_cast<std::uint64_t>(path);
    const double sign = (sim.antithetic && (path % 2 == 1)) ? -1.0 : 1.0;
    const Vector x0 = draw_initial(ip, sqrt_cov, sim.seed, base, sign);
    run_recorded_path(p, pl, ens, path, x0, sim.seed, base, sign, nullptr);
  });
  return ens;
}

PathEnsemble simulate_perturbed(const Problem& p, const GainSchedule& g, const InitialPair& ip,
                                double t, double eps, const Vector& u_const,
                                const SimConfig& sim) {
  check_sim(sim);
  validate_initial_pair(p, ip);
  if (g.kind != GainSchedule::Kind::Equilibrium) {
    throw Error("precondition", "spike variation requires an equilibrium schedule");
  }
  if (eps < 0) throw Error("precondition", "negative perturbation window", {{"eps", eps}});
  const int k0 = p.grid.index_of(ip.t);
  if (p.grid.index_of(sim.t0) != k0) {
    throw Error("precondition", "simulation start differs from the initial pair time",
                {{"t0", sim.t0}, {"ip_t", ip.t}});
  }
  const int kt = p.grid.index_of(t);
  const int ke = p.grid.index_of(t + eps);  // throws when eps is off-grid
  if (kt < k0 || kt >= p.grid.N) {
    throw Error("precondition", "perturbation time outside the simulated horizon",
                {{"t", t}, {"t0", ip.t}, {"T", p.grid.T}});
  }
  if (u_const.size() != p.dims.m) {
    throw Error("shape", "constant control has wrong size",
                {{"expected", p.dims.m}, {"got", u_const.size()}});
  }

  Matrix sqrt_cov;
  if (ip.kind == InitialPair::Kind::Gaussian) sqrt_cov = detail::symmetric_sqrt(ip.cov);

  // Warm-up segment under the plain equilibrium loop, then the branch that
  // carries the window and the t-anchored conditional channel.
  detail::PreparedLoop warm;
  Vector branch_mean0 = ip.mean();
  if (kt > k0) {
    warm = detail::prepare_loop(detail::build_loop(p, g, k0), ip.mean());
    branch_mean0 = warm.mean_at(kt);
  }
  detail::PreparedLoop branch =
      detail::prepare_loop(detail::build_windowed_loop(p, g, kt, kt, ke, u_const), branch_mean0);

  PathEnsemble ens = make_ensemble(p, branch.loop, {sim.paths, kt});
  for (int k = 0; k <= p.grid.N; ++k) ens.mean[static_cast<std::size_t>(k)] = branch.mean_at(k);

  const double h = p.grid.step();
  detail::for_each_path(sim.paths, [&](int path) {
    const std::uint64_t base = sim.antithetic ? static_cast<std::uint64_t>(path / 2)
                                              : static_cast<std::uint64_t>(path);
    const double sign = (sim.antithetic && (path % 2 == 1)) ? -1.0 : 1.0;
    Vector x = draw_initial(ip, sqrt_cov, sim.seed, base, sign);
    if (kt > k0) {
      detail::PathState st;
      detail::init_path(warm, x, st);
      for (int k = k0; k < kt; ++k) {
        detail::step_path(warm, k, sign * detail::brownian_increment(sim.seed, base, k, h),
                          nullptr, st);
      }
      x = st.x;
    }
    run_recorded_path(p, branch, ens, path, x, sim.seed, base, sign, &u_const);
  });
  return ens;
}

CostEstimate estimate_cost(const Problem& p, const PathEnsemble& ens, double t) {
  const int N = p.grid.N;
  if (ens.grid.N != N || std::abs(ens.grid.T - p.grid.T) > 1e-12 * std::max(1.0, p.grid.T)) {
    throw Error("shape", "ensemble grid does not match the problem grid");
  }
  const int kt = p.grid.index_of(t);
  if (kt < ens.k0) {
    throw Error("precondition", "ensemble does not cover the evaluation interval",
                {{"t", t}, {"ensemble_start", p.grid.node(ens.k0)}});
  }
  const int paths = static_cast<int>(ens.states.size());
  if (paths < 1 || ens.cond_means.size() != ens.states.size() ||
      ens.controls.size() != ens.states.size()) {
    throw Error("shape", "ensemble path arrays are inconsistent");
  }
  for (const Matrix& xs : ens.states) {
    if (xs.rows() != p.dims.n || xs.cols() != N + 1) {
      throw Error("shape", "state path has wrong shape",
                  {{"rows", xs.rows()}, {"cols", xs.cols()}});
    }
  }

  const bool cond_blocks_active = !p.coef.Qbar.is_zero() || !p.coef.Gbar.isZero(0.0);
  if (cond_blocks_active) {
    for (int k = kt; k <= N; ++k) {
      if (std::abs(ens.anchor_times[static_cast<std::size_t>(k)] - t) >
          1e-9 * std::max(1.0, p.grid.T)) {
        throw Error("precondition",
                    "ensemble conditional means are anchored away from the evaluation time",
                    {{"node", k}, {"anchor", ens.anchor_times[static_cast<std::size_t>(k)]},
                     {"t", t}});
      }
    }
  }

  const double h = p.grid.step();
  std::vector<double> vals(static_cast<std::size_t>(paths), 0.0);
  detail::for_each_path(paths, [&](int path) {
    const Matrix& xs = ens.states[static_cast<std::size_t>(path)];
    const Matrix& cs = ens.cond_means[static_cast<std::size_t>(path)];
    const Matrix& us = ens.controls[static_cast<std::size_t>(path)];
    double acc = 0.0;
    for (int k = kt; k <= N; ++k) {
      const auto x = xs.col(k);
      const auto xc = cs.col(k);
      const auto u = us.col(k);
      const Vector& m = ens.mean[static_cast<std::size_t>(k)];
      const double f = x.dot(p.Q(k) * x) + xc.dot(p.Qbar(k) * xc) + m.dot(p.Qtilde(k) * m) +
                       u.dot(p.R(k) * u);
      const double w = (k == kt || k == N) ? 0.5 * h : h;
      acc += (kt == N) ? 0.0 : w * f;
    }
    const auto xT = xs.col(N);
    const auto cT = cs.col(N);
    const Vector& mT = ens.mean[static_cast<std::size_t>(N)];
    acc += xT.dot(p.coef.G * xT) + cT.dot(p.coef.Gbar * cT) + mT.dot(p.coef.Gtilde * mT);
    vals[static_cast<std::size_t>(path)] = acc;
  });

  CostEstimate est;
  est.paths = paths;
  est.value = pairwise_mean(vals);
  est.std_error = standard_error(vals);
  return est;
}

}  // namespace mfc
