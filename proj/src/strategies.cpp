// Builders turning solved backward systems into feedback gain schedules.

#include "mfcontrol/strategies.hpp"

namespace mfc {

namespace {

GainSchedule schedule_from_triple(const Problem& p, const MatrixPath& X1, const MatrixPath& X2,
                                  const MatrixPath& X3) {
  GainSchedule g;
  g.psi.grid = g.psiBar.grid = g.psiTilde.grid = p.grid;
  const std::size_t sz = static_cast<std::size_t>(p.grid.N + 1);
  g.psi.values.resize(sz);
  g.psiBar.values.resize(sz);
  g.psiTilde.values.resize(sz);
  for (int k = 0; k <= p.grid.N; ++k) {
    GainBlocks b = feedback_gains(p, k, X1.at(k), X2.at(k), X3.at(k), p.grid.node(k));
    g.psi.at(k) = std::move(b.psi);
    g.psiBar.at(k) = std::move(b.psiBar);
    g.psiTilde.at(k) = std::move(b.psiTilde);
  }
  return g;
}

}  // namespace

GainSchedule build_precommitted_strategy(const Problem& p, const RiccatiTriple& tri, double t) {
  const int k0 = p.grid.index_of(t);  // throws on non-node anchors
  if (k0 >= p.grid.N) {
    throw Error("precondition", "pre-committed anchor must lie before the horizon",
                {{"t", t}, {"T", p.grid.T}});
  }
  GainSchedule g = schedule_from_triple(p, tri.P, tri.Pi, tri.Phi);
  g.kind = GainSchedule::Kind::PreCommitted;
  g.t = p.grid.node(k0);
  return g;
}

GainSchedule build_naive_strategy(const Problem& p, const RiccatiTriple& tri) {
  GainSchedule g = schedule_from_triple(p, tri.P, tri.Pi, tri.Phi);
  g.kind = GainSchedule::Kind::Naive;
  g.t = 0.0;
  for (int k = 0; k <= p.grid.N; ++k) {
    g.psi.at(k) += g.psiBar.at(k);  // Psi1_hat = psi + psiBar
    g.psiBar.at(k).setZero();
  }
  return g;
}

GainSchedule build_equilibrium_strategy(const Problem& p, const EquilibriumTriple& eq) {
  GainSchedule g = schedule_from_triple(p, eq.Gamma, eq.GammaBar, eq.GammaTilde);
  g.kind = GainSchedule::Kind::Equilibrium;
  g.t = 0.0;
  for (int k = 0; k <= p.grid.N; ++k) {
    g.psi.at(k) += g.psiBar.at(k);  // Psi1 = psi_dagger + psiBar_dagger
    g.psiBar.at(k).setZero();
  }
  return g;
}

Vector apply_feedback(const GainSchedule& g, int k, const Vector& x, const Vector& cond_mean,
                      const Vector& mean) {
  if (k < 0 || k >= static_cast<int>(g.psi.values.size())) {
    throw Error("index", "feedback node out of range",
                {{"k", k}, {"nodes", g.psi.values.size()}});
  }
  return g.psi.at(k) * x + g.psiBar.at(k) * cond_mean + g.psiTilde.at(k) * mean;
}

}  // namespace mfc
