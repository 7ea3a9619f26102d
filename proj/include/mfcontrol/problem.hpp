#pragma once
// Problem data model: dimensions, uniform time grid, coefficient set with
// constant-or-per-node entries, initial pairs, loading/validation.
//
// Dynamics on [0,T]:
//   dX = {A X + Abar E_t[X] + Atilde E[X] + B u} ds
//      + {C X + Cbar E_t[X] + Ctilde E[X] + D u} dW
// Cost: running <Q X,X> + <Qbar E_t[X],E_t[X]> + <Qtilde E[X],E[X]> + <R u,u>,
// terminal <G X,X> + <Gbar E_t[X],E_t[X]> + <Gtilde E[X],E[X]>.

#include <string>
#include <vector>

#include "mfcontrol/core.hpp"

namespace mfc {

struct Dimensions {
  int n = 1;  // state dimension
  int m = 1;  // control dimension
};

// Uniform grid s_k = k*T/N, k = 0..N.
struct TimeGrid {
  double T = 1.0;
  int N = 2;

  double step() const { return T / N; }
  int size() const { return N + 1; }
  double node(int k) const { return (static_cast<double>(k) * T) / N; }

  // Exact node lookup; throws Error("grid") when t is not a node.
  int index_of(double t) const;
};

// A coefficient that is either constant in time or given per grid node.
class Coefficient {
 public:
  Coefficient() = default;
  explicit Coefficient(Matrix constant) : vals_{std::move(constant)} {}
  explicit Coefficient(std::vector<Matrix> path) : vals_(std::move(path)) {}

  bool is_constant() const { return vals_.size() == 1; }
  bool empty() const { return vals_.empty(); }
  int path_size() const { return static_cast<int>(vals_.size()); }

  const Matrix& at(int k) const {
    return vals_.size() == 1 ? vals_[0] : vals_[static_cast<std::size_t>(k)];
  }
  const std::vector<Matrix>& values() const { return vals_; }

  bool is_zero() const {
    for (const Matrix& m : vals_) {
      if (!m.isZero(0.0)) return false;
    }
    return true;
  }

 private:
  std::vector<Matrix> vals_;
};

struct CoefficientSet {
  Coefficient A, Abar, Atilde, B, C, Cbar, Ctilde, D;
  Coefficient Q, Qbar, Qtilde, R;
  Matrix G, Gbar, Gtilde;
};

struct Problem {
  Dimensions dims;
  TimeGrid grid;
  CoefficientSet coef;
  double delta = 1e-6;  // strong convexity floor for R

  const Matrix& A(int k) const { return coef.A.at(k); }
  const Matrix& Abar(int k) const { return coef.Abar.at(k); }
  const Matrix& Atilde(int k) const { return coef.Atilde.at(k); }
  const Matrix& B(int k) const { return coef.B.at(k); }
  const Matrix& C(int k) const { return coef.C.at(k); }
  const Matrix& Cbar(int k) const { return coef.Cbar.at(k); }
  const Matrix& Ctilde(int k) const { return coef.Ctilde.at(k); }
  const Matrix& D(int k) const { return coef.D.at(k); }
  const Matrix& Q(int k) const { return coef.Q.at(k); }
  const Matrix& Qbar(int k) const { return coef.Qbar.at(k); }
  const Matrix& Qtilde(int k) const { return coef.Qtilde.at(k); }
  const Matrix& R(int k) const { return coef.R.at(k); }
};

// Initial pair (t, xi): t must be a grid node strictly below T.
struct InitialPair {
  enum class Kind { Deterministic, Gaussian };

  Kind kind = Kind::Deterministic;
  double t = 0.0;
  Vector value;  // deterministic state, or Gaussian mean
  Matrix cov;    // Gaussian covariance (ignored for deterministic)

  static InitialPair deterministic(double t, Vector x);
  static InitialPair gaussian(double t, Vector mean, Matrix cov);
  const Vector& mean() const { return value; }
};

struct ValidationReport {
  bool h1_ok = false;  // finite bounded coefficients, consistent shapes
  bool h2_ok = false;  // weights PSD, R uniformly positive definite
  double min_eig_weights = 0.0;  // min over nodes of the Q/G family eigenvalues
  double min_eig_R = 0.0;        // min over nodes of lambda_min(R)
  std::vector<std::string> violations;
  bool ok() const { return h1_ok && h2_ok; }
};

// Parse a problem from JSON:
// {n, m, T, N, coefficients: {A: scalar|matrix|{"path": [...]}, ...},
//  terminal: {G, Gbar, Gtilde}, delta?}
// Missing coefficients default to zero. Scalar x means x*I (rectangular
// identity for B, D). Shape, symmetry (1e-12 relative, weight blocks),
// finiteness, and schema violations raise Error.
Problem load_problem(const json& config);
Problem load_problem_file(const std::string& path);
json save_problem(const Problem& p);

// Assumption check: H1 finiteness/shapes, H2 PSD weights and R >= delta I
// (eigenvalue slack psd_tol).
ValidationReport validate_assumptions(const Problem& p, double delta, double psd_tol = 1e-10);
ValidationReport validate_assumptions(const Problem& p);

// Pure lookup with bounds checking (k in [0, N]); `which` is one of
// A, Abar, Atilde, B, C, Cbar, Ctilde, D, Q, Qbar, Qtilde, R, G, Gbar, Gtilde.
Matrix coefficient_at(const Problem& p, const std::string& which, int k);

// Exact grid refinement under the left-value convention: every cell value is
// repeated `factor` times; node count becomes N*factor.
Problem refine_grid(const Problem& p, int factor);

// Rebuild with a different N. Exact for constant coefficients or when steps
// is a multiple of N; otherwise raises Error("usage").
Problem with_steps(const Problem& p, int steps);

// Checks t is a grid node < T, shapes match, Gaussian covariance is
// symmetric PSD. Throws Error on violation.
void validate_initial_pair(const Problem& p, const InitialPair& ip);

// Reads the optional "initial" block of a problem config; defaults to the
// deterministic all-ones state at time zero when the block is absent.
InitialPair load_initial_pair(const json& config, const Problem& p);

}  // namespace mfc
