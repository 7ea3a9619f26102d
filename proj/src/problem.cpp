// Problem loading, validation, and grid utilities.

#include "mfcontrol/problem.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>

namespace mfc {

namespace {

constexpr double kSymTol = 1e-12;

struct CoefSpec {
  const char* name;
  int rows, cols;      // expected shape
  bool symmetric;      // weight blocks must be symmetric
};

bool matrix_finite(const Matrix& m) { return m.allFinite(); }

Matrix parse_matrix_entry(const json& v, int rows, int cols, const std::string& key) {
  if (v.is_number()) {
    const double s = v.get<double>();
    Matrix out = Matrix::Identity(rows, cols) * s;
    return out;
  }
  if (!v.is_array()) {
    throw Error("schema", "coefficient '" + key + "' must be a number, a matrix, or a path object",
                {{"key", key}});
  }
  if (static_cast<int>(v.size()) != rows) {
    throw Error("shape", "coefficient '" + key + "' has wrong row count",
                {{"key", key}, {"expected_rows", rows}, {"got_rows", v.size()}});
  }
  Matrix out(rows, cols);
  for (int i = 0; i < rows; ++i) {
    const json& row = v[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<int>(row.size()) != cols) {
      throw Error("shape", "coefficient '" + key + "' has wrong column count in row " + std::to_string(i),
                  {{"key", key}, {"expected_cols", cols}});
    }
    for (int j = 0; j < cols; ++j) {
      const json& cell = row[static_cast<std::size_t>(j)];
      if (!cell.is_number()) {
        throw Error("schema", "coefficient '" + key + "' has a non-numeric entry", {{"key", key}});
      }
      out(i, j) = cell.get<double>();
    }
  }
  return out;
}

Matrix finish_block(Matrix m, const std::string& key, bool symmetric) {
  if (!matrix_finite(m)) {
    throw Error("nonfinite", "coefficient '" + key + "' contains a non-finite entry", {{"key", key}});
  }
  if (symmetric) {
    const double asym = relative_asymmetry(m);
    if (asym > kSymTol) {
      throw Error("symmetry", "coefficient '" + key + "' is not symmetric",
                  {{"key", key}, {"relative_asymmetry", asym}});
    }
    m = symmetrized(m);
  }
  return m;
}

Coefficient parse_coefficient(const json& coeffs, const CoefSpec& spec, int N) {
  const std::string key = spec.name;
  if (!coeffs.contains(key)) {
    return Coefficient(Matrix::Zero(spec.rows, spec.cols));
  }
  const json& v = coeffs.at(key);
  if (v.is_object()) {
    if (!v.contains("path") || v.size() != 1) {
      throw Error("schema", "coefficient '" + key + "' object form must have exactly the 'path' key",
                  {{"key", key}});
    }
    const json& arr = v.at("path");
    if (!arr.is_array() || static_cast<int>(arr.size()) != N + 1) {
      throw Error("shape", "coefficient '" + key + "' path must list one value per grid node",
                  {{"key", key}, {"expected", N + 1},
                   {"got", arr.is_array() ? arr.size() : 0}});
    }
    std::vector<Matrix> path;
    path.reserve(static_cast<std::size_t>(N + 1));
    for (const json& e : arr) {
      path.push_back(finish_block(parse_matrix_entry(e, spec.rows, spec.cols, key), key, spec.symmetric));
    }
    return Coefficient(std::move(path));
  }
  return Coefficient(finish_block(parse_matrix_entry(v, spec.rows, spec.cols, key), key, spec.symmetric));
}

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

json coefficient_to_json(const Coefficient& c) {
  if (c.is_constant()) return matrix_to_json(c.at(0));
  json arr = json::array();
  for (const Matrix& m : c.values()) arr.push_back(matrix_to_json(m));
  return json{{"path", std::move(arr)}};
}

int require_int(const json& cfg, const char* key, int lo) {
  if (!cfg.contains(key)) {
    throw Error("schema", std::string("missing required key '") + key + "'", {{"key", key}});
  }
  const json& v = cfg.at(key);
  if (!v.is_number_integer() || v.get<long long>() < lo) {
    throw Error("schema", std::string("key '") + key + "' must be an integer >= " + std::to_string(lo),
                {{"key", key}});
  }
  return v.get<int>();
}

}  // namespace

int TimeGrid::index_of(double t) const {
  const double h = step();
  const int k = static_cast<int>(std::lround(t / h));
  if (k < 0 || k > N || std::abs(node(k) - t) > 1e-9 * std::max(1.0, T)) {
    throw Error("grid", "time " + std::to_string(t) + " is not a grid node",
                {{"t", t}, {"T", T}, {"N", N}});
  }
  return k;
}

InitialPair InitialPair::deterministic(double t, Vector x) {
  InitialPair ip;
  ip.kind = Kind::Deterministic;
  ip.t = t;
  ip.value = std::move(x);
  return ip;
}

InitialPair InitialPair::gaussian(double t, Vector mean, Matrix cov) {
  InitialPair ip;
  ip.kind = Kind::Gaussian;
  ip.t = t;
  ip.value = std::move(mean);
  ip.cov = std::move(cov);
  return ip;
}

Problem load_problem(const json& config) {
  if (!config.is_object()) throw Error("schema", "problem config must be a JSON object");

  static const std::set<std::string> known{"n",     "m",        "T",    "N",      "coefficients",
                                           "terminal", "delta", "name", "comment", "initial"};
  for (const auto& item : config.items()) {
    if (!known.count(item.key())) {
      throw Error("schema", "unknown top-level key '" + item.key() + "'", {{"key", item.key()}});
    }
  }

  Problem p;
  p.dims.n = require_int(config, "n", 1);
  p.dims.m = require_int(config, "m", 1);
  p.grid.N = require_int(config, "N", 2);

  if (!config.contains("T") || !config.at("T").is_number()) {
    throw Error("schema", "missing or non-numeric key 'T'", {{"key", "T"}});
  }
  p.grid.T = config.at("T").get<double>();
  if (!(p.grid.T > 0.0) || !std::isfinite(p.grid.T)) {
    throw Error("schema", "'T' must be a finite positive number", {{"key", "T"}});
  }

  if (config.contains("delta")) {
    if (!config.at("delta").is_number()) throw Error("schema", "'delta' must be a number", {{"key", "delta"}});
    p.delta = config.at("delta").get<double>();
    if (!(p.delta > 0.0) || !std::isfinite(p.delta)) {
      throw Error("schema", "'delta' must be a finite positive number", {{"key", "delta"}});
    }
  }

  const int n = p.dims.n;
  const int m = p.dims.m;
  const json coeffs = config.contains("coefficients") ? config.at("coefficients") : json::object();
  if (!coeffs.is_object()) throw Error("schema", "'coefficients' must be an object");

  const std::vector<CoefSpec> specs{
      {"A", n, n, false},     {"Abar", n, n, false},   {"Atilde", n, n, false},
      {"B", n, m, false},     {"C", n, n, false},      {"Cbar", n, n, false},
      {"Ctilde", n, n, false}, {"D", n, m, false},
      {"Q", n, n, true},      {"Qbar", n, n, true},    {"Qtilde", n, n, true},
      {"R", m, m, true}};

  std::set<std::string> known_coeffs;
  for (const auto& s : specs) known_coeffs.insert(s.name);
  for (const auto& item : coeffs.items()) {
    if (!known_coeffs.count(item.key())) {
      throw Error("schema", "unknown coefficient name '" + item.key() + "'", {{"key", item.key()}});
    }
  }

  p.coef.A = parse_coefficient(coeffs, specs[0], p.grid.N);
  p.coef.Abar = parse_coefficient(coeffs, specs[1], p.grid.N);
  p.coef.Atilde = parse_coefficient(coeffs, specs[2], p.grid.N);
  p.coef.B = parse_coefficient(coeffs, specs[3], p.grid.N);
  p.coef.C = parse_coefficient(coeffs, specs[4], p.grid.N);
  p.coef.Cbar = parse_coefficient(coeffs, specs[5], p.grid.N);
  p.coef.Ctilde = parse_coefficient(coeffs, specs[6], p.grid.N);
  p.coef.D = parse_coefficient(coeffs, specs[7], p.grid.N);
  p.coef.Q = parse_coefficient(coeffs, specs[8], p.grid.N);
  p.coef.Qbar = parse_coefficient(coeffs, specs[9], p.grid.N);
  p.coef.Qtilde = parse_coefficient(coeffs, specs[10], p.grid.N);
  p.coef.R = parse_coefficient(coeffs, specs[11], p.grid.N);

  const json term = config.contains("terminal") ? config.at("terminal") : json::object();
  if (!term.is_object()) throw Error("schema", "'terminal' must be an object");
  for (const auto& item : term.items()) {
    if (item.key() != "G" && item.key() != "Gbar" && item.key() != "Gtilde") {
      throw Error("schema", "unknown terminal block '" + item.key() + "'", {{"key", item.key()}});
    }
  }
  auto parse_terminal = [&](const char* key) -> Matrix {
    if (!term.contains(key)) return Matrix::Zero(n, n);
    return finish_block(parse_matrix_entry(term.at(key), n, n, key), key, true);
  };
  p.coef.G = parse_terminal("G");
  p.coef.Gbar = parse_terminal("Gbar");
  p.coef.Gtilde = parse_terminal("Gtilde");

  return p;
}

Problem load_problem_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("io", "cannot open problem file '" + path + "'", {{"path", path}});
  json config;
  try {
    in >> config;
  } catch (const json::parse_error& e) {
    throw Error("schema", std::string("invalid JSON: ") + e.what(), {{"path", path}});
  }
  return load_problem(config);
}

json save_problem(const Problem& p) {
  json coeffs;
  coeffs["A"] = coefficient_to_json(p.coef.A);
  coeffs["Abar"] = coefficient_to_json(p.coef.Abar);
  coeffs["Atilde"] = coefficient_to_json(p.coef.Atilde);
  coeffs["B"] = coefficient_to_json(p.coef.B);
  coeffs["C"] = coefficient_to_json(p.coef.C);
  coeffs["Cbar"] = coefficient_to_json(p.coef.Cbar);
  coeffs["Ctilde"] = coefficient_to_json(p.coef.Ctilde);
  coeffs["D"] = coefficient_to_json(p.coef.D);
  coeffs["Q"] = coefficient_to_json(p.coef.Q);
  coeffs["Qbar"] = coefficient_to_json(p.coef.Qbar);
  coeffs["Qtilde"] = coefficient_to_json(p.coef.Qtilde);
  coeffs["R"] = coefficient_to_json(p.coef.R);
  return json{{"n", p.dims.n},
              {"m", p.dims.m},
              {"T", p.grid.T},
              {"N", p.grid.N},
              {"delta", p.delta},
              {"coefficients", std::move(coeffs)},
              {"terminal",
               {{"G", matrix_to_json(p.coef.G)},
                {"Gbar", matrix_to_json(p.coef.Gbar)},
                {"Gtilde", matrix_to_json(p.coef.Gtilde)}}}};
}

ValidationReport validate_assumptions(const Problem& p, double delta, double psd_tol) {
  ValidationReport rep;
  rep.h1_ok = true;
  rep.h2_ok = true;
  rep.min_eig_weights = std::numeric_limits<double>::infinity();
  rep.min_eig_R = std::numeric_limits<double>::infinity();

  auto check_finite = [&](const Coefficient& c, const char* name) {
    for (const Matrix& m : c.values()) {
      if (!m.allFinite()) {
        rep.h1_ok = false;
        rep.violations.push_back(std::string(name) + ": non-finite entry");
        return;
      }
    }
  };
  check_finite(p.coef.A, "A");
  check_finite(p.coef.Abar, "Abar");
  check_finite(p.coef.Atilde, "Atilde");
  check_finite(p.coef.B, "B");
  check_finite(p.coef.C, "C");
  check_finite(p.coef.Cbar, "Cbar");
  check_finite(p.coef.Ctilde, "Ctilde");
  check_finite(p.coef.D, "D");
  check_finite(p.coef.Q, "Q");
  check_finite(p.coef.Qbar, "Qbar");
  check_finite(p.coef.Qtilde, "Qtilde");
  check_finite(p.coef.R, "R");
  if (!p.coef.G.allFinite() || !p.coef.Gbar.allFinite() || !p.coef.Gtilde.allFinite()) {
    rep.h1_ok = false;
    rep.violations.push_back("terminal: non-finite entry");
  }

  auto check_psd_path = [&](const Coefficient& c, const char* name) {
    double low = std::numeric_limits<double>::infinity();
    for (const Matrix& m : c.values()) low = std::min(low, min_eigenvalue(m));
    rep.min_eig_weights = std::min(rep.min_eig_weights, low);
    if (low < -psd_tol) {
      rep.h2_ok = false;
      rep.violations.push_back(std::string(name) + ": min eigenvalue " + std::to_string(low));
    }
  };
  check_psd_path(p.coef.Q, "Q");
  check_psd_path(p.coef.Qbar, "Qbar");
  check_psd_path(p.coef.Qtilde, "Qtilde");

  auto check_psd_terminal = [&](const Matrix& m, const char* name) {
    const double low = min_eigenvalue(m);
    rep.min_eig_weights = std::min(rep.min_eig_weights, low);
    if (low < -psd_tol) {
      rep.h2_ok = false;
      rep.violations.push_back(std::string(name) + ": min eigenvalue " + std::to_string(low));
    }
  };
  check_psd_terminal(p.coef.G, "G");
  check_psd_terminal(p.coef.Gbar, "Gbar");
  check_psd_terminal(p.coef.Gtilde, "Gtilde");

  for (const Matrix& m : p.coef.R.values()) {
    const double low = min_eigenvalue(m);
    rep.min_eig_R = std::min(rep.min_eig_R, low);
    if (low < delta - psd_tol) {
      rep.h2_ok = false;
      rep.violations.push_back("R: min eigenvalue " + std::to_string(low) +
                               " below delta " + std::to_string(delta));
      break;
    }
  }

  return rep;
}

ValidationReport validate_assumptions(const Problem& p) {
  return validate_assumptions(p, p.delta, 1e-10);
}

Matrix coefficient_at(const Problem& p, const std::string& which, int k) {
  if (k < 0 || k > p.grid.N) {
    throw Error("index", "node index " + std::to_string(k) + " outside [0, N]",
                {{"k", k}, {"N", p.grid.N}});
  }
  if (which == "A") return p.A(k);
  if (which == "Abar") return p.Abar(k);
  if (which == "Atilde") return p.Atilde(k);
  if (which == "B") return p.B(k);
  if (which == "C") return p.C(k);
  if (which == "Cbar") return p.Cbar(k);
  if (which == "Ctilde") return p.Ctilde(k);
  if (which == "D") return p.D(k);
  if (which == "Q") return p.Q(k);
  if (which == "Qbar") return p.Qbar(k);
  if (which == "Qtilde") return p.Qtilde(k);
  if (which == "R") return p.R(k);
  if (which == "G") return p.coef.G;
  if (which == "Gbar") return p.coef.Gbar;
  if (which == "Gtilde") return p.coef.Gtilde;
  throw Error("schema", "unknown coefficient name '" + which + "'", {{"key", which}});
}

Problem refine_grid(const Problem& p, int factor) {
  if (factor < 1) throw Error("usage", "refinement factor must be >= 1", {{"factor", factor}});
  Problem out = p;
  out.grid.N = p.grid.N * factor;
  auto refine = [&](const Coefficient& c) -> Coefficient {
    if (c.is_constant() || c.empty()) return c;
    std::vector<Matrix> path;
    path.reserve(static_cast<std::size_t>(out.grid.N + 1));
    for (int k = 0; k < p.grid.N; ++k) {
      for (int r = 0; r < factor; ++r) path.push_back(c.at(k));
    }
    path.push_back(c.at(p.grid.N));
    return Coefficient(std::move(path));
  };
  out.coef.A = refine(p.coef.A);
  out.coef.Abar = refine(p.coef.Abar);
  out.coef.Atilde = refine(p.coef.Atilde);
  out.coef.B = refine(p.coef.B);
  out.coef.C = refine(p.coef.C);
  out.coef.Cbar = refine(p.coef.Cbar);
  out.coef.Ctilde = refine(p.coef.Ctilde);
  out.coef.D = refine(p.coef.D);
  out.coef.Q = refine(p.coef.Q);
  out.coef.Qbar = refine(p.coef.Qbar);
  out.coef.Qtilde = refine(p.coef.Qtilde);
  out.coef.R = refine(p.coef.R);
  return out;
}

Problem with_steps(const Problem& p, int steps) {
  if (steps < 2) throw Error("usage", "steps must be >= 2", {{"steps", steps}});
  if (steps == p.grid.N) return p;
  if (steps % p.grid.N == 0) return refine_grid(p, steps / p.grid.N);

  const bool all_constant =
      p.coef.A.is_constant() && p.coef.Abar.is_constant() && p.coef.Atilde.is_constant() &&
      p.coef.B.is_constant() && p.coef.C.is_constant() && p.coef.Cbar.is_constant() &&
      p.coef.Ctilde.is_constant() && p.coef.D.is_constant() && p.coef.Q.is_constant() &&
      p.coef.Qbar.is_constant() && p.coef.Qtilde.is_constant() && p.coef.R.is_constant();
  if (!all_constant) {
    throw Error("usage",
                "steps override requires constant coefficients or a multiple of the loaded N",
                {{"steps", steps}, {"N", p.grid.N}});
  }
  Problem out = p;
  out.grid.N = steps;
  return out;
}

InitialPair load_initial_pair(const json& config, const Problem& p) {
  InitialPair ip = InitialPair::deterministic(0.0, Vector::Ones(p.dims.n));
  if (!config.is_object() || !config.contains("initial")) {
    validate_initial_pair(p, ip);
    return ip;
  }
  const json& blk = config.at("initial");
  if (!blk.is_object()) throw Error("schema", "'initial' must be a JSON object");
  static const std::set<std::string> known{"kind", "t", "value", "cov"};
  for (const auto& item : blk.items()) {
    if (!known.count(item.key())) {
      throw Error("schema", "unknown initial-pair key '" + item.key() + "'",
                  {{"key", item.key()}});
    }
  }
  if (blk.contains("t")) {
    if (!blk.at("t").is_number()) throw Error("schema", "'initial.t' must be a number");
    ip.t = blk.at("t").get<double>();
  }
  if (blk.contains("value")) {
    const json& v = blk.at("value");
    if (v.is_number()) {
      ip.value = Vector::Constant(p.dims.n, v.get<double>());
    } else if (v.is_array()) {
      if (static_cast<int>(v.size()) != p.dims.n) {
        throw Error("shape", "'initial.value' must list one entry per state component",
                    {{"expected", p.dims.n}, {"got", v.size()}});
      }
      ip.value.resize(p.dims.n);
      for (int i = 0; i < p.dims.n; ++i) {
        const json& cell = v[static_cast<std::size_t>(i)];
        if (!cell.is_number()) throw Error("schema", "'initial.value' has a non-numeric entry");
        ip.value[i] = cell.get<double>();
      }
    } else {
      throw Error("schema", "'initial.value' must be a number or an array");
    }
  }
  std::string kind = blk.contains("cov") ? "gaussian" : "deterministic";
  if (blk.contains("kind")) {
    if (!blk.at("kind").is_string()) throw Error("schema", "'initial.kind' must be a string");
    kind = blk.at("kind").get<std::string>();
  }
  if (kind == "gaussian") {
    Matrix cov = Matrix::Zero(p.dims.n, p.dims.n);
    if (blk.contains("cov")) {
      cov = finish_block(parse_matrix_entry(blk.at("cov"), p.dims.n, p.dims.n, "initial.cov"),
                         "initial.cov", true);
    }
    ip = InitialPair::gaussian(ip.t, ip.value, cov);
  } else if (kind != "deterministic") {
    throw Error("schema", "'initial.kind' must be 'deterministic' or 'gaussian'",
                {{"got", kind}});
  }
  validate_initial_pair(p, ip);
  return ip;
}

void validate_initial_pair(const Problem& p, const InitialPair& ip) {
  const int k = p.grid.index_of(ip.t);  // throws if off-grid
  if (k >= p.grid.N) {
    throw Error("precondition", "initial time must be strictly below T", {{"t", ip.t}});
  }
  if (ip.value.size() != p.dims.n) {
    throw Error("shape", "initial state dimension mismatch",
                {{"expected", p.dims.n}, {"got", ip.value.size()}});
  }
  if (!ip.value.allFinite()) throw Error("nonfinite", "initial state has non-finite entries");
  if (ip.kind == InitialPair::Kind::Gaussian) {
    if (ip.cov.rows() != p.dims.n || ip.cov.cols() != p.dims.n) {
      throw Error("shape", "covariance shape mismatch", {{"expected", p.dims.n}});
    }
    if (!ip.cov.allFinite()) throw Error("nonfinite", "covariance has non-finite entries");
    if (relative_asymmetry(ip.cov) > 1e-12) throw Error("symmetry", "covariance is not symmetric");
    if (min_eigenvalue(ip.cov) < -1e-10) {
      throw Error("precondition", "covariance is not positive semidefinite",
                  {{"min_eig", min_eigenvalue(ip.cov)}});
    }
  }
}

}  // namespace mfc
