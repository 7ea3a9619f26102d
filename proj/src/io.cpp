// Artifact writers. Every number is printed through format_g17 so identical
// inputs produce byte-identical files regardless of thread count or locale.

#include "mfcontrol/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace mfc {

namespace {

std::ofstream open_out(const std::string& file, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(file, mode);
  if (!out) throw Error("io", "cannot open output file", {{"file", file}});
  return out;
}

void finish(std::ofstream& out, const std::string& file) {
  out.flush();
  if (!out) throw Error("io", "write failed", {{"file", file}});
}

const Matrix& field_of(const PathEnsemble& ens, EnsembleField field, std::size_t path) {
  switch (field) {
    case EnsembleField::States:
      return ens.states[path];
    case EnsembleField::CondMeans:
      return ens.cond_means[path];
    default:
      return ens.controls[path];
  }
}

const char* field_name(EnsembleField field) {
  switch (field) {
    case EnsembleField::States:
      return "states";
    case EnsembleField::CondMeans:
      return "cond_means";
    default:
      return "controls";
  }
}

}  // namespace

void write_matrix_path_csv(const std::string& file, const MatrixPath& mp) {
  if (mp.values.empty()) throw Error("io", "empty matrix path", {{"file", file}});
  std::ofstream out = open_out(file);
  const Eigen::Index rows = mp.values.front().rows();
  const Eigen::Index cols = mp.values.front().cols();
  out << "s";
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) out << ", M_" << i << j;
  }
  out << "\n";
  for (std::size_t k = 0; k < mp.values.size(); ++k) {
    out << format_g17(mp.grid.node(static_cast<int>(k)));
    const Matrix& m = mp.values[k];
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) out << ", " << format_g17(m(i, j));
    }
    out << "\n";
  }
  finish(out, file);
}

void write_gain_schedule_csv(const std::string& stem, const GainSchedule& g) {
  write_matrix_path_csv(stem + "_psi.csv", g.psi);
  write_matrix_path_csv(stem + "_psi_bar.csv", g.psiBar);
  write_matrix_path_csv(stem + "_psi_tilde.csv", g.psiTilde);
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw Error("precondition", "quantile of empty sample");
  q = std::clamp(q, 0.0, 1.0);
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double w = pos - static_cast<double>(lo);
  return (1.0 - w) * values[lo] + w * values[hi];
}

void write_ensemble_summary_csv(const std::string& file, const PathEnsemble& ens,
                                EnsembleField field) {
  if (ens.states.empty()) throw Error("io", "empty ensemble", {{"file", file}});
  const std::size_t paths = ens.states.size();
  const Eigen::Index comps = field_of(ens, field, 0).rows();
  std::ofstream out = open_out(file);
  out << "s";
  for (Eigen::Index i = 0; i < comps; ++i) {
    out << ", mean_" << i << ", std_" << i << ", q05_" << i << ", q50_" << i << ", q95_" << i;
  }
  out << "\n";
  std::vector<double> col(paths, 0.0);
  for (int k = 0; k < ens.grid.size(); ++k) {
    out << format_g17(ens.grid.node(k));
    for (Eigen::Index i = 0; i < comps; ++i) {
      for (std::size_t p = 0; p < paths; ++p) col[p] = field_of(ens, field, p)(i, k);
      const double mean = pairwise_mean(col);
      double sq = 0.0;
      for (double v : col) sq += (v - mean) * (v - mean);
      const double sd = paths > 1 ? std::sqrt(sq / static_cast<double>(paths - 1)) : 0.0;
      out << ", " << format_g17(mean) << ", " << format_g17(sd) << ", "
          << format_g17(quantile(col, 0.05)) << ", " << format_g17(quantile(col, 0.50)) << ", "
          << format_g17(quantile(col, 0.95));
    }
    out << "\n";
  }
  finish(out, file);
}

void write_ensemble_binary(const std::string& stem, const PathEnsemble& ens, EnsembleField field,
                           std::uint64_t seed) {
  if (ens.states.empty()) throw Error("io", "empty ensemble", {{"stem", stem}});
  const std::string bin = stem + ".bin";
  std::ofstream out = open_out(bin, std::ios::out | std::ios::binary);
  const std::size_t paths = ens.states.size();
  const Eigen::Index comps = field_of(ens, field, 0).rows();
  const int nodes = ens.grid.size();
  std::vector<double> row(static_cast<std::size_t>(comps), 0.0);
  for (std::size_t p = 0; p < paths; ++p) {
    const Matrix& m = field_of(ens, field, p);
    for (int k = 0; k < nodes; ++k) {
      for (Eigen::Index i = 0; i < comps; ++i) row[static_cast<std::size_t>(i)] = m(i, k);
      out.write(reinterpret_cast<const char*>(row.data()),
                static_cast<std::streamsize>(sizeof(double) * row.size()));
    }
  }
  finish(out, bin);
  write_json_file(stem + ".json",
                  json{{"file", bin},
                       {"field", field_name(field)},
                       {"layout", "path-major, node-major, component-minor, little-endian f64"},
                       {"paths", paths},
                       {"nodes", nodes},
                       {"components", comps},
                       {"seed", seed},
                       {"start_node", ens.k0}});
}

void write_convergence_csv(const std::string& file, const ConvergenceReport& rep) {
  std::ofstream out = open_out(file);
  out << "mesh, error\n";
  for (std::size_t i = 0; i < rep.meshes.size(); ++i) {
    out << format_g17(rep.meshes[i]) << ", " << format_g17(rep.errors[i]) << "\n";
  }
  finish(out, file);
}

void write_convergence_json(const std::string& file, const ConvergenceReport& rep) {
  write_json_file(file, json{{"meshes", rep.meshes},
                             {"errors", rep.errors},
                             {"fitted_rate", rep.fitted_rate},
                             {"details", rep.details}});
}

void write_check_reports_json(const std::string& file, const std::vector<CheckReport>& reps) {
  json arr = json::array();
  bool all = true;
  for (const CheckReport& r : reps) {
    arr.push_back(check_report_to_json(r));
    all = all && r.passed;
  }
  write_json_file(file, json{{"checks", arr}, {"all_passed", all}});
}

void write_json_file(const std::string& file, const json& j) {
  std::ofstream out = open_out(file);
  out << j.dump(2) << "\n";
  finish(out, file);
}

}  // namespace mfc
