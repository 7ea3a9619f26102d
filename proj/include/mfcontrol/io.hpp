// CSV and JSON artifact writers: matrix paths, gain schedules, ensemble
// summaries, convergence tables, and check reports.

#pragma once

#include <string>
#include <vector>

#include "mfcontrol/core.hpp"
#include "mfcontrol/game.hpp"
#include "mfcontrol/riccati.hpp"
#include "mfcontrol/simulate.hpp"
#include "mfcontrol/strategies.hpp"
#include "mfcontrol/verify.hpp"

namespace mfc {

// Which per-path field of an ensemble a summary aggregates.
enum class EnsembleField { States, CondMeans, Controls };

// Time-series CSV with header "s, M_00, M_01, ..." (row-major entries), one
// row per grid node, 17 significant digits.
void write_matrix_path_csv(const std::string& file, const MatrixPath& mp);

// One file per gain component under the given stem: <stem>_psi.csv,
// <stem>_psi_bar.csv, <stem>_psi_tilde.csv.
void write_gain_schedule_csv(const std::string& stem, const GainSchedule& g);

// Per-node cross-path summary: mean, std, and q05/q50/q95 quantiles for each
// component of the chosen field.
void write_ensemble_summary_csv(const std::string& file, const PathEnsemble& ens,
                                EnsembleField field);

// Flat binary dump (doubles, path-major then node-major then component) of
// one ensemble field, plus a JSON sidecar recording shape and seed.
void write_ensemble_binary(const std::string& stem, const PathEnsemble& ens, EnsembleField field,
                           std::uint64_t seed);

// Convergence table as CSV (mesh, error) and a JSON summary with the fitted
// rate and study details.
void write_convergence_csv(const std::string& file, const ConvergenceReport& rep);
void write_convergence_json(const std::string& file, const ConvergenceReport& rep);

// Check suite report: {"checks": [...], "all_passed": bool}.
void write_check_reports_json(const std::string& file, const std::vector<CheckReport>& reps);

// Pretty-printed JSON with a trailing newline.
void write_json_file(const std::string& file, const json& j);

// Empirical quantile with linear interpolation; values need not be sorted.
double quantile(std::vector<double> values, double q);

}  // namespace mfc
