// Command-line front end: parse the flags into a RunSpec, execute one
// subcommand, and emit CSV/JSON artifacts.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mfc {

struct RunSpec {
  std::string subcommand;  // solve | gains | simulate | cost | verify | converge | compare
  std::string problem_path;
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  int paths = 1000;
  int steps = 0;             // > 0 overrides the config grid resolution
  double t = -1.0;           // < 0 means "pick a default inside the horizon"
  std::vector<double> eps;   // perturbation window widths, decreasing
  std::vector<int> meshes;   // partition cell counts for convergence studies
  std::string kind = "pre";  // pre | naive | eq | game
};

// Executes one run. Returns the process exit code: 0 when the subcommand
// succeeded and every requested check passed, 1 when a check failed, 2 when
// a structured error was emitted on stderr.
int run(const RunSpec& spec);

// argv front end around run(); never throws.
int run_cli(int argc, char** argv);

}  // namespace mfc
