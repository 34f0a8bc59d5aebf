#pragma once

#include "debias/vardi_solver.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace debias {

enum class Command { kValidate, kSolve, kWeights, kFit, kSimulate, kRateCheck };

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kParse = 1;
inline constexpr int kAssumption = 2;
inline constexpr int kNotConverged = 3;
// Learner failure in `fit` (separable labels, singular design).
inline constexpr int kFit = 4;
}  // namespace exit_code

struct RunConfig {
  Command command = Command::kValidate;

  std::filesystem::path data_path;    // stratified CSV
  std::filesystem::path config_path;  // bias config JSON
  std::filesystem::path test_path;    // fit: rows to predict (defaults to the input rows)
  std::filesystem::path spec_path;    // simulate / rate-check: scenario JSON
  std::optional<std::filesystem::path> out_dir;

  bool force = false;     // solve despite failed assumption checks
  bool standard = false;  // fit with uniform weights
  bool min_norm = false;  // fit: minimum-norm least squares on a singular design

  // Solver overrides, applied over the config file.
  std::optional<SolverMethod> method;
  std::optional<double> grad_tol;
  std::optional<int> max_iter;
  std::optional<double> step_size;
  std::optional<double> kappa;

  std::optional<std::string> preset;
  std::optional<std::size_t> runs;
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
  std::vector<std::size_t> n_grid;
  std::optional<std::size_t> replicates;
};

// Runs one command. Results go to `out` (and to fixed file names under
// out_dir when set); diagnostics go to `err`. Returns an exit_code value.
int run_command(const RunConfig& config, std::ostream& out, std::ostream& err);

}  // namespace debias
