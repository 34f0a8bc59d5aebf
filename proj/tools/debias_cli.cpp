#include "debias/cli.hpp"
#include "debias/errors.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

using debias::Command;
using debias::RunConfig;

void add_input_options(CLI::App* cmd, RunConfig& rc) {
  cmd->add_option("--data", rc.data_path, "Stratified CSV (x0..x{d-1}, optional y, sample_id)")
      ->required();
  cmd->add_option("--config", rc.config_path, "Bias config JSON")->required();
  cmd->add_option("--kappa", rc.kappa, "Overlap threshold for the kappa graph");
}

void add_output_option(CLI::App* cmd, RunConfig& rc) {
  cmd->add_option("--out", rc.out_dir, "Output directory");
}

void add_solver_options(CLI::App* cmd, RunConfig& rc, std::string& method) {
  cmd->add_option("--method", method, "Solver: gradient, quasi-newton or auto");
  cmd->add_option("--grad-tol", rc.grad_tol, "Stop when max_k |Gamma_k - 1| <= tol");
  cmd->add_option("--max-iter", rc.max_iter, "Iteration budget");
  cmd->add_option("--step-size", rc.step_size, "Fixed gradient step");
}

void add_scenario_options(CLI::App* cmd, RunConfig& rc) {
  cmd->add_option("--preset", rc.preset, "Scenario preset name");
  cmd->add_option("--spec", rc.spec_path, "Scenario JSON");
  cmd->add_option("--seed", rc.seed, "Base seed");
  cmd->add_option("--threads", rc.threads, "Worker threads (0 = all cores)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Debiased empirical risk minimization from stratified biased samples"};
  app.require_subcommand(1);

  RunConfig rc;
  std::string method;

  auto* validate = app.add_subcommand("validate", "Check support cover and strata connectivity");
  add_input_options(validate, rc);
  add_output_option(validate, rc);

  auto* solve = app.add_subcommand("solve", "Solve for W and write weights and solver result");
  auto* weights = app.add_subcommand("weights", "Write the debiasing weights as CSV");
  for (auto* cmd : {solve, weights}) {
    add_input_options(cmd, rc);
    add_output_option(cmd, rc);
    add_solver_options(cmd, rc, method);
    cmd->add_flag("--force", rc.force, "Solve even when assumption checks fail");
  }

  auto* fit = app.add_subcommand("fit", "Fit a linear learner by weighted ERM");
  add_input_options(fit, rc);
  add_output_option(fit, rc);
  add_solver_options(fit, rc, method);
  fit->add_flag("--force", rc.force, "Solve even when assumption checks fail");
  fit->add_flag("--standard", rc.standard, "Use uniform weights (standard ERM)");
  fit->add_flag("--min-norm", rc.min_norm, "Minimum-norm least squares on a singular design");
  fit->add_option("--test", rc.test_path, "CSV of rows to predict (default: the input rows)");

  auto* simulate = app.add_subcommand("simulate", "Run a synthetic experiment");
  add_scenario_options(simulate, rc);
  add_output_option(simulate, rc);
  add_solver_options(simulate, rc, method);
  simulate->add_option("--runs", rc.runs, "Number of runs");

  auto* rate = app.add_subcommand("rate-check", "Monte Carlo convergence-rate check");
  add_scenario_options(rate, rc);
  add_output_option(rate, rc);
  add_solver_options(rate, rc, method);
  rate->add_option("--n-grid", rc.n_grid, "Total sample sizes")->delimiter(',');
  rate->add_option("--replicates", rc.replicates, "Replicates per sample size");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : debias::exit_code::kParse;
  }

  if (validate->parsed()) rc.command = Command::kValidate;
  if (solve->parsed()) rc.command = Command::kSolve;
  if (weights->parsed()) rc.command = Command::kWeights;
  if (fit->parsed()) rc.command = Command::kFit;
  if (simulate->parsed()) rc.command = Command::kSimulate;
  if (rate->parsed()) rc.command = Command::kRateCheck;

  if (!method.empty()) {
    try {
      rc.method = debias::solver_method_from_string(method);
    } catch (const debias::Error& e) {
      std::cerr << "error: " << e.what() << '\n';
      return debias::exit_code::kParse;
    }
  }
  return debias::run_command(rc, std::cout, std::cerr);
}
