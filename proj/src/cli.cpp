#include "debias/cli.hpp"

#include "debias/assumptions.hpp"
#include "debias/errors.hpp"
#include "debias/io.hpp"
#include "debias/scenario_lab.hpp"
#include "debias/weighted_erm.hpp"

#include <fstream>
#include <functional>
#include <ostream>

namespace debias {

namespace {

using nlohmann::json;

struct LoadedInput {
  BiasConfig config;
  StratifiedDataset data;
  PooledData pooled;
};

void require_path(const std::filesystem::path& p, const char* what) {
  if (p.empty()) throw InvalidArgument(std::string("missing ") + what + " path");
  if (!std::filesystem::exists(p))
    throw InvalidArgument(std::string(what) + " '" + p.string() + "' does not exist");
}

BiasConfig load_config(const RunConfig& rc) {
  require_path(rc.config_path, "config");
  BiasConfig cfg = load_bias_config(rc.config_path);
  if (rc.method) cfg.solver.method = *rc.method;
  if (rc.grad_tol) cfg.solver.grad_tol = *rc.grad_tol;
  if (rc.max_iter) cfg.solver.max_iter = *rc.max_iter;
  if (rc.step_size) cfg.solver.step_size = *rc.step_size;
  if (rc.kappa) cfg.kappa = *rc.kappa;
  cfg.solver.validate();
  return cfg;
}

LoadedInput load_input(const RunConfig& rc) {
  BiasConfig cfg = load_config(rc);
  require_path(rc.data_path, "data");
  StratifiedDataset data =
      read_stratified_csv(rc.data_path, cfg.biasing.size(), cfg.target_column());
  PooledData pooled = evaluate_bias_matrix(data.samples, cfg.functions());
  return {std::move(cfg), std::move(data), std::move(pooled)};
}

void write_output(const RunConfig& rc, const std::string& name,
                  const std::function<void(std::ostream&)>& emit) {
  if (!rc.out_dir) return;
  std::filesystem::create_directories(*rc.out_dir);
  const auto path = *rc.out_dir / name;
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw InvalidArgument("cannot write '" + path.string() + "'");
  emit(f);
  if (!f) throw InvalidArgument("failed writing '" + path.string() + "'");
}

void write_json(const RunConfig& rc, const std::string& name, const json& doc) {
  write_output(rc, name, [&](std::ostream& os) { os << doc.dump(2) << '\n'; });
}

bool assumptions_hold(const AssumptionReport& r) {
  return r.support_cover_ok && r.strongly_connected;
}

AssumptionReport check_and_report(const RunConfig& rc, const LoadedInput& in) {
  AssumptionReport report = assess_assumptions(in.pooled, std::nullopt, in.config.kappa);
  write_json(rc, "report.json", to_json(report));
  return report;
}

int refuse(const AssumptionReport& report, std::ostream& err) {
  err << "assumption checks failed (use --force to solve anyway):\n"
      << to_json(report).dump(2) << '\n';
  return exit_code::kAssumption;
}

// Solves for the debiasing weights; on non-convergence dumps the best
// iterate and returns the exit code through `code`.
std::optional<SolverResult> solve_or_dump(const RunConfig& rc, const LoadedInput& in,
                                          std::ostream& out, std::ostream& err, int& code) {
  try {
    return solve_W(in.pooled, in.config.solver);
  } catch (const NotConverged& e) {
    err << "error: solver did not converge: " << e.what() << '\n';
    const json best = to_json(e.best());
    write_json(rc, "solver_result.json", best);
    out << best.dump(2) << '\n';
    code = exit_code::kNotConverged;
    return std::nullopt;
  }
}

int cmd_validate(const RunConfig& rc, std::ostream& out) {
  const LoadedInput in = load_input(rc);
  const AssumptionReport report = check_and_report(rc, in);
  out << to_json(report).dump(2) << '\n';
  return assumptions_hold(report) ? exit_code::kOk : exit_code::kAssumption;
}

int cmd_solve(const RunConfig& rc, std::ostream& out, std::ostream& err, bool weights_only) {
  const LoadedInput in = load_input(rc);
  const AssumptionReport report = check_and_report(rc, in);
  if (!assumptions_hold(report) && !rc.force) return refuse(report, err);

  int code = exit_code::kOk;
  const auto result = solve_or_dump(rc, in, out, err, code);
  if (!result) return code;
  if (result->non_unique) err << "warning: strata digraph is not strongly connected; weights are not unique\n";

  const Eigen::VectorXd weights = in.data.to_input_order(result->weights);
  write_output(rc, "weights.csv", [&](std::ostream& os) { write_column_csv(os, "weight", weights); });
  if (weights_only) {
    if (!rc.out_dir) write_column_csv(out, "weight", weights);
    return exit_code::kOk;
  }
  const json doc = to_json(*result);
  write_json(rc, "solver_result.json", doc);
  out << doc.dump(2) << '\n';
  return exit_code::kOk;
}

ObservationList input_rows(const LoadedInput& in) {
  const ObservationList& pooled = in.pooled.observations();
  ObservationList rows;
  rows.reserve(in.data.rows());
  for (std::size_t r : in.data.pooled_row) rows.push_back(pooled[r]);
  return rows;
}

int cmd_fit(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  const LoadedInput in = load_input(rc);
  const auto n = static_cast<Eigen::Index>(in.pooled.size());

  Eigen::VectorXd weights = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  if (!rc.standard) {
    const AssumptionReport report = check_and_report(rc, in);
    if (!assumptions_hold(report) && !rc.force) return refuse(report, err);
    int code = exit_code::kOk;
    const auto result = solve_or_dump(rc, in, out, err, code);
    if (!result) return code;
    weights = result->weights;
  }

  const auto& obs = in.pooled.observations();
  const LinearModel model =
      in.config.task == Task::kRegression
          ? fit_weighted_least_squares(obs, weights,
                                       rc.min_norm ? RankPolicy::kMinimumNorm : RankPolicy::kThrow)
          : fit_weighted_logistic(obs, weights);

  ObservationList targets;
  if (!rc.test_path.empty()) {
    require_path(rc.test_path, "test");
    targets = read_observations_csv(rc.test_path, in.config.target_column());
    if (!check_support_cover(targets, in.config.functions()))
      err << "warning: some prediction rows lie outside the support of every biasing function\n";
  } else {
    targets = input_rows(in);
  }
  Eigen::VectorXd predictions(static_cast<Eigen::Index>(targets.size()));
  for (std::size_t i = 0; i < targets.size(); ++i)
    predictions(static_cast<Eigen::Index>(i)) = model.predict(targets[i]);

  json doc = to_json(model);
  doc["weighting"] = rc.standard ? "standard" : "debiased";
  write_json(rc, "model.json", doc);
  write_output(rc, "predictions.csv",
               [&](std::ostream& os) { write_column_csv(os, "y_pred", predictions); });
  out << doc.dump(2) << '\n';
  return exit_code::kOk;
}

ScenarioSpec scenario_from(const RunConfig& rc, const std::string& fallback_preset) {
  if (!rc.spec_path.empty() && rc.preset)
    throw InvalidArgument("give either a preset or a scenario file, not both");
  ScenarioSpec spec;
  if (!rc.spec_path.empty()) {
    require_path(rc.spec_path, "scenario");
    spec = load_scenario_spec(rc.spec_path);
  } else {
    spec = preset(rc.preset.value_or(fallback_preset));
  }
  if (rc.runs) spec.n_runs = *rc.runs;
  if (rc.seed) spec.seed = *rc.seed;
  spec.validate();
  return spec;
}

SolverConfig solver_from(const RunConfig& rc) {
  SolverConfig s;
  if (rc.method) s.method = *rc.method;
  if (rc.grad_tol) s.grad_tol = *rc.grad_tol;
  if (rc.max_iter) s.max_iter = *rc.max_iter;
  if (rc.step_size) s.step_size = *rc.step_size;
  s.validate();
  return s;
}

int cmd_simulate(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  if (rc.spec_path.empty() && !rc.preset)
    throw InvalidArgument("simulate needs --preset or --spec");
  const ScenarioSpec spec = scenario_from(rc, "");
  const ExperimentReport report = run_experiment(spec, solver_from(rc), rc.threads);
  for (const auto& [run, msg] : report.failures)
    err << "warning: run " << run << " excluded: " << msg << '\n';
  write_output(rc, "experiment.csv", [&](std::ostream& os) { write_experiment_csv(os, report); });
  write_output(rc, "experiment_runs.csv",
               [&](std::ostream& os) { write_experiment_runs_csv(os, report); });
  write_experiment_csv(out, report);
  return exit_code::kOk;
}

int cmd_rate_check(const RunConfig& rc, std::ostream& out) {
  const ScenarioSpec spec = scenario_from(rc, "b");
  const std::vector<std::size_t> grid =
      rc.n_grid.empty() ? std::vector<std::size_t>{500, 1000, 2000, 4000} : rc.n_grid;
  const RateCheckResult result =
      rate_check(spec, grid, rc.replicates.value_or(200), solver_from(rc), rc.threads);

  auto slope = [](const std::optional<double>& s) { return s ? json(*s) : json(nullptr); };
  json rows = json::array();
  for (const auto& r : result.rows)
    rows.push_back({{"n", r.n},
                    {"replicates", r.replicates},
                    {"failed", r.failed},
                    {"mean_omega_error", r.mean_omega_error},
                    {"mean_sup_deviation", r.mean_sup_deviation}});
  const json doc = {{"scenario", spec.name},
                    {"rows", rows},
                    {"omega_slope", slope(result.omega_slope)},
                    {"deviation_slope", slope(result.deviation_slope)},
                    {"omega_degenerate", result.omega_degenerate}};
  write_output(rc, "rate_check.csv", [&](std::ostream& os) { write_rate_check_csv(os, result); });
  write_json(rc, "rate_check.json", doc);
  out << doc.dump(2) << '\n';
  return exit_code::kOk;
}

}  // namespace

int run_command(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  try {
    switch (rc.command) {
      case Command::kValidate: return cmd_validate(rc, out);
      case Command::kSolve: return cmd_solve(rc, out, err, false);
      case Command::kWeights: return cmd_solve(rc, out, err, true);
      case Command::kFit: return cmd_fit(rc, out, err);
      case Command::kSimulate: return cmd_simulate(rc, out, err);
      case Command::kRateCheck: return cmd_rate_check(rc, out);
    }
    throw InvalidArgument("unknown command");
  } catch (const NotConverged& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::kNotConverged;
  } catch (const LogOfZero& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::kAssumption;
  } catch (const Separable& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::kFit;
  } catch (const RankDeficient& e) {
    err << "error: " << e.what() << " (try --min-norm)\n";
    return exit_code::kFit;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::kParse;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::kParse;
  }
}

}  // namespace debias
