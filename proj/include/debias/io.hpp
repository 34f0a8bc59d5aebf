#pragma once

#include "debias/assumptions.hpp"
#include "debias/bias_model.hpp"
#include "debias/scenario_lab.hpp"
#include "debias/vardi_solver.hpp"
#include "debias/weighted_erm.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace debias {

// A stratified dataset as read from CSV. Samples are grouped by sample_id;
// `pooled_row[i]` is the sample-major pooled row of input row i.
struct StratifiedDataset {
  std::vector<ObservationList> samples;
  std::vector<std::size_t> pooled_row;
  std::size_t dim = 0;

  std::size_t rows() const noexcept { return pooled_row.size(); }
  // Reorders a pooled-order vector into input row order.
  Eigen::VectorXd to_input_order(const Eigen::VectorXd& pooled_values) const;
};

// How the `y` column is read: as a real target, or as a label in {-1, +1}.
enum class TargetColumn { kReal, kBinaryLabel };

// Header: x0..x{d-1} in any order, optional y, required sample_id in
// [0, num_strata). Throws ParseError (with line and column) on malformed
// cells and SchemaError on a bad header or missing sample.
StratifiedDataset read_stratified_csv(std::istream& in, std::size_t num_strata,
                                      TargetColumn target, const std::string& source = "input");
StratifiedDataset read_stratified_csv(const std::filesystem::path& path, std::size_t num_strata,
                                      TargetColumn target);

// Same schema with sample_id optional and ignored; rows kept in file order.
ObservationList read_observations_csv(std::istream& in, TargetColumn target,
                                      const std::string& source = "input");
ObservationList read_observations_csv(const std::filesystem::path& path, TargetColumn target);

// Bias config document (JSON):
//   {"task": "regression" | "classification",
//    "kappa": 0.001,
//    "biasing": [{"kind": "norm_ball", "r": 0.8}, {"kind": "whole_space"}, ...],
//    "solver": {"method": "auto", "grad_tol": 1e-9, "max_iter": 10000, "step_size": 1.0}}
struct BiasConfig {
  std::vector<BiasDef> biasing;
  Task task = Task::kRegression;
  double kappa = kDefaultKappa;
  SolverConfig solver;

  std::vector<BiasingFunction> functions() const;
  TargetColumn target_column() const noexcept {
    return task == Task::kRegression ? TargetColumn::kReal : TargetColumn::kBinaryLabel;
  }
};

BiasConfig parse_bias_config(const std::string& text, const std::string& source = "config");
BiasConfig load_bias_config(const std::filesystem::path& path);

BiasDef bias_def_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BiasDef& def);
SolverConfig solver_config_from_json(const nlohmann::json& j, SolverConfig base = {});

// Scenario document (JSON). Keys mirror ScenarioSpec: name, base
// ("standard-gaussian-3d" | "custom-csv"), base_csv (relative to the
// document), biasing, sample_sizes, test_size, target, target_component,
// label_threshold, learners, n_runs, seed.
ScenarioSpec parse_scenario_spec(const std::string& text,
                                 const std::filesystem::path& base_dir = {},
                                 const std::string& source = "scenario");
ScenarioSpec load_scenario_spec(const std::filesystem::path& path);

nlohmann::json to_json(const AssumptionReport& report);
// Weights are in pooled row order.
nlohmann::json to_json(const SolverResult& result);
nlohmann::json to_json(const LinearModel& model);

// Shortest text that reads back to the same double.
std::string format_double(double x);

void write_column_csv(std::ostream& out, const std::string& header, const Eigen::VectorXd& values);
void write_experiment_csv(std::ostream& out, const ExperimentReport& report);
void write_experiment_runs_csv(std::ostream& out, const ExperimentReport& report);
void write_rate_check_csv(std::ostream& out, const RateCheckResult& result);

}  // namespace debias
