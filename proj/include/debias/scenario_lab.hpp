#pragma once

#include "debias/bias_model.hpp"
#include "debias/vardi_solver.hpp"
#include "debias/weighted_erm.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace debias {

enum class BaseDistribution {
  kStandardGaussian3d,
  // Uniform draws with replacement from ScenarioSpec::base_rows.
  kCustomCsv,
};

enum class TargetKind {
  kNorm,       // y = ||x||
  kComponent,  // y = x_j, j = ScenarioSpec::target_component
  kSupplied,   // y taken from the base rows (custom base only)
};

enum class Learner { kLinearRegression, kLogisticRegression };
enum class Treatment { kStandard, kDebiased, kUnbiasedOnly };

std::string to_string(BaseDistribution b);
std::string to_string(TargetKind t);
std::string to_string(Learner l);
std::string to_string(Treatment t);
BaseDistribution base_distribution_from_string(const std::string& s);
TargetKind target_kind_from_string(const std::string& s);
Learner learner_from_string(const std::string& s);

struct ScenarioSpec {
  std::string name = "custom";
  BaseDistribution base = BaseDistribution::kStandardGaussian3d;
  ObservationList base_rows;
  std::vector<BiasDef> biasing;
  std::vector<std::size_t> sample_sizes;
  std::size_t test_size = 300;
  TargetKind target = TargetKind::kNorm;
  std::size_t target_component = 0;
  // When set, the target is replaced by the label sign(y - threshold).
  std::optional<double> label_threshold;
  std::vector<Learner> learners = {Learner::kLinearRegression};
  std::size_t n_runs = 100;
  std::uint64_t seed = 0;
  // Sample sizes were chosen here rather than read off a stated protocol.
  bool interpretive = false;
  std::string description;

  void validate() const;
  std::size_t num_strata() const noexcept { return biasing.size(); }
  std::size_t total_size() const;
  std::size_t dim() const;
  std::vector<BiasingFunction> biasing_functions() const;
  // Index of every whole-space stratum.
  std::vector<std::size_t> whole_space_strata() const;
  Task task() const noexcept {
    return label_threshold ? Task::kBinaryClassification : Task::kRegression;
  }
};

// Named presets "a".."l" (Gaussian norm/first-component bias), plus
// "censor" (right-censored targets) and "classif" (stratified classification).
ScenarioSpec preset(const std::string& name);
std::vector<std::string> preset_names();

// Seed of replicate `run_index`: a SplitMix64 hash of (seed, run_index).
std::uint64_t replicate_seed(std::uint64_t seed, std::uint64_t run_index);

// Draws one unbiased observation from the spec's base distribution.
Observation draw_base(const ScenarioSpec& spec, std::mt19937_64& rng);

// Rejection sampler for stratum k: proposals from the base distribution are
// accepted with probability omega_k(z) / M_k. Throws RejectionStall when the
// acceptance rate over a window of proposals drops below 1e-4.
ObservationList draw_stratum(const ScenarioSpec& spec, const BiasingFunction& fn,
                             std::size_t count, std::mt19937_64& rng);

struct GeneratedScenario {
  PooledData pooled;
  ObservationList test;
};

// Deterministic in (spec.seed, run_index).
GeneratedScenario generate_scenario(const ScenarioSpec& spec, std::size_t run_index);

struct CellSummary {
  Learner learner = Learner::kLinearRegression;
  Treatment treatment = Treatment::kStandard;
  std::string metric;          // "mse" or "accuracy"
  std::vector<double> values;  // one per successful run, in run order
  double mean = 0.0;
  double std = 0.0;            // sample standard deviation
};

struct ExperimentReport {
  std::string scenario;
  std::size_t n_runs = 0;
  std::vector<std::size_t> run_indices;  // successful runs, ascending
  std::vector<std::pair<std::size_t, std::string>> failures;
  std::vector<CellSummary> cells;

  const CellSummary* find(Learner l, Treatment t) const;
};

// For every run: generate, solve for the debiasing weights, fit each learner
// with uniform weights, with the debiasing weights, and (when a whole-space
// stratum exists) on the unbiased strata only; evaluate on the unbiased test
// set. Failed runs are excluded and recorded. Runs execute on `threads`
// workers (0 = hardware concurrency); results do not depend on the count.
ExperimentReport run_experiment(const ScenarioSpec& spec, const SolverConfig& solver = {},
                                unsigned threads = 0);

// CDF of the chi-square law with 3 degrees of freedom.
double chi2_3_cdf(double x);

// Omega_k = E_P[omega_k(Z)] in closed form when available: Gaussian base with
// norm/component predicates, or the exact fraction for a custom base.
std::optional<Eigen::VectorXd> closed_form_Omega(const ScenarioSpec& spec);
// Monte Carlo estimate of Omega from `samples` base draws.
Eigen::VectorXd monte_carlo_Omega(const ScenarioSpec& spec, std::size_t samples,
                                  std::uint64_t seed);
Eigen::VectorXd true_Omega(const ScenarioSpec& spec, std::size_t mc_samples = 10'000'000);

// Risk of a linear model under the base distribution, for the spec's target
// and its natural loss (squared error, or zero-one for labels). Closed form
// for the Gaussian base with norm or component targets, otherwise a
// Monte Carlo reference of `mc_samples` draws fixed at construction.
std::function<double(const LinearModel&)> true_risk_function(const ScenarioSpec& spec,
                                                             std::size_t mc_samples = 400'000);

// 16 affine predictors: intercepts {0.5, 1, 1.5, 2} x slopes on x0 {-0.5, 0, 0.25, 0.5}.
std::vector<LinearModel> default_theta_grid(std::size_t dim, Task task);

// Least-squares slope of log(y) against log(x); nullopt when any y is not
// strictly positive and finite.
std::optional<double> loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

// Sample sizes of `spec` rescaled to total n, keeping the proportions.
std::vector<std::size_t> scaled_sizes(const ScenarioSpec& spec, std::size_t n);

struct RateCheckRow {
  std::size_t n = 0;
  double mean_omega_error = 0.0;   // mean over replicates of ||Omega_hat - Omega||
  double mean_sup_deviation = 0.0;
  std::size_t replicates = 0;
  std::size_t failed = 0;
};

struct RateCheckResult {
  std::vector<RateCheckRow> rows;
  std::optional<double> omega_slope;
  std::optional<double> deviation_slope;
  // Omega_hat is exact at every n (e.g. a single unbiased sample).
  bool omega_degenerate = false;
};

RateCheckResult rate_check(const ScenarioSpec& spec_template, const std::vector<std::size_t>& n_grid,
                           std::size_t replicates, const SolverConfig& solver = {},
                           unsigned threads = 0);

}  // namespace debias
