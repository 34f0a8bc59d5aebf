#pragma once

#include "debias/bias_model.hpp"

#include <Eigen/Dense>

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace debias {

enum class Task { kRegression, kBinaryClassification };

std::string to_string(Task t);

// Affine predictor x -> beta^T x + b. coefficients = (beta, b): the intercept
// is the last entry.
struct LinearModel {
  Eigen::VectorXd coefficients;
  Task task = Task::kRegression;

  std::size_t dim() const noexcept {
    return coefficients.size() ? static_cast<std::size_t>(coefficients.size() - 1) : 0;
  }
  double intercept() const { return coefficients(coefficients.size() - 1); }
  // Raw score beta^T x + b (regression prediction, classification margin).
  double score(const Observation& z) const;
  // Regression: the score. Classification: sign of the score in {-1, +1}.
  double predict(const Observation& z) const;
};

enum class LossKind { kSquaredError, kZeroOne, kLogisticSurrogate, kCustom };

struct LossSpec {
  using Evaluator = std::function<double(const Observation&, const LinearModel&)>;

  LossKind kind = LossKind::kSquaredError;
  Evaluator evaluator;

  static LossSpec squared_error();
  static LossSpec zero_one();
  static LossSpec logistic();
  // Custom losses skip the task check; the evaluator must stay nonnegative.
  static LossSpec custom(Evaluator evaluator);

  double operator()(const Observation& z, const LinearModel& model) const;
};

// sum_i pi_i psi(Z_i, theta). Throws TaskMismatch when the loss does not fit
// the model's task or the observation lacks the matching target.
double weighted_risk(const LinearModel& model, const DebiasedDistribution& dist,
                     const LossSpec& loss);
double weighted_risk(const LinearModel& model, std::span<const Observation> observations,
                     const Eigen::VectorXd& weights, const LossSpec& loss);

enum class RankPolicy {
  kThrow,          // RankDeficient when the weighted Gram matrix is singular
  kMinimumNorm,    // least-squares solution of minimum Euclidean norm
};

// argmin_beta sum_i w_i (y_i - x_i^T beta - b)^2 via the normal equations.
// Weights need not be normalized.
LinearModel fit_weighted_least_squares(const DebiasedDistribution& dist,
                                       RankPolicy policy = RankPolicy::kThrow);
LinearModel fit_weighted_least_squares(std::span<const Observation> observations,
                                       const Eigen::VectorXd& weights,
                                       RankPolicy policy = RankPolicy::kThrow);

struct LogisticOptions {
  int max_iter = 100;
  // Sup-norm of the gradient of the weighted mean loss at the returned model.
  double tol = 1e-10;
  // Coefficient norm beyond which the fit is declared divergent.
  double norm_cap = 1e4;
};

// argmin sum_i w_i log(1 + exp(-y_i (x_i^T beta + b))) by damped Newton.
// Throws Separable when no finite minimizer exists.
LinearModel fit_weighted_logistic(const DebiasedDistribution& dist,
                                  const LogisticOptions& options = {});
LinearModel fit_weighted_logistic(std::span<const Observation> observations,
                                  const Eigen::VectorXd& weights,
                                  const LogisticOptions& options = {});

// Gradient of the weighted logistic loss, normalized by the total weight.
Eigen::VectorXd logistic_gradient(const LinearModel& model,
                                  std::span<const Observation> observations,
                                  const Eigen::VectorXd& weights);

// max over a finite grid of |weighted_risk(theta) - true_risk(theta)|.
double sup_deviation(const DebiasedDistribution& dist,
                     const std::function<double(const LinearModel&)>& true_risk,
                     const std::vector<LinearModel>& theta_grid, const LossSpec& loss);

// Mean loss over an unweighted test set (test MSE, zero-one error, ...).
double mean_loss(const LinearModel& model, std::span<const Observation> observations,
                 const LossSpec& loss);

}  // namespace debias
