#include "debias/weighted_erm.hpp"

#include "debias/errors.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>

namespace debias {

namespace {

double softplus(double x) {
  // log(1 + e^x) without overflow.
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Eigen::MatrixXd design_matrix(std::span<const Observation> observations) {
  if (observations.empty()) throw InvalidArgument("empty training set");
  const std::size_t d = observations.front().dim();
  Eigen::MatrixXd X(static_cast<Eigen::Index>(observations.size()),
                    static_cast<Eigen::Index>(d + 1));
  for (std::size_t i = 0; i < observations.size(); ++i) {
    const auto& x = observations[i].features;
    if (x.size() != d) throw DimensionMismatch("inconsistent feature dimension");
    for (std::size_t j = 0; j < d; ++j)
      X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = x[j];
    X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = 1.0;
  }
  return X;
}

void check_weights(std::span<const Observation> observations, const Eigen::VectorXd& weights) {
  if (static_cast<std::size_t>(weights.size()) != observations.size())
    throw DimensionMismatch("weight vector length differs from observation count");
  if (!weights.allFinite() || (weights.array() < 0.0).any())
    throw InvalidArgument("weights must be finite and nonnegative");
  if (!(weights.sum() > 0.0)) throw InvalidArgument("weights sum to zero");
}

void check_loss_task(const LossSpec& loss, const LinearModel& model, const Observation& z) {
  switch (loss.kind) {
    case LossKind::kSquaredError:
      if (model.task != Task::kRegression)
        throw TaskMismatch("squared-error loss needs a regression model");
      if (!z.target) throw TaskMismatch("squared-error loss needs real targets");
      break;
    case LossKind::kZeroOne:
    case LossKind::kLogisticSurrogate:
      if (model.task != Task::kBinaryClassification)
        throw TaskMismatch("classification loss needs a classification model");
      if (!z.label) throw TaskMismatch("classification loss needs binary labels");
      break;
    case LossKind::kCustom:
      break;
  }
}

}  // namespace

std::string to_string(Task t) {
  return t == Task::kRegression ? "regression" : "binary-classification";
}

double LinearModel::score(const Observation& z) const {
  if (z.dim() + 1 != static_cast<std::size_t>(coefficients.size()))
    throw DimensionMismatch("model of dimension " + std::to_string(dim()) +
                            " applied to observation of dimension " + std::to_string(z.dim()));
  double s = intercept();
  for (std::size_t j = 0; j < z.dim(); ++j) s += coefficients(static_cast<Eigen::Index>(j)) * z.features[j];
  return s;
}

double LinearModel::predict(const Observation& z) const {
  const double s = score(z);
  if (task == Task::kRegression) return s;
  return s >= 0.0 ? 1.0 : -1.0;
}

LossSpec LossSpec::squared_error() {
  return {LossKind::kSquaredError, [](const Observation& z, const LinearModel& m) {
            const double r = *z.target - m.score(z);
            return r * r;
          }};
}

LossSpec LossSpec::zero_one() {
  return {LossKind::kZeroOne, [](const Observation& z, const LinearModel& m) {
            return m.predict(z) != static_cast<double>(*z.label) ? 1.0 : 0.0;
          }};
}

LossSpec LossSpec::logistic() {
  return {LossKind::kLogisticSurrogate, [](const Observation& z, const LinearModel& m) {
            return softplus(-static_cast<double>(*z.label) * m.score(z));
          }};
}

LossSpec LossSpec::custom(Evaluator evaluator) {
  return {LossKind::kCustom, std::move(evaluator)};
}

double LossSpec::operator()(const Observation& z, const LinearModel& model) const {
  check_loss_task(*this, model, z);
  const double v = evaluator(z, model);
  if (!(v >= 0.0)) throw InvalidArgument("loss evaluated to a negative or NaN value");
  return v;
}

double weighted_risk(const LinearModel& model, std::span<const Observation> observations,
                     const Eigen::VectorXd& weights, const LossSpec& loss) {
  if (static_cast<std::size_t>(weights.size()) != observations.size())
    throw DimensionMismatch("weight vector length differs from observation count");
  double acc = 0.0;
  for (std::size_t i = 0; i < observations.size(); ++i)
    acc += weights(static_cast<Eigen::Index>(i)) * loss(observations[i], model);
  return acc;
}

double weighted_risk(const LinearModel& model, const DebiasedDistribution& dist,
                     const LossSpec& loss) {
  return weighted_risk(model, dist.observations(), dist.weights(), loss);
}

double mean_loss(const LinearModel& model, std::span<const Observation> observations,
                 const LossSpec& loss) {
  if (observations.empty()) throw InvalidArgument("empty evaluation set");
  double acc = 0.0;
  for (const auto& z : observations) acc += loss(z, model);
  return acc / static_cast<double>(observations.size());
}

LinearModel fit_weighted_least_squares(std::span<const Observation> observations,
                                       const Eigen::VectorXd& weights, RankPolicy policy) {
  check_weights(observations, weights);
  const Eigen::MatrixXd X = design_matrix(observations);
  Eigen::VectorXd y(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const auto& z = observations[static_cast<std::size_t>(i)];
    if (!z.target) throw TaskMismatch("least squares needs real targets");
    y(i) = *z.target;
  }

  const Eigen::MatrixXd gram = X.transpose() * weights.asDiagonal() * X;
  const Eigen::VectorXd rhs = X.transpose() * weights.asDiagonal() * y;

  const Eigen::VectorXd eig =
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(gram, Eigen::EigenvaluesOnly).eigenvalues();
  const bool singular = !(eig.minCoeff() > 1e-12 * std::max(eig.maxCoeff(), 0.0));

  LinearModel model;
  model.task = Task::kRegression;
  if (!singular) {
    model.coefficients = gram.llt().solve(rhs);
    return model;
  }
  if (policy == RankPolicy::kThrow)
    throw RankDeficient("weighted Gram matrix is singular (eigenvalue ratio " +
                        std::to_string(eig.minCoeff() / std::max(eig.maxCoeff(), 1e-300)) + ")");

  const Eigen::VectorXd sw = weights.cwiseSqrt();
  const Eigen::MatrixXd Xw = sw.asDiagonal() * X;
  model.coefficients = Xw.completeOrthogonalDecomposition().solve(sw.cwiseProduct(y));
  return model;
}

LinearModel fit_weighted_least_squares(const DebiasedDistribution& dist, RankPolicy policy) {
  return fit_weighted_least_squares(dist.observations(), dist.weights(), policy);
}

Eigen::VectorXd logistic_gradient(const LinearModel& model,
                                  std::span<const Observation> observations,
                                  const Eigen::VectorXd& weights) {
  check_weights(observations, weights);
  const Eigen::MatrixXd X = design_matrix(observations);
  const double total = weights.sum();
  Eigen::VectorXd g = Eigen::VectorXd::Zero(X.cols());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const auto& z = observations[static_cast<std::size_t>(i)];
    if (!z.label) throw TaskMismatch("logistic regression needs binary labels");
    const double y = *z.label;
    const double m = y * X.row(i).dot(model.coefficients);
    g -= (weights(i) / total) * y * sigmoid(-m) * X.row(i).transpose();
  }
  return g;
}

LinearModel fit_weighted_logistic(std::span<const Observation> observations,
                                  const Eigen::VectorXd& weights, const LogisticOptions& options) {
  check_weights(observations, weights);
  const Eigen::MatrixXd X = design_matrix(observations);
  const Eigen::VectorXd w = weights / weights.sum();
  Eigen::VectorXd y(X.rows());
  bool has_pos = false, has_neg = false;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const auto& z = observations[static_cast<std::size_t>(i)];
    if (!z.label) throw TaskMismatch("logistic regression needs binary labels");
    y(i) = *z.label;
    if (w(i) > 0.0) (y(i) > 0 ? has_pos : has_neg) = true;
  }
  if (!(has_pos && has_neg))
    throw Separable("all weighted observations share one label; no finite minimizer", 0.0);

  auto loss = [&](const Eigen::VectorXd& beta) {
    const Eigen::VectorXd margin = y.cwiseProduct(X * beta);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < margin.size(); ++i) acc += w(i) * softplus(-margin(i));
    return acc;
  };

  const Eigen::Index p = X.cols();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  double f = loss(beta);
  bool converged = false;
  for (int it = 0; it < options.max_iter; ++it) {
    const Eigen::VectorXd margin = y.cwiseProduct(X * beta);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(p, p);
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      const double s = sigmoid(-margin(i));
      g.noalias() -= w(i) * y(i) * s * X.row(i).transpose();
      H.noalias() += w(i) * s * (1.0 - s) * X.row(i).transpose() * X.row(i);
    }
    if (g.cwiseAbs().maxCoeff() <= options.tol) {
      converged = true;
      break;
    }
    Eigen::VectorXd step = H.ldlt().solve(-g);
    if (!step.allFinite() || step.dot(g) >= 0.0) step = -g;

    // Near the optimum the predicted decrease is below the rounding error of
    // the loss, so allow a few ulps of slack.
    const double slack = 8.0 * std::numeric_limits<double>::epsilon() * std::abs(f);
    double alpha = 1.0;
    Eigen::VectorXd next = beta + step;
    double f_next = loss(next);
    for (int ls = 0; ls < 50 && f_next > f + 1e-4 * alpha * step.dot(g) + slack; ++ls) {
      alpha *= 0.5;
      next = beta + alpha * step;
      f_next = loss(next);
    }
    beta = next;
    f = f_next;
    if (beta.norm() > options.norm_cap) break;
  }

  const double norm = beta.norm();
  if (!converged || norm > options.norm_cap)
    throw Separable("logistic fit did not reach a finite minimizer (coefficient norm " +
                        std::to_string(norm) + ")",
                    norm);

  // A model that classifies every weighted point strictly correctly can always
  // be scaled up to lower the loss, so it is not a true minimizer.
  const Eigen::VectorXd margin = y.cwiseProduct(X * beta);
  bool all_correct = true;
  for (Eigen::Index i = 0; i < margin.size(); ++i)
    if (w(i) > 0.0 && !(margin(i) > 0.0)) all_correct = false;
  if (all_correct)
    throw Separable("weighted data are linearly separable (coefficient norm " +
                        std::to_string(norm) + ")",
                    norm);

  return LinearModel{beta, Task::kBinaryClassification};
}

LinearModel fit_weighted_logistic(const DebiasedDistribution& dist,
                                  const LogisticOptions& options) {
  return fit_weighted_logistic(dist.observations(), dist.weights(), options);
}

double sup_deviation(const DebiasedDistribution& dist,
                     const std::function<double(const LinearModel&)>& true_risk,
                     const std::vector<LinearModel>& theta_grid, const LossSpec& loss) {
  if (theta_grid.empty()) throw InvalidArgument("theta grid is empty");
  double worst = 0.0;
  for (const auto& theta : theta_grid)
    worst = std::max(worst, std::abs(weighted_risk(theta, dist, loss) - true_risk(theta)));
  return worst;
}

}  // namespace debias
