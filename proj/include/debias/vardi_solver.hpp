#pragma once

#include "debias/bias_model.hpp"
#include "debias/errors.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace debias {

// Potential D(u) = (1/n) sum_z log(sum_k e^{u_k} omega_k(z)) - sum_k lambda_k u_k.
// Its gradient vanishes exactly at solutions of Gamma(W) = 1 under the change
// of variables u_k = log(lambda_k / W_k). D is invariant along u + c*1, so the
// solver pins u_K = log(lambda_K), i.e. W_K = 1, and optimizes the rest.
double objective_D(const Eigen::VectorXd& u, const PooledData& pooled);
Eigen::VectorXd gradient_D(const Eigen::VectorXd& u, const PooledData& pooled);
Eigen::MatrixXd hessian_D(const Eigen::VectorXd& u, const PooledData& pooled);

// u_k = log(lambda_k / W_k) and back. Throws NonPositiveW on W <= 0.
Eigen::VectorXd log_coordinates_from_W(const Eigen::VectorXd& W, const Eigen::VectorXd& rates);
Eigen::VectorXd W_from_log_coordinates(const Eigen::VectorXd& u, const Eigen::VectorXd& rates);

// Gamma_k(W) = 1/(n W_k) sum_z omega_k(z) / sum_l (lambda_l / W_l) omega_l(z).
Eigen::VectorXd gamma_hat(const Eigen::VectorXd& W, const PooledData& pooled);

// Omega_l = W_l / ((1/n) sum_z (sum_k lambda_k omega_k(z) / W_k)^{-1}).
Eigen::VectorXd estimate_Omega(const Eigen::VectorXd& W, const PooledData& pooled);

// pi_{k,i} proportional to (sum_l (n_l / (n W_l)) omega_l(Z_{k,i}))^{-1}, normalized.
DebiasedDistribution compute_weights(const Eigen::VectorXd& W, const PooledData& pooled);

enum class SolverMethod { kFixedStepGradient, kQuasiNewton, kAuto };

std::string to_string(SolverMethod m);
SolverMethod solver_method_from_string(const std::string& s);

struct SolverConfig {
  SolverMethod method = SolverMethod::kAuto;
  // Stop when max_k |Gamma_k(W) - 1| <= grad_tol.
  double grad_tol = 1e-9;
  int max_iter = 10000;
  // Fixed gradient step; 1/M^2 with M the largest declared bound when unset.
  std::optional<double> step_size;
  std::uint64_t seed = 0;
  // Uniform jitter in [-init_jitter, init_jitter] added to the free
  // coordinates of the starting point. Zero by default.
  double init_jitter = 0.0;
  // Keep every iterate in SolverResult::trace.
  bool record_trace = false;

  void validate() const;
};

struct SolverResult {
  Eigen::VectorXd W_hat;      // W_hat[K-1] == 1
  Eigen::VectorXd Omega_hat;
  Eigen::VectorXd u;          // log coordinates of W_hat
  Eigen::VectorXd weights;    // pi, pooled row order, sums to 1
  Eigen::VectorXd gamma_residual;
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
  // The empirical strata digraph is not strongly connected, so the returned
  // minimizer is one of many.
  bool non_unique = false;
  double hessian_min_eig_at_solution = 0.0;
  SolverMethod method_used = SolverMethod::kFixedStepGradient;
  std::vector<Eigen::VectorXd> trace;

  double max_abs_residual() const {
    return gamma_residual.size() ? gamma_residual.cwiseAbs().maxCoeff() : 0.0;
  }
};

class NotConverged : public Error {
 public:
  NotConverged(const std::string& what, SolverResult best)
      : Error(what), best_(std::move(best)) {}
  const SolverResult& best() const noexcept { return best_; }

 private:
  SolverResult best_;
};

// Solves Gamma(W) = 1 by minimizing D over the K-1 free log coordinates.
// Throws NotConverged (carrying the best iterate) or LogOfZero.
SolverResult solve_W(const PooledData& pooled, const SolverConfig& config = {});

// m i.i.d. draws from the categorical distribution over the observations.
std::vector<std::size_t> resample_indices(const DebiasedDistribution& dist, std::size_t m,
                                          std::uint64_t seed);
ObservationList resample(const DebiasedDistribution& dist, std::size_t m, std::uint64_t seed);

}  // namespace debias
