#include "debias/vardi_solver.hpp"

#include "debias/assumptions.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

namespace debias {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Evaluates D and its derivatives. Sums run over pooled rows in order, so
// results are bit-stable across runs.
class Potential {
 public:
  explicit Potential(const PooledData& pooled)
      : rates_(pooled.rates()),
        n_(static_cast<double>(pooled.size())),
        log_bias_(pooled.bias_matrix().rows(), pooled.bias_matrix().cols()) {
    const Eigen::MatrixXd& B = pooled.bias_matrix();
    for (Eigen::Index i = 0; i < B.rows(); ++i)
      for (Eigen::Index k = 0; k < B.cols(); ++k)
        log_bias_(i, k) = B(i, k) > 0.0 ? std::log(B(i, k)) : kNegInf;
  }

  Eigen::Index K() const { return log_bias_.cols(); }
  double n() const { return n_; }

  double value(const Eigen::VectorXd& u) const {
    check(u);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < log_bias_.rows(); ++i) acc += log_sum(i, u);
    return acc / n_ - rates_.dot(u);
  }

  double value_and_gradient(const Eigen::VectorXd& u, Eigen::VectorXd& grad) const {
    check(u);
    const Eigen::Index K = this->K();
    grad.setZero(K);
    Eigen::VectorXd p(K);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < log_bias_.rows(); ++i) {
      acc += softmax(i, u, p);
      grad += p;
    }
    grad /= n_;
    grad -= rates_;
    return acc / n_ - rates_.dot(u);
  }

  Eigen::MatrixXd hessian(const Eigen::VectorXd& u) const {
    check(u);
    const Eigen::Index K = this->K();
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(K, K);
    Eigen::VectorXd p(K);
    for (Eigen::Index i = 0; i < log_bias_.rows(); ++i) {
      softmax(i, u, p);
      H.diagonal() += p;
      H.noalias() -= p * p.transpose();
    }
    return H / n_;
  }

 private:
  void check(const Eigen::VectorXd& u) const {
    if (u.size() != K())
      throw DimensionMismatch("log coordinates have length " + std::to_string(u.size()) +
                              ", expected " + std::to_string(K()));
    if (!u.allFinite()) throw InvalidArgument("log coordinates must be finite");
  }

  // Largest contributing exponent u_k + log omega_k(z_i).
  double row_max(Eigen::Index i, const Eigen::VectorXd& u) const {
    double m = kNegInf;
    for (Eigen::Index k = 0; k < K(); ++k)
      if (log_bias_(i, k) != kNegInf) m = std::max(m, u(k) + log_bias_(i, k));
    if (m == kNegInf)
      throw LogOfZero("pooled row " + std::to_string(i) + " has omega_l = 0 for every l");
    return m;
  }

  double log_sum(Eigen::Index i, const Eigen::VectorXd& u) const {
    const double m = row_max(i, u);
    double s = 0.0;
    for (Eigen::Index k = 0; k < K(); ++k)
      if (log_bias_(i, k) != kNegInf) s += std::exp(u(k) + log_bias_(i, k) - m);
    return m + std::log(s);
  }

  // Fills p with e^{u_k} omega_k / sum_l e^{u_l} omega_l; returns the log-sum.
  double softmax(Eigen::Index i, const Eigen::VectorXd& u, Eigen::VectorXd& p) const {
    const double m = row_max(i, u);
    double s = 0.0;
    for (Eigen::Index k = 0; k < K(); ++k) {
      p(k) = log_bias_(i, k) != kNegInf ? std::exp(u(k) + log_bias_(i, k) - m) : 0.0;
      s += p(k);
    }
    p /= s;
    return m + std::log(s);
  }

  Eigen::VectorXd rates_;
  double n_;
  RowMatrix log_bias_;
};

void check_W(const Eigen::VectorXd& W, const PooledData& pooled) {
  if (static_cast<std::size_t>(W.size()) != pooled.num_strata())
    throw DimensionMismatch("W has length " + std::to_string(W.size()) + ", expected " +
                            std::to_string(pooled.num_strata()));
  for (Eigen::Index k = 0; k < W.size(); ++k)
    if (!(W(k) > 0.0) || !std::isfinite(W(k)))
      throw NonPositiveW("W must be strictly positive and finite");
}

// S(z) = sum_l (lambda_l / W_l) omega_l(z) for every pooled row.
Eigen::VectorXd mixture_density(const Eigen::VectorXd& W, const PooledData& pooled) {
  check_W(W, pooled);
  const Eigen::VectorXd coef = pooled.rates().cwiseQuotient(W);
  Eigen::VectorXd S = pooled.bias_matrix() * coef;
  for (Eigen::Index i = 0; i < S.size(); ++i)
    if (!(S(i) > 0.0))
      throw LogOfZero("pooled row " + std::to_string(i) + " has omega_l = 0 for every l");
  return S;
}

// Residual max_k |Gamma_k - 1| through the identity Gamma_k - 1 = D'_k / lambda_k.
double gradient_residual(const Eigen::VectorXd& grad, const Eigen::VectorXd& rates) {
  return grad.cwiseQuotient(rates).cwiseAbs().maxCoeff();
}

struct Iterate {
  Eigen::VectorXd u;
  Eigen::VectorXd grad;
  double value = 0.0;
  double residual = std::numeric_limits<double>::infinity();
};

class Minimizer {
 public:
  Minimizer(const Potential& potential, const Eigen::VectorXd& rates, const SolverConfig& config,
            std::vector<Eigen::VectorXd>* trace)
      : potential_(potential), rates_(rates), config_(config), trace_(trace) {}

  Iterate evaluate(const Eigen::VectorXd& u) const {
    Iterate it;
    it.u = u;
    it.value = potential_.value_and_gradient(u, it.grad);
    it.residual = gradient_residual(it.grad, rates_);
    return it;
  }

  // Constant-step gradient descent on the free coordinates. Stops on
  // convergence, on max_iter, or after 20 consecutive iterations with
  // relative objective decrease below 1e-14.
  // With stop_on_stall, gives up after 20 iterations of negligible progress
  // so that a fallback can take over.
  bool fixed_step(Iterate& cur, double step, double target, bool stop_on_stall, int& iterations) {
    const Eigen::Index free = cur.u.size() - 1;
    int stalled = 0;
    for (int it = 0; it < config_.max_iter; ++it) {
      if (cur.residual <= target) return true;
      Eigen::VectorXd u = cur.u;
      u.head(free) -= step * cur.grad.head(free);
      Iterate next = evaluate(u);
      ++iterations;
      record(next.u);
      const double decrease = (cur.value - next.value) / std::max(1.0, std::abs(cur.value));
      stalled = decrease < 1e-14 ? stalled + 1 : 0;
      cur = std::move(next);
      if (stop_on_stall && stalled >= 20) break;
    }
    return cur.residual <= target;
  }

  // BFGS on the free coordinates with a backtracking line search. Near the
  // optimum the objective stops resolving decreases, so a step that keeps the
  // objective flat to its rounding level and shrinks the gradient is also
  // accepted. Steps too short to change u are never accepted.
  bool quasi_newton(Iterate& cur, double target, int& iterations) {
    const Eigen::Index free = cur.u.size() - 1;
    // Rounding level of the objective: a sum of n logs carries an error that
    // grows like sqrt(n) ulps.
    const double noise = 16.0 * std::numeric_limits<double>::epsilon() * std::sqrt(potential_.n());
    Eigen::MatrixXd Hinv = Eigen::MatrixXd::Identity(free, free);
    bool scaled = false;
    for (int it = 0; it < config_.max_iter; ++it) {
      if (cur.residual <= target) return true;
      const Eigen::VectorXd g = cur.grad.head(free);
      Eigen::VectorXd d = -Hinv * g;
      double slope = g.dot(d);
      if (!(slope < 0.0)) {
        Hinv.setIdentity();
        d = -g;
        slope = -g.squaredNorm();
      }

      double alpha = 1.0;
      bool accepted = false;
      Iterate next;
      for (int ls = 0; ls < 60; ++ls) {
        Eigen::VectorXd u = cur.u;
        u.head(free) += alpha * d;
        if (u == cur.u) break;
        if (u.allFinite()) {
          next = evaluate(u);
          const bool armijo = next.value <= cur.value + 1e-4 * alpha * slope;
          const bool flat = next.value <= cur.value + noise * (1.0 + std::abs(cur.value)) &&
                            next.grad.head(free).cwiseAbs().maxCoeff() <
                                0.9 * g.cwiseAbs().maxCoeff();
          if (armijo || flat) {
            accepted = true;
            break;
          }
        }
        alpha *= 0.5;
      }
      ++iterations;
      if (!accepted) {
        if (Hinv.isIdentity()) return false;
        Hinv.setIdentity();
        scaled = false;
        continue;
      }

      const Eigen::VectorXd s = next.u.head(free) - cur.u.head(free);
      const Eigen::VectorXd y = next.grad.head(free) - g;
      const double sy = s.dot(y);
      if (sy > 1e-300) {
        if (!scaled) {
          Hinv *= sy / y.squaredNorm();
          scaled = true;
        }
        const double rho = 1.0 / sy;
        const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(free, free);
        Hinv = (I - rho * s * y.transpose()) * Hinv * (I - rho * y * s.transpose()) +
               rho * s * s.transpose();
      }
      cur = std::move(next);
      record(cur.u);
    }
    return cur.residual <= target;
  }

 private:
  void record(const Eigen::VectorXd& u) {
    if (trace_) trace_->push_back(u);
  }

  const Potential& potential_;
  const Eigen::VectorXd& rates_;
  const SolverConfig& config_;
  std::vector<Eigen::VectorXd>* trace_;
};

}  // namespace

double objective_D(const Eigen::VectorXd& u, const PooledData& pooled) {
  return Potential(pooled).value(u);
}

Eigen::VectorXd gradient_D(const Eigen::VectorXd& u, const PooledData& pooled) {
  Eigen::VectorXd g;
  Potential(pooled).value_and_gradient(u, g);
  return g;
}

Eigen::MatrixXd hessian_D(const Eigen::VectorXd& u, const PooledData& pooled) {
  return Potential(pooled).hessian(u);
}

Eigen::VectorXd log_coordinates_from_W(const Eigen::VectorXd& W, const Eigen::VectorXd& rates) {
  if (W.size() != rates.size()) throw DimensionMismatch("W and rates differ in length");
  for (Eigen::Index k = 0; k < W.size(); ++k)
    if (!(W(k) > 0.0) || !std::isfinite(W(k)))
      throw NonPositiveW("W must be strictly positive and finite");
  Eigen::VectorXd u(W.size());
  for (Eigen::Index k = 0; k < W.size(); ++k) u(k) = std::log(rates(k) / W(k));
  return u;
}

Eigen::VectorXd W_from_log_coordinates(const Eigen::VectorXd& u, const Eigen::VectorXd& rates) {
  if (u.size() != rates.size()) throw DimensionMismatch("u and rates differ in length");
  return (rates.array() * (-u.array()).exp()).matrix();
}

Eigen::VectorXd gamma_hat(const Eigen::VectorXd& W, const PooledData& pooled) {
  const Eigen::VectorXd S = mixture_density(W, pooled);
  const Eigen::VectorXd inv = S.cwiseInverse();
  const Eigen::VectorXd sums = pooled.bias_matrix().transpose() * inv;
  const double n = static_cast<double>(pooled.size());
  return sums.cwiseQuotient(W) / n;
}

Eigen::VectorXd estimate_Omega(const Eigen::VectorXd& W, const PooledData& pooled) {
  const Eigen::VectorXd S = mixture_density(W, pooled);
  const double mean_inverse = S.cwiseInverse().sum() / static_cast<double>(pooled.size());
  return W / mean_inverse;
}

DebiasedDistribution compute_weights(const Eigen::VectorXd& W, const PooledData& pooled) {
  Eigen::VectorXd pi = mixture_density(W, pooled).cwiseInverse();
  pi /= pi.sum();
  return DebiasedDistribution(pooled.shared_observations(), std::move(pi));
}

std::string to_string(SolverMethod m) {
  switch (m) {
    case SolverMethod::kFixedStepGradient: return "gradient";
    case SolverMethod::kQuasiNewton: return "quasi-newton";
    case SolverMethod::kAuto: return "auto";
  }
  return "unknown";
}

SolverMethod solver_method_from_string(const std::string& s) {
  if (s == "gradient" || s == "fixed-step-gradient") return SolverMethod::kFixedStepGradient;
  if (s == "quasi-newton" || s == "bfgs") return SolverMethod::kQuasiNewton;
  if (s == "auto") return SolverMethod::kAuto;
  throw InvalidArgument("unknown solver method '" + s + "'");
}

void SolverConfig::validate() const {
  if (!(grad_tol > 0.0)) throw InvalidArgument("grad_tol must be positive");
  if (max_iter < 1) throw InvalidArgument("max_iter must be at least 1");
  if (step_size && !(*step_size > 0.0)) throw InvalidArgument("step_size must be positive");
  if (!(init_jitter >= 0.0)) throw InvalidArgument("init_jitter must be nonnegative");
}

SolverResult solve_W(const PooledData& pooled, const SolverConfig& config) {
  config.validate();
  const Eigen::VectorXd& rates = pooled.rates();
  const Eigen::Index K = rates.size();
  const Potential potential(pooled);

  SolverResult result;
  result.non_unique = !empirical_strong_connectivity(pooled).strongly_connected;

  Eigen::VectorXd u0(K);
  for (Eigen::Index k = 0; k < K; ++k) u0(k) = std::log(rates(k));
  if (config.init_jitter > 0.0 && K > 1) {
    std::mt19937_64 rng(config.seed);
    std::uniform_real_distribution<double> jitter(-config.init_jitter, config.init_jitter);
    for (Eigen::Index k = 0; k + 1 < K; ++k) u0(k) += jitter(rng);
  }

  Minimizer minimizer(potential, rates, config, config.record_trace ? &result.trace : nullptr);
  Iterate cur = minimizer.evaluate(u0);
  if (config.record_trace) result.trace.push_back(cur.u);

  // Leave headroom so the residual recomputed through Gamma(W) also clears grad_tol.
  const double target = 0.5 * config.grad_tol;
  bool converged = cur.residual <= target;
  int iterations = 0;
  result.method_used = config.method == SolverMethod::kQuasiNewton
                           ? SolverMethod::kQuasiNewton
                           : SolverMethod::kFixedStepGradient;

  if (!converged && K > 1) {
    if (config.method != SolverMethod::kQuasiNewton) {
      const double M = pooled.max_upper_bound();
      const double step = config.step_size.value_or(1.0 / (M * M));
      const bool fallback = config.method == SolverMethod::kAuto;
      converged = minimizer.fixed_step(cur, step, target, fallback, iterations);
    }
    if (!converged && config.method != SolverMethod::kFixedStepGradient) {
      result.method_used = SolverMethod::kQuasiNewton;
      converged = minimizer.quasi_newton(cur, target, iterations);
    }
  }

  result.u = cur.u;
  result.objective = cur.value;
  result.iterations = iterations;
  Eigen::VectorXd W = W_from_log_coordinates(cur.u, rates);
  W /= W(K - 1);
  result.W_hat = W;
  if (!((W.array() > 0.0).all() && W.allFinite())) {
    // Some u_k ran off to infinity: no minimizer exists for these data.
    throw NotConverged("log coordinates diverged after " + std::to_string(iterations) +
                           " iterations",
                       std::move(result));
  }
  result.gamma_residual = gamma_hat(W, pooled) - Eigen::VectorXd::Ones(K);
  result.Omega_hat = estimate_Omega(W, pooled);
  result.weights = compute_weights(W, pooled).weights();
  if (K > 1) {
    const Eigen::MatrixXd H = potential.hessian(cur.u).topLeftCorner(K - 1, K - 1);
    result.hessian_min_eig_at_solution =
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(H, Eigen::EigenvaluesOnly)
            .eigenvalues()
            .minCoeff();
  }
  result.converged = converged && result.max_abs_residual() <= config.grad_tol;

  if (!result.converged) {
    std::ostringstream os;
    os << "weight equations not solved after " << iterations
       << " iterations; max |Gamma - 1| = " << result.max_abs_residual();
    throw NotConverged(os.str(), std::move(result));
  }
  return result;
}

std::vector<std::size_t> resample_indices(const DebiasedDistribution& dist, std::size_t m,
                                          std::uint64_t seed) {
  if (m == 0) throw InvalidArgument("resample size must be positive");
  const Eigen::VectorXd& w = dist.weights();
  std::discrete_distribution<std::size_t> pick(w.data(), w.data() + w.size());
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> out(m);
  for (auto& idx : out) idx = pick(rng);
  return out;
}

ObservationList resample(const DebiasedDistribution& dist, std::size_t m, std::uint64_t seed) {
  ObservationList out;
  out.reserve(m);
  for (std::size_t idx : resample_indices(dist, m, seed)) out.push_back(dist.observations()[idx]);
  return out;
}

}  // namespace debias
