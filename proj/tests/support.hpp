#pragma once

// Random instance generators and reference implementations used as oracles.
// Nothing here calls into the library's numerical routines; the library is
// used only to build pooled data.

#include "debias/bias_model.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

namespace testing_support {

using debias::BiasingFunction;
using debias::Observation;
using debias::ObservationList;

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

// A generated biased-sampling instance: K samples drawn by rejection from a
// uniform base on [-2, 2]^dim.
struct Instance {
  std::vector<ObservationList> samples;
  std::vector<BiasingFunction> fns;
};

// Smooth strictly positive bias bounded by 1.
inline BiasingFunction smooth_bias(std::mt19937_64& rng) {
  const double a = uniform(rng, -1.5, 1.5);
  const double s = uniform(rng, 0.5, 2.0);
  const double floor = uniform(rng, 0.05, 0.3);
  return BiasingFunction::custom(
      [=](const Observation& z) {
        const double t = (z.features[0] - a) / s;
        return floor + (1.0 - floor) * std::exp(-t * t);
      },
      1.0, floor, "smooth");
}

inline BiasingFunction interval_bias(double lo, double hi) {
  return BiasingFunction::from_def(debias::BiasDef::interval(0, lo, hi));
}

inline ObservationList draw_from(const BiasingFunction& fn, std::size_t count, std::size_t dim,
                                 std::mt19937_64& rng) {
  ObservationList out;
  while (out.size() < count) {
    Observation z;
    for (std::size_t j = 0; j < dim; ++j) z.features.push_back(uniform(rng, -2.0, 2.0));
    z.target = z.features[0] + uniform(rng, -0.1, 0.1);
    if (uniform(rng, 0.0, fn.upper_bound()) < fn(z)) out.push_back(std::move(z));
  }
  return out;
}

// K strata of total size about n_total, the last one unbiased. The others
// mix smooth positive biases and overlapping intervals, so the instance is
// strongly connected with overwhelming probability.
inline Instance random_instance(std::mt19937_64& rng, std::size_t K, std::size_t n_total,
                                std::size_t dim = 2) {
  Instance inst;
  for (std::size_t k = 0; k + 1 < K; ++k) {
    if (k % 2 == 0) {
      inst.fns.push_back(smooth_bias(rng));
    } else {
      const double lo = uniform(rng, -2.0, 0.0);
      inst.fns.push_back(interval_bias(lo, lo + uniform(rng, 1.0, 2.0)));
    }
  }
  inst.fns.push_back(BiasingFunction::constant_one());
  for (std::size_t k = 0; k < K; ++k) {
    const std::size_t nk = std::max<std::size_t>(2, n_total / K + uniform_index(rng, 5));
    inst.samples.push_back(draw_from(inst.fns[k], nk, dim, rng));
  }
  return inst;
}

// Direct evaluation of the potential without any stabilization.
inline double objective_oracle(const Eigen::VectorXd& u, const Eigen::MatrixXd& B,
                               const Eigen::VectorXd& rates) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < B.rows(); ++i) {
    double s = 0.0;
    for (Eigen::Index k = 0; k < B.cols(); ++k) s += std::exp(u(k)) * B(i, k);
    acc += std::log(s);
  }
  return acc / static_cast<double>(B.rows()) - rates.dot(u);
}

// pi_i proportional to 1 / sum_l (lambda_l / W_l) B(i, l).
inline Eigen::VectorXd weights_oracle(const Eigen::VectorXd& W, const Eigen::MatrixXd& B,
                                      const Eigen::VectorXd& rates) {
  Eigen::VectorXd pi(B.rows());
  for (Eigen::Index i = 0; i < B.rows(); ++i) {
    double s = 0.0;
    for (Eigen::Index l = 0; l < B.cols(); ++l) s += rates(l) / W(l) * B(i, l);
    pi(i) = 1.0 / s;
  }
  return pi / pi.sum();
}

// Scalar oracle for K = 2 with omega_1 an indicator of A and omega_2 == 1.
// With W = (w, 1), Gamma_2(W) = 1 reads
//   (1/n) [ m_A / (lambda_1 / w + lambda_2) + n_out / lambda_2 ] = 1,
// which is increasing in w; solved by bisection. Returns Omega_hat_1.
struct ScalarSolution {
  double W1;
  double Omega1;
};

inline ScalarSolution stratified_bisection(std::size_t n1, std::size_t n2, std::size_t in_A) {
  const double n = static_cast<double>(n1 + n2);
  const double l1 = n1 / n, l2 = n2 / n;
  const double out = n - static_cast<double>(in_A);
  auto g = [&](double w) { return (in_A / (l1 / w + l2) + out / l2) / n - 1.0; };
  double lo = 1e-12, hi = 1.0;
  while (g(hi) < 0.0) hi *= 2.0;
  for (int it = 0; it < 400 && hi - lo > 1e-17 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (g(mid) < 0.0 ? lo : hi) = mid;
  }
  const double w = 0.5 * (lo + hi);
  // Omega_1 = W_1 / mean(1/S); mean(1/S) is Gamma_2 = 1 at the root, but
  // recompute it to stay faithful to the definition.
  const double mean_inv_s = (in_A / (l1 / w + l2) + out / l2) / n;
  return {w, w / mean_inv_s};
}

// K = 2: omega_1 = 1{x0 in [lo, hi]}, omega_2 == 1, with at least one point
// of the unbiased sample inside the interval.
struct StratifiedInstance {
  debias::PooledData pooled;
  std::size_t n1, n2, in_A;
};

inline StratifiedInstance random_stratified(std::mt19937_64& rng) {
  const double lo = uniform(rng, -2.0, 0.5);
  const double hi = lo + uniform(rng, 0.3, 1.5);
  const auto fA = BiasingFunction::from_def(debias::BiasDef::interval(0, lo, hi));
  const auto one = BiasingFunction::constant_one();
  while (true) {
    const std::size_t n1 = 1 + uniform_index(rng, 60);
    const std::size_t n2 = 1 + uniform_index(rng, 60);
    auto d1 = draw_from(fA, n1, 1, rng);
    auto d2 = draw_from(one, n2, 1, rng);
    std::size_t in2 = 0;
    for (const auto& z : d2) in2 += fA(z) > 0 ? 1 : 0;
    if (in2 == 0) continue;
    return {debias::evaluate_bias_matrix({d1, d2}, {fA, one}), n1, n2, n1 + in2};
  }
}

// Dense Gaussian elimination with partial pivoting.
inline Eigen::VectorXd gauss_solve(Eigen::MatrixXd A, Eigen::VectorXd b) {
  const Eigen::Index n = A.rows();
  for (Eigen::Index c = 0; c < n; ++c) {
    Eigen::Index p = c;
    for (Eigen::Index r = c + 1; r < n; ++r)
      if (std::abs(A(r, c)) > std::abs(A(p, c))) p = r;
    A.row(c).swap(A.row(p));
    std::swap(b(c), b(p));
    for (Eigen::Index r = c + 1; r < n; ++r) {
      const double f = A(r, c) / A(c, c);
      A.row(r) -= f * A.row(c);
      b(r) -= f * b(c);
    }
  }
  Eigen::VectorXd x(n);
  for (Eigen::Index r = n - 1; r >= 0; --r) {
    double s = b(r);
    for (Eigen::Index c = r + 1; c < n; ++c) s -= A(r, c) * x(c);
    x(r) = s / A(r, r);
  }
  return x;
}

// Design matrix with a trailing intercept column.
inline Eigen::MatrixXd design(const ObservationList& obs) {
  const std::size_t d = obs.front().dim();
  Eigen::MatrixXd X(static_cast<Eigen::Index>(obs.size()), static_cast<Eigen::Index>(d + 1));
  for (std::size_t i = 0; i < obs.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j)
      X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = obs[i].features[j];
    X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = 1.0;
  }
  return X;
}

// Unweighted ordinary least squares through the normal equations.
inline Eigen::VectorXd ols_oracle(const ObservationList& obs) {
  const Eigen::MatrixXd X = design(obs);
  Eigen::VectorXd y(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) y(i) = *obs[static_cast<std::size_t>(i)].target;
  return gauss_solve(X.transpose() * X, X.transpose() * y);
}

// Unweighted logistic regression by gradient descent with backtracking.
inline Eigen::VectorXd logistic_oracle(const ObservationList& obs, double tol = 1e-12) {
  const Eigen::MatrixXd X = design(obs);
  const double n = static_cast<double>(X.rows());
  auto loss = [&](const Eigen::VectorXd& b) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      const double m = *obs[static_cast<std::size_t>(i)].label * X.row(i).dot(b);
      acc += m > 0 ? std::log1p(std::exp(-m)) : -m + std::log1p(std::exp(m));
    }
    return acc / n;
  };
  auto grad = [&](const Eigen::VectorXd& b) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(b.size());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      const double y = *obs[static_cast<std::size_t>(i)].label;
      const double m = y * X.row(i).dot(b);
      g -= y / (1.0 + std::exp(m)) * X.row(i).transpose();
    }
    return Eigen::VectorXd(g / n);
  };
  Eigen::VectorXd b = Eigen::VectorXd::Zero(X.cols());
  double step = 1.0;
  for (int it = 0; it < 200000; ++it) {
    const Eigen::VectorXd g = grad(b);
    if (g.cwiseAbs().maxCoeff() < tol) break;
    const double f = loss(b);
    step *= 2.0;
    while (loss(b - step * g) > f - 0.5 * step * g.squaredNorm()) step *= 0.5;
    b -= step * g;
  }
  return b;
}

// Reflexive transitive closure by Floyd-Warshall.
inline std::vector<std::vector<bool>> reachability_oracle(const Eigen::MatrixXi& adj) {
  const auto K = static_cast<std::size_t>(adj.rows());
  std::vector<std::vector<bool>> reach(K, std::vector<bool>(K, false));
  for (std::size_t a = 0; a < K; ++a) {
    reach[a][a] = true;
    for (std::size_t b = 0; b < K; ++b)
      if (adj(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b))) reach[a][b] = true;
  }
  for (std::size_t m = 0; m < K; ++m)
    for (std::size_t a = 0; a < K; ++a)
      for (std::size_t b = 0; b < K; ++b)
        if (reach[a][m] && reach[m][b]) reach[a][b] = true;
  return reach;
}

inline bool strongly_connected_oracle(const Eigen::MatrixXi& adj) {
  for (const auto& row : reachability_oracle(adj))
    for (bool r : row)
      if (!r) return false;
  return true;
}

// Connected components of an undirected 0/1 graph by breadth-first search.
inline std::size_t components_oracle(const Eigen::MatrixXi& adj) {
  const Eigen::Index K = adj.rows();
  std::vector<bool> seen(K, false);
  std::size_t count = 0;
  for (Eigen::Index s = 0; s < K; ++s) {
    if (seen[s]) continue;
    ++count;
    std::vector<Eigen::Index> queue{s};
    seen[s] = true;
    while (!queue.empty()) {
      const Eigen::Index v = queue.back();
      queue.pop_back();
      for (Eigen::Index w = 0; w < K; ++w)
        if (adj(v, w) && !seen[w]) {
          seen[w] = true;
          queue.push_back(w);
        }
    }
  }
  return count;
}

inline Eigen::MatrixXi random_symmetric_graph(std::mt19937_64& rng, Eigen::Index K, double p) {
  Eigen::MatrixXi A = Eigen::MatrixXi::Zero(K, K);
  for (Eigen::Index a = 0; a < K; ++a)
    for (Eigen::Index b = a + 1; b < K; ++b)
      if (uniform(rng, 0.0, 1.0) < p) A(a, b) = A(b, a) = 1;
  return A;
}

inline double max_rel_error(const Eigen::MatrixXd& got, const Eigen::MatrixXd& want) {
  const double scale = std::max(1e-8, want.cwiseAbs().maxCoeff());
  return (got - want).cwiseAbs().maxCoeff() / scale;
}

}  // namespace testing_support
