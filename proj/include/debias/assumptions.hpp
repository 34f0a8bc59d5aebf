#pragma once

#include "debias/bias_model.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace debias {

inline constexpr double kDefaultKappa = 1e-3;
// Eigenvalues of the Laplacian with |lambda| <= kLaplacianZeroTol * K count as zero.
inline constexpr double kLaplacianZeroTol = 1e-9;

// Undirected overlap graph on the strata: k -- l iff E[omega_k omega_l] >= kappa.
struct KappaGraph {
  enum class Source { kUserDeclared, kEmpiricalEstimate };

  std::size_t num_vertices() const noexcept { return static_cast<std::size_t>(adjacency.rows()); }

  double kappa = kDefaultKappa;
  Eigen::MatrixXi adjacency;  // symmetric 0/1, zero diagonal
  Source source = Source::kEmpiricalEstimate;
};

// Builds a graph from a user-declared symmetric 0/1 adjacency. The diagonal
// is cleared; asymmetric or non-binary input throws InvalidArgument.
KappaGraph make_kappa_graph(const Eigen::MatrixXi& adjacency, double kappa = kDefaultKappa);

// Directed empirical graph: k -> l iff some observation of sample l has
// omega_k > 0. Self-loops are recorded but play no role in connectivity.
struct StrataDigraph {
  std::size_t num_vertices() const noexcept { return static_cast<std::size_t>(adjacency.rows()); }
  Eigen::MatrixXi adjacency;
};

struct LaplacianConnectivity {
  bool connected = false;
  std::size_t zero_multiplicity = 0;
};

struct StrongConnectivity {
  StrataDigraph graph;
  bool strongly_connected = false;
};

struct AssumptionReport {
  bool support_cover_ok = false;
  std::size_t laplacian_zero_multiplicity = 0;
  bool kappa_connected = false;
  bool strongly_connected = false;
  double min_mean_omega = 0.0;
  std::vector<std::string> messages;
};

// True iff every pooled observation has max_l omega_l(z) > 0.
bool check_support_cover(const PooledData& pooled);
// Same check for observations outside the pooled sample, e.g. a held-out set.
bool check_support_cover(const ObservationList& observations,
                         const std::vector<BiasingFunction>& fns);

// a_{k,l} = 1{ sum_z w(z) omega_k(z) omega_l(z) >= kappa }. Without weights
// the pooled empirical measure stands in for the test distribution.
KappaGraph build_empirical_kappa_graph(const PooledData& pooled,
                                       const std::optional<Eigen::VectorXd>& weights,
                                       double kappa = kDefaultKappa);

// Connectivity from the spectrum of L = D - A.
LaplacianConnectivity laplacian_connectivity(const KappaGraph& graph);
// Number of connected components by union-find.
std::size_t count_components(const KappaGraph& graph);

StrongConnectivity empirical_strong_connectivity(const PooledData& pooled);

// Strongly connected components of a directed 0/1 adjacency matrix, as a
// component id per vertex. Ids are in [0, number of components).
std::vector<std::size_t> strongly_connected_components(const Eigen::MatrixXi& adjacency);

// All checks in one report. `weights` as in build_empirical_kappa_graph;
// min_mean_omega is min_k sum_z w(z) omega_k(z) under the same weights.
AssumptionReport assess_assumptions(const PooledData& pooled,
                                    const std::optional<Eigen::VectorXd>& weights = std::nullopt,
                                    double kappa = kDefaultKappa);

}  // namespace debias
