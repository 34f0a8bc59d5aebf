#include "debias/assumptions.hpp"

#include "debias/errors.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace debias {

bool check_support_cover(const PooledData& pooled) {
  const Eigen::MatrixXd& B = pooled.bias_matrix();
  for (Eigen::Index i = 0; i < B.rows(); ++i)
    if (!(B.row(i).maxCoeff() > 0.0)) return false;
  return true;
}

bool check_support_cover(const ObservationList& observations,
                         const std::vector<BiasingFunction>& fns) {
  for (const auto& z : observations) {
    bool covered = false;
    for (const auto& f : fns) {
      if (f.evaluate_checked(z) > 0.0) {
        covered = true;
        break;
      }
    }
    if (!covered) return false;
  }
  return true;
}

KappaGraph make_kappa_graph(const Eigen::MatrixXi& adjacency, double kappa) {
  if (!(kappa > 0.0)) throw BadKappa("kappa must be positive");
  if (adjacency.rows() != adjacency.cols()) throw InvalidArgument("adjacency must be square");
  KappaGraph g;
  g.kappa = kappa;
  g.source = KappaGraph::Source::kUserDeclared;
  g.adjacency = adjacency;
  for (Eigen::Index k = 0; k < adjacency.rows(); ++k) {
    g.adjacency(k, k) = 0;
    for (Eigen::Index l = 0; l < adjacency.cols(); ++l) {
      const int a = adjacency(k, l);
      if (a != 0 && a != 1) throw InvalidArgument("adjacency entries must be 0 or 1");
      if (k != l && a != adjacency(l, k)) throw InvalidArgument("adjacency must be symmetric");
    }
  }
  return g;
}

KappaGraph build_empirical_kappa_graph(const PooledData& pooled,
                                       const std::optional<Eigen::VectorXd>& weights,
                                       double kappa) {
  if (!(kappa > 0.0)) throw BadKappa("kappa must be positive, got " + std::to_string(kappa));
  const Eigen::MatrixXd& B = pooled.bias_matrix();
  const Eigen::Index n = B.rows();
  const Eigen::Index K = B.cols();

  Eigen::VectorXd w;
  if (weights) {
    if (weights->size() != n) throw DimensionMismatch("weight vector length differs from n");
    w = *weights;
  } else {
    w = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  }

  // Cross moments sum_z w(z) omega_k(z) omega_l(z).
  const Eigen::MatrixXd moments = B.transpose() * w.asDiagonal() * B;

  KappaGraph g;
  g.kappa = kappa;
  g.source = KappaGraph::Source::kEmpiricalEstimate;
  g.adjacency = Eigen::MatrixXi::Zero(K, K);
  for (Eigen::Index k = 0; k < K; ++k)
    for (Eigen::Index l = 0; l < K; ++l)
      if (k != l && moments(k, l) >= kappa) g.adjacency(k, l) = 1;
  return g;
}

LaplacianConnectivity laplacian_connectivity(const KappaGraph& graph) {
  const Eigen::Index K = graph.adjacency.rows();
  LaplacianConnectivity out;
  if (K == 0) return out;

  const Eigen::MatrixXd A = graph.adjacency.cast<double>();
  Eigen::MatrixXd L = -A;
  for (Eigen::Index k = 0; k < K; ++k) L(k, k) = A.row(k).sum() - A(k, k);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(L, Eigen::EigenvaluesOnly);
  const double tol = kLaplacianZeroTol * static_cast<double>(K);
  for (Eigen::Index i = 0; i < K; ++i)
    if (std::abs(solver.eigenvalues()(i)) <= tol) ++out.zero_multiplicity;
  out.connected = out.zero_multiplicity == 1;
  return out;
}

std::size_t count_components(const KappaGraph& graph) {
  const auto K = static_cast<std::size_t>(graph.adjacency.rows());
  std::vector<std::size_t> parent(K);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  std::size_t components = K;
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t l = k + 1; l < K; ++l) {
      if (graph.adjacency(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l)) == 0)
        continue;
      const std::size_t a = find(k), b = find(l);
      if (a != b) {
        parent[a] = b;
        --components;
      }
    }
  }
  return components;
}

std::vector<std::size_t> strongly_connected_components(const Eigen::MatrixXi& adjacency) {
  // Iterative Tarjan.
  const auto n = static_cast<std::size_t>(adjacency.rows());
  constexpr std::size_t kUnvisited = static_cast<std::size_t>(-1);
  std::vector<std::size_t> index(n, kUnvisited), low(n, 0), comp(n, kUnvisited);
  std::vector<char> on_stack(n, 0);
  std::vector<std::size_t> stack;
  std::size_t next_index = 0, next_comp = 0;

  struct Frame {
    std::size_t v;
    std::size_t next_w;
  };
  std::vector<Frame> call;

  for (std::size_t root = 0; root < n; ++root) {
    if (index[root] != kUnvisited) continue;
    call.push_back({root, 0});
    index[root] = low[root] = next_index++;
    stack.push_back(root);
    on_stack[root] = 1;

    while (!call.empty()) {
      Frame& f = call.back();
      const std::size_t v = f.v;
      bool descended = false;
      while (f.next_w < n) {
        const std::size_t w = f.next_w++;
        if (w == v || adjacency(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(w)) == 0)
          continue;
        if (index[w] == kUnvisited) {
          index[w] = low[w] = next_index++;
          stack.push_back(w);
          on_stack[w] = 1;
          call.push_back({w, 0});
          descended = true;
          break;
        }
        if (on_stack[w]) low[v] = std::min(low[v], index[w]);
      }
      if (descended) continue;

      if (low[v] == index[v]) {
        std::size_t w;
        do {
          w = stack.back();
          stack.pop_back();
          on_stack[w] = 0;
          comp[w] = next_comp;
        } while (w != v);
        ++next_comp;
      }
      call.pop_back();
      if (!call.empty()) {
        const std::size_t parent = call.back().v;
        low[parent] = std::min(low[parent], low[v]);
      }
    }
  }
  return comp;
}

StrongConnectivity empirical_strong_connectivity(const PooledData& pooled) {
  const Eigen::MatrixXd& B = pooled.bias_matrix();
  const auto K = static_cast<Eigen::Index>(pooled.num_strata());
  const auto& offsets = pooled.offsets();

  StrongConnectivity out;
  out.graph.adjacency = Eigen::MatrixXi::Zero(K, K);
  for (Eigen::Index l = 0; l < K; ++l) {
    const auto begin = static_cast<Eigen::Index>(offsets[static_cast<std::size_t>(l)]);
    const auto end = static_cast<Eigen::Index>(offsets[static_cast<std::size_t>(l) + 1]);
    for (Eigen::Index k = 0; k < K; ++k) {
      for (Eigen::Index i = begin; i < end; ++i) {
        if (B(i, k) > 0.0) {
          out.graph.adjacency(k, l) = 1;
          break;
        }
      }
    }
  }
  const auto comp = strongly_connected_components(out.graph.adjacency);
  out.strongly_connected =
      std::all_of(comp.begin(), comp.end(), [&](std::size_t c) { return c == comp.front(); });
  return out;
}

AssumptionReport assess_assumptions(const PooledData& pooled,
                                    const std::optional<Eigen::VectorXd>& weights, double kappa) {
  AssumptionReport r;
  r.support_cover_ok = check_support_cover(pooled);
  if (!r.support_cover_ok) r.messages.emplace_back("some pooled observation has all omega_l = 0");

  const KappaGraph g = build_empirical_kappa_graph(pooled, weights, kappa);
  const LaplacianConnectivity lc = laplacian_connectivity(g);
  r.laplacian_zero_multiplicity = lc.zero_multiplicity;
  r.kappa_connected = lc.connected;
  if (!r.kappa_connected) {
    std::ostringstream os;
    os << "overlap graph at kappa=" << kappa << " has " << lc.zero_multiplicity
       << " connected components";
    r.messages.push_back(os.str());
  }

  r.strongly_connected = empirical_strong_connectivity(pooled).strongly_connected;
  if (!r.strongly_connected)
    r.messages.emplace_back(
        "empirical strata digraph is not strongly connected; the weight equations have no unique "
        "solution");

  const Eigen::MatrixXd& B = pooled.bias_matrix();
  const Eigen::VectorXd w = weights ? *weights
                                    : Eigen::VectorXd::Constant(
                                          B.rows(), 1.0 / static_cast<double>(B.rows()));
  r.min_mean_omega = (B.transpose() * w).minCoeff();
  return r;
}

}  // namespace debias
