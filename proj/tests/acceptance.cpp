// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails. Usage: acceptance <path-to-debias_cli>

#include "debias/assumptions.hpp"
#include "debias/scenario_lab.hpp"
#include "debias/vardi_solver.hpp"
#include "debias/weighted_erm.hpp"
#include "support.hpp"

#include <Eigen/Eigenvalues>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <unistd.h>

using namespace debias;
namespace fs = std::filesystem;
namespace ts = testing_support;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", x);
  return buf;
}

bool within(double x, double lo, double hi) { return x >= lo && x <= hi; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

Outcome scenario_b() {
  const ScenarioSpec spec = preset("b");
  const auto r = run_experiment(spec);
  const auto* st = r.find(Learner::kLinearRegression, Treatment::kStandard);
  const auto* db = r.find(Learner::kLinearRegression, Treatment::kDebiased);
  std::size_t wins = 0;
  for (std::size_t i = 0; i < db->values.size(); ++i) wins += db->values[i] < st->values[i];
  const bool pass = r.n_runs == 100 && within(st->mean, 1.0, 1.6) && within(db->mean, 0.38, 0.60) &&
                    wins >= 95;
  return {pass, "standard " + fmt(st->mean) + " in [1.0, 1.6], debiased " + fmt(db->mean) +
                    " in [0.38, 0.60], debiased better in " + std::to_string(wins) + "/100 runs (" +
                    std::to_string(r.failures.size()) + " failed)"};
}

Outcome scenario_c() {
  const auto r = run_experiment(preset("c"));
  const auto* st = r.find(Learner::kLinearRegression, Treatment::kStandard);
  const auto* db = r.find(Learner::kLinearRegression, Treatment::kDebiased);
  const bool pass = within(db->mean, 0.40, 0.53) && within(st->mean, 0.60, 0.85);
  return {pass, "debiased " + fmt(db->mean) + " in [0.40, 0.53], standard " + fmt(st->mean) +
                    " in [0.60, 0.85]"};
}

PooledData four_point() {
  ObservationList a{Observation::unlabeled({0.2}), Observation::unlabeled({0.7})};
  ObservationList b{Observation::unlabeled({0.5}), Observation::unlabeled({1.5})};
  return evaluate_bias_matrix({a, b}, {BiasingFunction::from_def(BiasDef::interval(0, 0.0, 1.0)),
                                       BiasingFunction::constant_one()});
}

Outcome oracle_equivalence() {
  std::mt19937_64 rng(301);
  double worst = 0.0;
  for (int trial = 0; trial < 25; ++trial) {
    const auto inst = ts::random_stratified(rng);
    const auto r = solve_W(inst.pooled);
    const auto oracle = ts::stratified_bisection(inst.n1, inst.n2, inst.in_A);
    worst = std::max(worst, std::abs(r.Omega_hat(0) - oracle.Omega1));
  }
  const auto r = solve_W(four_point());
  const Eigen::Vector4d want(1.0 / 6, 1.0 / 6, 1.0 / 6, 0.5);
  const double pi_err = (r.weights - want).cwiseAbs().maxCoeff();
  return {worst <= 1e-10 && pi_err <= 1e-12,
          "max |Omega_1 - oracle| " + fmt(worst) + " (<= 1e-10), four-point weight error " +
              fmt(pi_err) + " (<= 1e-12)"};
}

Outcome derivatives() {
  std::mt19937_64 rng(302);
  double grad_err = 0.0, hess_err = 0.0, min_eig = 1.0;
  int instances = 0;
  for (std::size_t K : {2, 3, 5})
    for (std::size_t n : {20, 200})
      for (int rep = 0; rep < 9 && instances < 50; ++rep, ++instances) {
        const auto inst = ts::random_instance(rng, K, n);
        const auto pooled = evaluate_bias_matrix(inst.samples, inst.fns);
        Eigen::VectorXd u = pooled.rates().array().log().matrix();
        for (Eigen::Index k = 0; k < u.size(); ++k) u(k) += ts::uniform(rng, -1.0, 1.0);

        Eigen::VectorXd fd_g(u.size());
        Eigen::MatrixXd fd_h(u.size(), u.size());
        for (Eigen::Index k = 0; k < u.size(); ++k) {
          Eigen::VectorXd up = u, dn = u;
          up(k) += 1e-6;
          dn(k) -= 1e-6;
          fd_g(k) = (ts::objective_oracle(up, pooled.bias_matrix(), pooled.rates()) -
                     ts::objective_oracle(dn, pooled.bias_matrix(), pooled.rates())) /
                    2e-6;
          up = u;
          dn = u;
          up(k) += 1e-5;
          dn(k) -= 1e-5;
          fd_h.col(k) = (gradient_D(up, pooled) - gradient_D(dn, pooled)) / 2e-5;
        }
        const Eigen::MatrixXd H = hessian_D(u, pooled);
        grad_err = std::max(grad_err, ts::max_rel_error(gradient_D(u, pooled), fd_g));
        hess_err = std::max(hess_err, ts::max_rel_error(H, fd_h));
        min_eig = std::min(min_eig, Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(H).eigenvalues().minCoeff());
      }
  return {instances == 50 && grad_err < 1e-5 && hess_err < 1e-4 && min_eig >= -1e-10,
          std::to_string(instances) + " instances: gradient rel error " + fmt(grad_err) +
              " (< 1e-5), Hessian rel error " + fmt(hess_err) + " (< 1e-4), min eigenvalue " +
              fmt(min_eig) + " (>= -1e-10)"};
}

Outcome stationarity() {
  std::mt19937_64 rng(303);
  double residual = 0.0, gamma_drift = 0.0, weight_drift = 0.0;
  int solves = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t K = 2 + ts::uniform_index(rng, 4);
    const auto inst = ts::random_instance(rng, K, 40 + ts::uniform_index(rng, 400));
    const auto pooled = evaluate_bias_matrix(inst.samples, inst.fns);
    for (auto method : {SolverMethod::kAuto, SolverMethod::kQuasiNewton}) {
      SolverConfig cfg;
      cfg.method = method;
      const auto r = solve_W(pooled, cfg);
      if (!r.converged) continue;
      ++solves;
      residual = std::max(residual, (gamma_hat(r.W_hat, pooled).array() - 1.0).abs().maxCoeff());
      for (double c : {0.01, 3.7, 250.0}) {
        gamma_drift = std::max(gamma_drift, (gamma_hat(c * r.W_hat, pooled) - gamma_hat(r.W_hat, pooled))
                                                .cwiseAbs()
                                                .maxCoeff());
        weight_drift = std::max(weight_drift, (compute_weights(c * r.W_hat, pooled).weights() - r.weights)
                                                  .cwiseAbs()
                                                  .maxCoeff());
      }
    }
  }
  return {solves == 100 && residual <= 1e-9 && gamma_drift <= 1e-12 && weight_drift <= 1e-12,
          std::to_string(solves) + "/100 solves converged, max |Gamma - 1| " + fmt(residual) +
              " (<= 1e-9), gamma drift " + fmt(gamma_drift) + ", weight drift " + fmt(weight_drift) +
              " under W scaling (<= 1e-12)"};
}

Outcome rates() {
  ScenarioSpec spec = preset("b");
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = rate_check(spec, {500, 1000, 2000, 4000}, 200);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::size_t failed = 0;
  for (const auto& row : r.rows) failed += row.failed;
  const bool pass = r.omega_slope && r.deviation_slope && within(*r.omega_slope, -0.65, -0.35) &&
                    within(*r.deviation_slope, -0.65, -0.35) && secs < 600.0;
  return {pass, "Omega slope " + (r.omega_slope ? fmt(*r.omega_slope) : "none") +
                    ", sup-deviation slope " + (r.deviation_slope ? fmt(*r.deviation_slope) : "none") +
                    " (both in [-0.65, -0.35]), " + std::to_string(failed) + " failed replicates, " +
                    fmt(secs) + " s (< 600)"};
}

// Stratum 0 is 1{x0 in [0, 1]}, stratum 1 is unbiased but observed only in
// [2, 3]; no observation of stratum 1 falls in stratum 0's support until one
// is added.
Outcome connectivity() {
  const auto band = BiasingFunction::from_def(BiasDef::interval(0, 0.0, 1.0));
  const auto one = BiasingFunction::constant_one();
  ObservationList s0, s1;
  for (double x : {0.1, 0.35, 0.6, 0.9}) s0.push_back(Observation::unlabeled({x}));
  for (double x : {2.1, 2.4, 2.8}) s1.push_back(Observation::unlabeled({x}));

  auto check = [&](const ObservationList& second) {
    const auto pooled = evaluate_bias_matrix({s0, second}, {band, one});
    const bool sc = empirical_strong_connectivity(pooled).strongly_connected;
    bool non_unique = true;
    try {
      non_unique = solve_W(pooled).non_unique;
    } catch (const NotConverged& e) {
      non_unique = e.best().non_unique;
    }
    return std::pair{sc, non_unique};
  };
  const auto [sc_before, nu_before] = check(s1);
  ObservationList crossed = s1;
  crossed.push_back(Observation::unlabeled({0.5}));
  const auto [sc_after, nu_after] = check(crossed);
  const bool pass = !sc_before && nu_before && sc_after && !nu_after;
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  return {pass, "before: strongly_connected " + b(sc_before) + ", non_unique " + b(nu_before) +
                    "; after one cross-support point: strongly_connected " + b(sc_after) +
                    ", non_unique " + b(nu_after)};
}

Outcome determinism(const std::string& cli) {
  const fs::path root = fs::temp_directory_path() / ("debias_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);
  int codes[2];
  for (int i = 0; i < 2; ++i) {
    const fs::path dir = root / std::to_string(i);
    const std::string cmd = "\"" + cli + "\" simulate --preset b --runs 5 --seed 7 --out \"" +
                            dir.string() + "\" > \"" + (root / (std::to_string(i) + ".out")).string() +
                            "\" 2>&1";
    codes[i] = std::system(cmd.c_str());
  }
  bool same = codes[0] == 0 && codes[1] == 0;
  std::string files;
  for (const char* f : {"experiment.csv", "experiment_runs.csv"}) {
    const std::string a = slurp(root / "0" / f), b = slurp(root / "1" / f);
    same = same && !a.empty() && a == b;
    files += std::string(files.empty() ? "" : ", ") + f + " (" + std::to_string(a.size()) + " bytes)";
  }
  same = same && slurp(root / "0.out") == slurp(root / "1.out");
  fs::remove_all(root);
  return {same, "two runs of `simulate --preset b --runs 5 --seed 7`: " + files + " and stdout " +
                    (same ? "identical" : "differ")};
}

Outcome no_bias() {
  std::mt19937_64 rng(309);
  std::vector<ObservationList> samples(3);
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t i = 0; i < 20 + 15 * k; ++i) {
      const double a = ts::uniform(rng, -1, 1), b = ts::uniform(rng, -1, 1);
      samples[k].push_back(Observation::regression({a, b}, 0.5 + a - 2 * b + ts::uniform(rng, -0.2, 0.2)));
    }
  const std::vector<BiasingFunction> fns(3, BiasingFunction::constant_one());
  const auto pooled = evaluate_bias_matrix(samples, fns);
  const auto r = solve_W(pooled);
  const double n = static_cast<double>(pooled.size());
  const double weight_err = (r.weights.array() - 1.0 / n).abs().maxCoeff();
  const auto debiased = fit_weighted_least_squares(DebiasedDistribution(pooled.shared_observations(), r.weights));
  const auto standard = fit_weighted_least_squares(pooled_empirical_measure(pooled));
  const double coef_err = (debiased.coefficients - standard.coefficients).cwiseAbs().maxCoeff();
  return {weight_err <= 1e-12 && coef_err <= 1e-10,
          "max |weight - 1/n| " + fmt(weight_err) + ", max coefficient difference " + fmt(coef_err) +
              " (<= 1e-10)"};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: acceptance <path-to-debias_cli>\n";
    return 2;
  }
  const std::string cli = argv[1];
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"scenario b regression", scenario_b},
      {"scenario c regression", scenario_c},
      {"oracle equivalence", oracle_equivalence},
      {"derivative checks", derivatives},
      {"stationarity and homogeneity", stationarity},
      {"convergence rates", rates},
      {"uniqueness and connectivity", connectivity},
      {"determinism", [&] { return determinism(cli); }},
      {"no-bias degeneracy", no_bias},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << i + 1 << "] " << criteria[i].first << ": "
              << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
