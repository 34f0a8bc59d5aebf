#include "debias/errors.hpp"
#include "debias/scenario_lab.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace debias;
namespace ts = testing_support;

namespace {

double norm(const Observation& z) {
  double s = 0.0;
  for (double v : z.features) s += v * v;
  return std::sqrt(s);
}

ScenarioSpec small(ScenarioSpec s, std::size_t runs) {
  for (auto& n : s.sample_sizes) n = std::max<std::size_t>(n / 5, 20);
  s.test_size = 100;
  s.n_runs = runs;
  return s;
}

void check_reports_equal(const ExperimentReport& a, const ExperimentReport& b) {
  REQUIRE(a.cells.size() == b.cells.size());
  CHECK(a.run_indices == b.run_indices);
  for (std::size_t c = 0; c < a.cells.size(); ++c) {
    CHECK(a.cells[c].values == b.cells[c].values);
    CHECK(a.cells[c].mean == b.cells[c].mean);
  }
}

}  // namespace

TEST_CASE("presets") {
  for (const auto& name : preset_names()) {
    CAPTURE(name);
    const auto spec = preset(name);
    CHECK_NOTHROW(spec.validate());
    CHECK(spec.name == name);
    CHECK(spec.total_size() > 0);
  }
  CHECK_THROWS_AS(preset("zz"), UnknownPreset);

  const auto b = preset("b");
  CHECK(b.sample_sizes == std::vector<std::size_t>{900, 100});
  CHECK(b.whole_space_strata() == std::vector<std::size_t>{1});
  CHECK(b.dim() == 3);
  CHECK(preset("c").sample_sizes == std::vector<std::size_t>{500, 500});
  CHECK(preset("classif").task() == Task::kBinaryClassification);
}

TEST_CASE("spec validation") {
  auto s = preset("b");
  s.sample_sizes = {900};
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
  s = preset("b");
  s.sample_sizes[0] = 0;
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
  s = preset("b");
  s.biasing[0] = BiasDef::component_band(7, 0.1);
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
  s = preset("censor");
  s.label_threshold = 0.0;
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
}

TEST_CASE("generated strata respect their regions") {
  SUBCASE("norm ball") {
    const auto g = generate_scenario(preset("b"), 0);
    const auto& obs = g.pooled.observations();
    REQUIRE(obs.size() == 1000);
    for (std::size_t i = 0; i < 900; ++i) CHECK(norm(obs[i]) <= 0.8);
    std::size_t outside = 0;
    for (std::size_t i = 900; i < 1000; ++i) outside += norm(obs[i]) > 0.8;
    CHECK(outside > 50);
    CHECK(g.test.size() == 300);
    for (const auto& z : obs) CHECK(*z.target == doctest::Approx(norm(z)).epsilon(1e-15));
  }
  SUBCASE("component strata") {
    const auto g = generate_scenario(preset("l"), 3);
    const auto& obs = g.pooled.observations();
    const auto& off = g.pooled.offsets();
    for (std::size_t i = off[0]; i < off[1]; ++i) CHECK(std::abs(obs[i].features[0]) <= 0.1);
    for (std::size_t i = off[1]; i < off[2]; ++i) CHECK(obs[i].features[0] >= -0.15);
    for (std::size_t i = off[2]; i < off[3]; ++i) CHECK(obs[i].features[0] <= 0.15);
  }
  SUBCASE("censoring") {
    const auto g = generate_scenario(preset("censor"), 1);
    const auto& obs = g.pooled.observations();
    const auto& off = g.pooled.offsets();
    for (std::size_t i = off[0]; i < off[1]; ++i) CHECK(*obs[i].target <= 1.0);
    for (std::size_t i = off[1]; i < off[2]; ++i) CHECK(*obs[i].target <= 2.0);
  }
  SUBCASE("labels") {
    const auto g = generate_scenario(preset("classif"), 0);
    for (const auto& z : g.pooled.observations()) {
      REQUIRE(z.label.has_value());
      CHECK(*z.label == (norm(z) > 1.5 ? 1 : -1));
    }
  }
}

TEST_CASE("rejection stalls on a near-empty region") {
  ScenarioSpec s = preset("b");
  s.biasing[0] = BiasDef::component_above(0, 8.0);
  std::mt19937_64 rng(5);
  CHECK_THROWS_AS(draw_stratum(s, s.biasing_functions()[0], 10, rng), RejectionStall);
}

TEST_CASE("generation is deterministic") {
  const auto s = preset("c");
  const auto a = generate_scenario(s, 4);
  const auto b = generate_scenario(s, 4);
  const auto c = generate_scenario(s, 5);
  CHECK(a.pooled.bias_matrix() == b.pooled.bias_matrix());
  CHECK(a.pooled.observations().front().features == b.pooled.observations().front().features);
  CHECK(a.pooled.observations().front().features != c.pooled.observations().front().features);
  CHECK(replicate_seed(7, 0) != replicate_seed(7, 1));
  CHECK(replicate_seed(7, 0) != replicate_seed(8, 0));
}

TEST_CASE("experiments are reproducible across thread counts") {
  for (const char* name : {"b", "classif", "censor"}) {
    CAPTURE(name);
    auto s = small(preset(name), 6);
    s.seed = 99;
    const auto one = run_experiment(s, {}, 1);
    const auto four = run_experiment(s, {}, 4);
    check_reports_equal(one, four);
    check_reports_equal(one, run_experiment(s, {}, 1));
    CHECK(one.run_indices.size() + one.failures.size() == 6);
  }
}

TEST_CASE("experiment cells") {
  auto s = small(preset("b"), 4);
  const auto r = run_experiment(s, {}, 2);
  CHECK(r.scenario == "b");
  for (auto t : {Treatment::kStandard, Treatment::kDebiased, Treatment::kUnbiasedOnly}) {
    const auto* cell = r.find(Learner::kLinearRegression, t);
    REQUIRE(cell != nullptr);
    CHECK(cell->metric == "mse");
    CHECK(cell->values.size() == r.run_indices.size());
    double mean = 0.0;
    for (double v : cell->values) mean += v / static_cast<double>(cell->values.size());
    CHECK(cell->mean == doctest::Approx(mean).epsilon(1e-12));
  }
  // Without a whole-space stratum there is no unbiased-only treatment.
  const auto d = run_experiment(small(preset("d"), 2), {}, 1);
  CHECK(d.find(Learner::kLinearRegression, Treatment::kUnbiasedOnly) == nullptr);

  const auto c = run_experiment(small(preset("classif"), 2), {}, 1);
  const auto* acc = c.find(Learner::kLogisticRegression, Treatment::kDebiased);
  REQUIRE(acc != nullptr);
  CHECK(acc->metric == "accuracy");
  for (double v : acc->values) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("chi-square CDF matches simulation") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> g;
  const std::size_t n = 10'000'000;
  const std::array<double, 4> xs{0.25, 0.64, 2.0, 6.0};
  std::array<std::size_t, 4> hits{};
  for (std::size_t i = 0; i < n; ++i) {
    const double a = g(rng), b = g(rng), c = g(rng);
    const double r = a * a + b * b + c * c;
    for (std::size_t k = 0; k < xs.size(); ++k) hits[k] += r <= xs[k];
  }
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const double p = chi2_3_cdf(xs[k]);
    const double phat = static_cast<double>(hits[k]) / static_cast<double>(n);
    CHECK(std::abs(phat - p) <= 3.0 * std::sqrt(p * (1 - p) / static_cast<double>(n)));
  }
  CHECK(chi2_3_cdf(0.0) == 0.0);
  CHECK(chi2_3_cdf(1e3) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("closed-form stratum masses agree with simulation") {
  for (const char* name : {"a", "b", "g", "i", "l", "censor"}) {
    CAPTURE(name);
    const auto s = preset(name);
    const auto exact = closed_form_Omega(s);
    REQUIRE(exact.has_value());
    const std::size_t n = 1'000'000;
    const Eigen::VectorXd mc = monte_carlo_Omega(s, n, 3);
    for (Eigen::Index k = 0; k < mc.size(); ++k) {
      const double p = (*exact)(k);
      CHECK(std::abs(mc(k) - p) <= 4.0 * std::sqrt(p * (1 - p) / n) + 1e-12);
    }
  }
}

TEST_CASE("true risk of a constant predictor") {
  // E||x||^2 = 3 for a standard Gaussian in three dimensions and
  // E||x|| = 2 sqrt(2 / pi), so E(||x|| - c)^2 = 3 - 2 c E||x|| + c^2.
  const auto risk = true_risk_function(preset("b"));
  const double mean_norm = 2.0 * std::sqrt(2.0 / M_PI);
  for (double c : {0.0, 0.5, 1.5}) {
    const LinearModel m{Eigen::Vector4d(0, 0, 0, c), Task::kRegression};
    CHECK(risk(m) == doctest::Approx(3.0 - 2.0 * c * mean_norm + c * c).epsilon(1e-10));
  }
}

TEST_CASE("log-log slope") {
  const std::vector<double> x{1, 2, 4, 8};
  std::vector<double> y;
  for (double v : x) y.push_back(3.0 / std::sqrt(v));
  CHECK(*loglog_slope(x, y) == doctest::Approx(-0.5).epsilon(1e-12));
  y[2] = 0.0;
  CHECK_FALSE(loglog_slope(x, y).has_value());
}

TEST_CASE("scaled sizes keep proportions and total") {
  const auto s = preset("f");
  for (std::size_t n : {100u, 333u, 4000u}) {
    const auto sizes = scaled_sizes(s, n);
    CHECK(std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}) == n);
    CHECK(sizes[0] >= sizes[1]);
  }
}

TEST_CASE("rate check on a single unbiased sample is degenerate") {
  ScenarioSpec s = preset("b");
  s.biasing = {BiasDef::whole_space()};
  s.sample_sizes = {100};
  const auto r = rate_check(s, {100, 200}, 5, {}, 2);
  CHECK(r.omega_degenerate);
  CHECK_FALSE(r.omega_slope.has_value());
  for (const auto& row : r.rows) {
    CHECK(row.mean_omega_error == 0.0);
    CHECK(row.failed == 0);
  }
}

TEST_CASE("debiased deviation shrinks with the sample size") {
  ScenarioSpec s = preset("b");
  s.seed = 21;
  const auto r = rate_check(s, {1000, 4000}, 40, {}, 0);
  REQUIRE(r.rows.size() == 2);
  const double ratio = r.rows[0].mean_sup_deviation / r.rows[1].mean_sup_deviation;
  // Root-n behaviour predicts a ratio of 2.
  CHECK(ratio > 1.4);
  CHECK(ratio < 2.9);
}

TEST_CASE("quasi-newton converges quickly on large generated samples") {
  // Near the optimum the objective is flat to rounding; the solver must still
  // finish in a handful of iterations rather than creeping along.
  ScenarioSpec s = preset("b");
  s.sample_sizes = scaled_sizes(s, 4000);
  SolverConfig config;
  config.method = SolverMethod::kQuasiNewton;
  for (std::uint64_t r = 0; r < 10; ++r) {
    s.seed = replicate_seed(replicate_seed(0, 4000), r);
    const auto g = generate_scenario(s, 0);
    const auto sol = solve_W(g.pooled, config);
    CHECK(sol.converged);
    CHECK(sol.iterations < 50);
    CHECK(sol.gamma_residual.cwiseAbs().maxCoeff() <= config.grad_tol);
  }
}

TEST_CASE("debiasing does not help when the strata cover the space evenly") {
  auto s = preset("a");
  s.n_runs = 20;
  const auto r = run_experiment(s);
  const auto* st = r.find(Learner::kLinearRegression, Treatment::kStandard);
  const auto* db = r.find(Learner::kLinearRegression, Treatment::kDebiased);
  REQUIRE(st != nullptr);
  REQUIRE(db != nullptr);
  const double pooled_std = std::sqrt(0.5 * (st->std * st->std + db->std * db->std));
  CHECK(std::abs(db->mean - st->mean) <= 2.0 * pooled_std);
}

TEST_CASE("debiasing helps on the small-norm scenario") {
  auto s = preset("b");
  s.n_runs = 20;
  const auto r = run_experiment(s);
  CHECK(r.find(Learner::kLinearRegression, Treatment::kDebiased)->mean <
        r.find(Learner::kLinearRegression, Treatment::kStandard)->mean);
}
