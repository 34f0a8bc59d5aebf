#include "debias/scenario_lab.hpp"

#include "debias/errors.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <memory>
#include <numbers>
#include <numeric>
#include <thread>

namespace debias {

namespace {

constexpr std::size_t kRejectionWindow = 1u << 20;
constexpr double kMinAcceptanceRate = 1e-4;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Runs fn(i) for i in [0, count) on a small pool of workers.
template <typename Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, count));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

class BaseSampler {
 public:
  explicit BaseSampler(const ScenarioSpec& spec) : spec_(spec) {}

  Observation draw(std::mt19937_64& rng) {
    Observation z;
    if (spec_.base == BaseDistribution::kStandardGaussian3d) {
      z.features.resize(3);
      for (double& v : z.features) v = normal_(rng);
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, spec_.base_rows.size() - 1);
      const Observation& row = spec_.base_rows[pick(rng)];
      z.features = row.features;
      if (spec_.target == TargetKind::kSupplied) {
        z.target = row.target;
        z.label = row.label;
      }
    }
    switch (spec_.target) {
      case TargetKind::kNorm: z.target = euclidean_norm(z.features); break;
      case TargetKind::kComponent: z.target = z.features[spec_.target_component]; break;
      case TargetKind::kSupplied: break;
    }
    if (spec_.label_threshold) {
      if (!z.target) throw SchemaError("label threshold needs a real target");
      z.label = *z.target > *spec_.label_threshold ? 1 : -1;
      z.target.reset();
    }
    return z;
  }

 private:
  const ScenarioSpec& spec_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

ObservationList draw_stratum_with(BaseSampler& sampler, const BiasingFunction& fn,
                                  std::size_t count, std::mt19937_64& rng) {
  ObservationList out;
  out.reserve(count);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::size_t proposals = 0, accepted_in_window = 0;
  while (out.size() < count) {
    Observation z = sampler.draw(rng);
    ++proposals;
    const double w = fn.evaluate_checked(z);
    const bool accept = fn.is_indicator() ? w > 0.0 : unif(rng) * fn.upper_bound() < w;
    if (accept) {
      out.push_back(std::move(z));
      ++accepted_in_window;
    }
    if (proposals % kRejectionWindow == 0) {
      if (static_cast<double>(accepted_in_window) <
          kMinAcceptanceRate * static_cast<double>(kRejectionWindow))
        throw RejectionStall("acceptance rate below 1e-4 for region " + fn.label());
      accepted_in_window = 0;
    }
  }
  return out;
}

ScenarioSpec make_preset(std::string name, std::vector<BiasDef> defs,
                         std::vector<std::size_t> sizes, bool interpretive,
                         std::string description) {
  ScenarioSpec s;
  s.name = std::move(name);
  s.biasing = std::move(defs);
  s.sample_sizes = std::move(sizes);
  s.interpretive = interpretive;
  s.description = std::move(description);
  return s;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

}  // namespace

std::string to_string(BaseDistribution b) {
  return b == BaseDistribution::kStandardGaussian3d ? "standard-gaussian-3d" : "custom-csv";
}

std::string to_string(TargetKind t) {
  switch (t) {
    case TargetKind::kNorm: return "norm";
    case TargetKind::kComponent: return "component";
    case TargetKind::kSupplied: return "supplied";
  }
  return "unknown";
}

std::string to_string(Learner l) { return l == Learner::kLinearRegression ? "LR" : "LogReg"; }

std::string to_string(Treatment t) {
  switch (t) {
    case Treatment::kStandard: return "standard";
    case Treatment::kDebiased: return "debiased";
    case Treatment::kUnbiasedOnly: return "unbiased_only";
  }
  return "unknown";
}

BaseDistribution base_distribution_from_string(const std::string& s) {
  if (s == "standard-gaussian-3d" || s == "gaussian") return BaseDistribution::kStandardGaussian3d;
  if (s == "custom-csv" || s == "csv") return BaseDistribution::kCustomCsv;
  throw InvalidArgument("unknown base distribution '" + s + "'");
}

TargetKind target_kind_from_string(const std::string& s) {
  if (s == "norm") return TargetKind::kNorm;
  if (s == "component") return TargetKind::kComponent;
  if (s == "supplied") return TargetKind::kSupplied;
  throw InvalidArgument("unknown target kind '" + s + "'");
}

Learner learner_from_string(const std::string& s) {
  if (s == "LR" || s == "lr") return Learner::kLinearRegression;
  if (s == "LogReg" || s == "logreg") return Learner::kLogisticRegression;
  throw InvalidArgument("unknown learner '" + s + "'");
}

void ScenarioSpec::validate() const {
  if (biasing.empty()) throw InvalidArgument("scenario needs at least one stratum");
  if (sample_sizes.size() != biasing.size())
    throw InvalidArgument("scenario has " + std::to_string(biasing.size()) + " strata but " +
                          std::to_string(sample_sizes.size()) + " sample sizes");
  for (auto s : sample_sizes)
    if (s == 0) throw InvalidArgument("sample sizes must be positive");
  if (test_size == 0) throw InvalidArgument("test size must be positive");
  if (n_runs == 0) throw InvalidArgument("n_runs must be positive");
  if (base == BaseDistribution::kCustomCsv && base_rows.empty())
    throw InvalidArgument("custom base distribution has no rows");
  if (base == BaseDistribution::kStandardGaussian3d && target == TargetKind::kSupplied)
    throw InvalidArgument("supplied targets need a custom base distribution");
  if (target == TargetKind::kComponent && target_component >= dim())
    throw InvalidArgument("target component out of range");
  for (const auto& def : biasing) {
    if (def.kind == BiasDef::Kind::kCensor && label_threshold)
      throw InvalidArgument("censoring reads the real target, which a label threshold removes");
    if (def.reads_component() && def.j >= dim()) throw InvalidArgument("biasing component out of range");
  }
  if (learners.empty()) throw InvalidArgument("scenario needs at least one learner");
  for (Learner l : learners) {
    if (l == Learner::kLinearRegression && task() != Task::kRegression)
      throw TaskMismatch("LR needs a real target");
    if (l == Learner::kLogisticRegression && task() != Task::kBinaryClassification)
      throw TaskMismatch("LogReg needs binary labels (set a label threshold)");
  }
}

std::size_t ScenarioSpec::total_size() const {
  return std::accumulate(sample_sizes.begin(), sample_sizes.end(), std::size_t{0});
}

std::size_t ScenarioSpec::dim() const {
  if (base == BaseDistribution::kStandardGaussian3d) return 3;
  return base_rows.empty() ? 0 : base_rows.front().dim();
}

std::vector<BiasingFunction> ScenarioSpec::biasing_functions() const {
  std::vector<BiasingFunction> fns;
  fns.reserve(biasing.size());
  for (const auto& def : biasing) fns.push_back(BiasingFunction::from_def(def));
  return fns;
}

std::vector<std::size_t> ScenarioSpec::whole_space_strata() const {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < biasing.size(); ++k)
    if (biasing[k].kind == BiasDef::Kind::kWholeSpace) out.push_back(k);
  return out;
}

ScenarioSpec preset(const std::string& name) {
  using B = BiasDef;
  if (name == "a")
    return make_preset("a", {B::norm_ball(1.6), B::norm_shell(1.4)}, {500, 500}, false,
                       "two overlapping norm strata of roughly equal mass, equal sizes");
  if (name == "b")
    return make_preset("b", {B::norm_ball(0.8), B::whole_space()}, {900, 100}, false,
                       "90/10 split between a small-norm ball and an unbiased sample");
  if (name == "c")
    return make_preset("c", {B::norm_ball(0.8), B::whole_space()}, {500, 500}, false,
                       "50/50 split between a small-norm ball and an unbiased sample");
  if (name == "d")
    return make_preset("d", {B::norm_ball(0.8), B::norm_shell(0.5)}, {500, 500}, false,
                       "small-norm ball against a large-norm shell, sizes as in c");
  if (name == "e")
    return make_preset("e", {B::norm_ball(0.8), B::norm_shell(0.5)}, {100, 900}, true,
                       "small-norm ball against a large-norm shell, few small-norm points");
  if (name == "f")
    return make_preset("f", {B::norm_ball(0.8), B::norm_shell(0.5), B::whole_space()},
                       {500, 250, 250}, true,
                       "small-norm ball, large-norm shell and an unbiased sample");
  if (name == "g")
    return make_preset("g", {B::component_band(0, 0.1), B::whole_space()}, {900, 100}, false,
                       "90/10 split between the band |x0|<0.1 and an unbiased sample");
  if (name == "h")
    return make_preset("h", {B::component_band(0, 0.1), B::whole_space()}, {500, 500}, false,
                       "50/50 split between the band |x0|<0.1 and an unbiased sample");
  if (name == "i")
    return make_preset("i", {B::component_above(0, 1.5), B::whole_space()}, {500, 500}, true,
                       "tail x0>1.5 against an unbiased sample");
  if (name == "j")
    return make_preset("j",
                       {B::component_band(0, 0.1), B::component_above(0, -0.15),
                        B::component_below(0, 0.15)},
                       {100, 450, 450}, true,
                       "three overlapping x0 strata in roughly their natural proportions");
  if (name == "k")
    return make_preset("k",
                       {B::component_band(0, 0.1), B::component_above(0, -0.15),
                        B::component_below(0, 0.15)},
                       {500, 250, 250}, true,
                       "three overlapping x0 strata, band oversampled");
  if (name == "l")
    return make_preset("l",
                       {B::component_band(0, 0.1), B::component_above(0, -0.15),
                        B::component_below(0, 0.15), B::whole_space()},
                       {400, 200, 200, 200}, true,
                       "four strata: band, two half-lines and an unbiased sample");
  if (name == "censor")
    return make_preset("censor", {B::censor(1.0), B::censor(2.0), B::whole_space()},
                       {400, 300, 300}, true,
                       "right-censored targets at thresholds 1 and 2 plus an uncensored sample");
  if (name == "classif") {
    ScenarioSpec s = make_preset("classif", {B::norm_shell(1.4), B::whole_space()}, {800, 200},
                                 true,
                                 "label 1{||x||>1.5}; large-norm stratum oversampled");
    s.label_threshold = 1.5;
    s.learners = {Learner::kLogisticRegression};
    return s;
  }
  throw UnknownPreset("unknown scenario preset '" + name + "'");
}

std::vector<std::string> preset_names() {
  return {"a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k", "l", "censor", "classif"};
}

std::uint64_t replicate_seed(std::uint64_t seed, std::uint64_t run_index) {
  return splitmix64(splitmix64(seed) ^ run_index);
}

Observation draw_base(const ScenarioSpec& spec, std::mt19937_64& rng) {
  BaseSampler sampler(spec);
  return sampler.draw(rng);
}

ObservationList draw_stratum(const ScenarioSpec& spec, const BiasingFunction& fn,
                             std::size_t count, std::mt19937_64& rng) {
  BaseSampler sampler(spec);
  return draw_stratum_with(sampler, fn, count, rng);
}

namespace {

std::vector<ObservationList> draw_strata(const std::vector<BiasingFunction>& fns,
                                         const std::vector<std::size_t>& sizes,
                                         BaseSampler& sampler, std::mt19937_64& rng) {
  std::vector<ObservationList> samples;
  samples.reserve(fns.size());
  for (std::size_t k = 0; k < fns.size(); ++k)
    samples.push_back(draw_stratum_with(sampler, fns[k], sizes[k], rng));
  return samples;
}

}  // namespace

GeneratedScenario generate_scenario(const ScenarioSpec& spec, std::size_t run_index) {
  spec.validate();
  std::mt19937_64 rng(replicate_seed(spec.seed, run_index));
  BaseSampler sampler(spec);
  const auto fns = spec.biasing_functions();
  auto samples = draw_strata(fns, spec.sample_sizes, sampler, rng);
  ObservationList test;
  test.reserve(spec.test_size);
  for (std::size_t i = 0; i < spec.test_size; ++i) test.push_back(sampler.draw(rng));
  return {evaluate_bias_matrix(samples, fns), std::move(test)};
}

const CellSummary* ExperimentReport::find(Learner l, Treatment t) const {
  for (const auto& c : cells)
    if (c.learner == l && c.treatment == t) return &c;
  return nullptr;
}

ExperimentReport run_experiment(const ScenarioSpec& spec, const SolverConfig& solver,
                                unsigned threads) {
  spec.validate();
  const auto whole = spec.whole_space_strata();
  std::vector<Treatment> treatments = {Treatment::kStandard, Treatment::kDebiased};
  if (!whole.empty()) treatments.push_back(Treatment::kUnbiasedOnly);

  struct Outcome {
    bool ok = false;
    std::string error;
    std::vector<double> values;  // learner-major, treatment-minor
  };
  std::vector<Outcome> outcomes(spec.n_runs);

  parallel_for(spec.n_runs, threads, [&](std::size_t run) {
    Outcome& out = outcomes[run];
    try {
      const GeneratedScenario gen = generate_scenario(spec, run);
      const PooledData& pooled = gen.pooled;
      const SolverResult sol = solve_W(pooled, solver);
      const auto n = static_cast<Eigen::Index>(pooled.size());
      const ObservationList& obs = pooled.observations();

      ObservationList unbiased;
      for (std::size_t k : whole)
        for (std::size_t row = pooled.offsets()[k]; row < pooled.offsets()[k + 1]; ++row)
          unbiased.push_back(obs[row]);

      for (Learner learner : spec.learners) {
        auto fit = [&](std::span<const Observation> data, const Eigen::VectorXd& w) {
          return learner == Learner::kLinearRegression ? fit_weighted_least_squares(data, w)
                                                       : fit_weighted_logistic(data, w);
        };
        auto score = [&](const LinearModel& m) {
          if (learner == Learner::kLinearRegression)
            return mean_loss(m, gen.test, LossSpec::squared_error());
          return 1.0 - mean_loss(m, gen.test, LossSpec::zero_one());
        };
        for (Treatment t : treatments) {
          LinearModel model;
          switch (t) {
            case Treatment::kStandard:
              model = fit(obs, Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n)));
              break;
            case Treatment::kDebiased:
              model = fit(obs, sol.weights);
              break;
            case Treatment::kUnbiasedOnly: {
              const auto m = static_cast<Eigen::Index>(unbiased.size());
              model = fit(unbiased, Eigen::VectorXd::Constant(m, 1.0 / static_cast<double>(m)));
              break;
            }
          }
          out.values.push_back(score(model));
        }
      }
      out.ok = true;
    } catch (const std::exception& e) {
      out.ok = false;
      out.values.clear();
      out.error = e.what();
    }
  });

  ExperimentReport report;
  report.scenario = spec.name;
  report.n_runs = spec.n_runs;
  for (Learner learner : spec.learners)
    for (Treatment t : treatments)
      report.cells.push_back(
          {learner, t, learner == Learner::kLinearRegression ? "mse" : "accuracy", {}, 0.0, 0.0});

  for (std::size_t run = 0; run < spec.n_runs; ++run) {
    const Outcome& o = outcomes[run];
    if (!o.ok) {
      report.failures.emplace_back(run, o.error);
      continue;
    }
    report.run_indices.push_back(run);
    for (std::size_t c = 0; c < report.cells.size(); ++c)
      report.cells[c].values.push_back(o.values[c]);
  }
  for (auto& c : report.cells) {
    c.mean = mean_of(c.values);
    c.std = sample_std(c.values);
  }
  return report;
}

double chi2_3_cdf(double x) {
  if (x <= 0.0) return 0.0;
  return std::erf(std::sqrt(x / 2.0)) - std::sqrt(2.0 * x / std::numbers::pi) * std::exp(-x / 2.0);
}

std::optional<Eigen::VectorXd> closed_form_Omega(const ScenarioSpec& spec) {
  const auto K = static_cast<Eigen::Index>(spec.num_strata());
  Eigen::VectorXd omega(K);
  if (spec.base == BaseDistribution::kCustomCsv) {
    // The base distribution is the empirical one: Omega is an exact average.
    const auto fns = spec.biasing_functions();
    for (Eigen::Index k = 0; k < K; ++k) {
      double acc = 0.0;
      for (const auto& row : spec.base_rows) {
        Observation z = row;
        if (spec.target == TargetKind::kNorm) z.target = euclidean_norm(z.features);
        if (spec.target == TargetKind::kComponent) z.target = z.features[spec.target_component];
        if (spec.label_threshold) {
          z.label = z.target && *z.target > *spec.label_threshold ? 1 : -1;
          z.target.reset();
        }
        acc += fns[static_cast<std::size_t>(k)].evaluate_checked(z);
      }
      omega(k) = acc / static_cast<double>(spec.base_rows.size());
    }
    return omega;
  }

  using Kd = BiasDef::Kind;
  for (Eigen::Index k = 0; k < K; ++k) {
    const BiasDef& d = spec.biasing[static_cast<std::size_t>(k)];
    switch (d.kind) {
      case Kd::kNormBall: omega(k) = chi2_3_cdf(d.r * d.r); break;
      case Kd::kNormShell: omega(k) = 1.0 - chi2_3_cdf(d.r * d.r); break;
      case Kd::kComponentBand: omega(k) = std::erf(d.c / std::numbers::sqrt2); break;
      case Kd::kComponentAbove: omega(k) = 1.0 - std_normal_cdf(d.c); break;
      case Kd::kComponentBelow: omega(k) = std_normal_cdf(d.c); break;
      case Kd::kInterval:
        omega(k) = d.hi >= d.lo ? std_normal_cdf(d.hi) - std_normal_cdf(d.lo) : 0.0;
        break;
      case Kd::kWholeSpace: omega(k) = 1.0; break;
      case Kd::kCensor:
        if (spec.target == TargetKind::kNorm) {
          omega(k) = d.tau > 0.0 ? chi2_3_cdf(d.tau * d.tau) : 0.0;
        } else if (spec.target == TargetKind::kComponent) {
          omega(k) = std_normal_cdf(d.tau);
        } else {
          return std::nullopt;
        }
        break;
    }
  }
  return omega;
}

Eigen::VectorXd monte_carlo_Omega(const ScenarioSpec& spec, std::size_t samples,
                                  std::uint64_t seed) {
  if (samples == 0) throw InvalidArgument("Monte Carlo sample count must be positive");
  const auto fns = spec.biasing_functions();
  BaseSampler sampler(spec);
  std::mt19937_64 rng(seed);
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(fns.size()));
  for (std::size_t i = 0; i < samples; ++i) {
    const Observation z = sampler.draw(rng);
    for (std::size_t k = 0; k < fns.size(); ++k)
      acc(static_cast<Eigen::Index>(k)) += fns[k].evaluate_checked(z);
  }
  return acc / static_cast<double>(samples);
}

Eigen::VectorXd true_Omega(const ScenarioSpec& spec, std::size_t mc_samples) {
  if (auto closed = closed_form_Omega(spec)) return *closed;
  return monte_carlo_Omega(spec, mc_samples, replicate_seed(spec.seed, 0xA11CE));
}

std::function<double(const LinearModel&)> true_risk_function(const ScenarioSpec& spec,
                                                             std::size_t mc_samples) {
  if (spec.base == BaseDistribution::kStandardGaussian3d && !spec.label_threshold) {
    if (spec.target == TargetKind::kNorm) {
      // E(||x|| - b^T x - c)^2 = 3 + |b|^2 + c^2 - 2 c E||x||, E||x|| = 2 sqrt(2/pi).
      const double mean_norm = 2.0 * std::sqrt(2.0 / std::numbers::pi);
      return [mean_norm](const LinearModel& m) {
        const Eigen::Index d = m.coefficients.size() - 1;
        const double c = m.intercept();
        return 3.0 + m.coefficients.head(d).squaredNorm() + c * c - 2.0 * c * mean_norm;
      };
    }
    if (spec.target == TargetKind::kComponent) {
      const auto j = static_cast<Eigen::Index>(spec.target_component);
      return [j](const LinearModel& m) {
        const Eigen::Index d = m.coefficients.size() - 1;
        Eigen::VectorXd diff = m.coefficients.head(d);
        diff(j) -= 1.0;
        const double c = m.intercept();
        return diff.squaredNorm() + c * c;
      };
    }
  }
  auto reference = std::make_shared<ObservationList>();
  reference->reserve(mc_samples);
  BaseSampler sampler(spec);
  std::mt19937_64 rng(replicate_seed(spec.seed, 0xBEEF));
  for (std::size_t i = 0; i < mc_samples; ++i) reference->push_back(sampler.draw(rng));
  const LossSpec loss = spec.label_threshold ? LossSpec::zero_one() : LossSpec::squared_error();
  return [reference, loss](const LinearModel& m) { return mean_loss(m, *reference, loss); };
}

std::vector<LinearModel> default_theta_grid(std::size_t dim, Task task) {
  std::vector<LinearModel> grid;
  for (double intercept : {0.5, 1.0, 1.5, 2.0}) {
    for (double slope : {-0.5, 0.0, 0.25, 0.5}) {
      LinearModel m;
      m.task = task;
      m.coefficients = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim + 1));
      if (dim > 0) m.coefficients(0) = slope;
      m.coefficients(static_cast<Eigen::Index>(dim)) = intercept;
      grid.push_back(std::move(m));
    }
  }
  return grid;
}

std::optional<double> loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) return std::nullopt;
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0) || !std::isfinite(y[i])) return std::nullopt;
    lx.push_back(std::log(x[i]));
    ly.push_back(std::log(y[i]));
  }
  const double mx = mean_of(lx), my = mean_of(ly);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxy += (lx[i] - mx) * (ly[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
  }
  if (sxx == 0.0) return std::nullopt;
  return sxy / sxx;
}

std::vector<std::size_t> scaled_sizes(const ScenarioSpec& spec, std::size_t n) {
  const double total = static_cast<double>(spec.total_size());
  std::vector<std::size_t> sizes;
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < spec.sample_sizes.size(); ++k) {
    const double share = static_cast<double>(spec.sample_sizes[k]) / total;
    auto s = static_cast<std::size_t>(std::llround(share * static_cast<double>(n)));
    sizes.push_back(std::max<std::size_t>(s, 1));
    assigned += sizes.back();
  }
  // Put the rounding remainder on the largest stratum.
  auto big = std::max_element(sizes.begin(), sizes.end());
  if (assigned > n && *big > assigned - n) *big -= assigned - n;
  else if (assigned < n) *big += n - assigned;
  return sizes;
}

RateCheckResult rate_check(const ScenarioSpec& spec_template,
                           const std::vector<std::size_t>& n_grid, std::size_t replicates,
                           const SolverConfig& solver, unsigned threads) {
  spec_template.validate();
  if (n_grid.empty()) throw InvalidArgument("rate check needs a non-empty n grid");
  if (replicates == 0) throw InvalidArgument("rate check needs at least one replicate");

  const Eigen::VectorXd omega = true_Omega(spec_template);
  const auto risk = true_risk_function(spec_template);
  const auto grid = default_theta_grid(spec_template.dim(), spec_template.task());
  const LossSpec loss =
      spec_template.label_threshold ? LossSpec::zero_one() : LossSpec::squared_error();
  const auto fns = spec_template.biasing_functions();

  RateCheckResult result;
  bool omega_exact = true;
  for (std::size_t n : n_grid) {
    const auto sizes = scaled_sizes(spec_template, n);
    struct Rep {
      bool ok = false;
      double omega_err = 0.0;
      double deviation = 0.0;
    };
    std::vector<Rep> reps(replicates);
    parallel_for(replicates, threads, [&](std::size_t r) {
      try {
        std::mt19937_64 rng(replicate_seed(replicate_seed(spec_template.seed, n), r));
        BaseSampler sampler(spec_template);
        auto samples = draw_strata(fns, sizes, sampler, rng);
        const PooledData pooled = evaluate_bias_matrix(samples, fns);
        const SolverResult sol = solve_W(pooled, solver);
        const DebiasedDistribution dist(pooled.shared_observations(), sol.weights);
        reps[r].omega_err = (sol.Omega_hat - omega).norm();
        reps[r].deviation = sup_deviation(dist, risk, grid, loss);
        reps[r].ok = true;
      } catch (const Error&) {
        reps[r].ok = false;
      }
    });

    RateCheckRow row;
    row.n = n;
    double se = 0.0, sd = 0.0;
    for (const Rep& rep : reps) {
      if (!rep.ok) {
        ++row.failed;
        continue;
      }
      ++row.replicates;
      se += rep.omega_err;
      sd += rep.deviation;
      if (rep.omega_err != 0.0) omega_exact = false;
    }
    if (row.replicates > 0) {
      row.mean_omega_error = se / static_cast<double>(row.replicates);
      row.mean_sup_deviation = sd / static_cast<double>(row.replicates);
    }
    result.rows.push_back(row);
  }

  std::vector<double> ns, eo, ed;
  for (const auto& row : result.rows) {
    ns.push_back(static_cast<double>(row.n));
    eo.push_back(row.mean_omega_error);
    ed.push_back(row.mean_sup_deviation);
  }
  result.omega_degenerate = omega_exact;
  if (!omega_exact) result.omega_slope = loglog_slope(ns, eo);
  result.deviation_slope = loglog_slope(ns, ed);
  return result;
}

}  // namespace debias
