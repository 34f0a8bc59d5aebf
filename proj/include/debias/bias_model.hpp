#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace debias {

// One data point Z. Features are the covariates; at most one of `target`
// (regression) and `label` (classification, in {-1, +1}) is set.
struct Observation {
  std::vector<double> features;
  std::optional<double> target;
  std::optional<int> label;

  std::size_t dim() const noexcept { return features.size(); }

  static Observation regression(std::vector<double> x, double y) {
    return Observation{std::move(x), y, std::nullopt};
  }
  static Observation classification(std::vector<double> x, int y) {
    return Observation{std::move(x), std::nullopt, y};
  }
  static Observation unlabeled(std::vector<double> x) {
    return Observation{std::move(x), std::nullopt, std::nullopt};
  }
};

using ObservationList = std::vector<Observation>;

enum class BiasKind { kIndicator, kCensorThreshold, kCustom };

// Declarative description of a biasing function, as found in config files
// and scenario presets. Only the fields relevant to `kind` are read.
struct BiasDef {
  enum class Kind {
    kNormBall,        // 1{||x|| <= r}
    kNormShell,       // 1{||x|| >= r}
    kComponentBand,   // 1{|x_j| < c}
    kComponentAbove,  // 1{x_j > c}
    kComponentBelow,  // 1{x_j < c}
    kInterval,        // 1{lo <= x_j <= hi}
    kCensor,          // 1{y <= tau}
    kWholeSpace,      // 1
  };
  Kind kind = Kind::kWholeSpace;
  double r = 0.0;
  std::size_t j = 0;
  double c = 0.0;
  double tau = 0.0;
  double lo = 0.0;
  double hi = 0.0;

  static BiasDef norm_ball(double r) { return with(Kind::kNormBall, [&](BiasDef& d) { d.r = r; }); }
  static BiasDef norm_shell(double r) { return with(Kind::kNormShell, [&](BiasDef& d) { d.r = r; }); }
  static BiasDef component_band(std::size_t j, double c) {
    return with(Kind::kComponentBand, [&](BiasDef& d) { d.j = j; d.c = c; });
  }
  static BiasDef component_above(std::size_t j, double c) {
    return with(Kind::kComponentAbove, [&](BiasDef& d) { d.j = j; d.c = c; });
  }
  static BiasDef component_below(std::size_t j, double c) {
    return with(Kind::kComponentBelow, [&](BiasDef& d) { d.j = j; d.c = c; });
  }
  static BiasDef interval(std::size_t j, double lo, double hi) {
    return with(Kind::kInterval, [&](BiasDef& d) { d.j = j; d.lo = lo; d.hi = hi; });
  }
  static BiasDef censor(double tau) { return with(Kind::kCensor, [&](BiasDef& d) { d.tau = tau; }); }
  static BiasDef whole_space() { return {}; }

  std::string describe() const;
  bool reads_component() const noexcept {
    return kind == Kind::kComponentBand || kind == Kind::kComponentAbove ||
           kind == Kind::kComponentBelow || kind == Kind::kInterval;
  }

 private:
  template <typename Fn>
  static BiasDef with(Kind kind, Fn&& set) {
    BiasDef d;
    d.kind = kind;
    set(d);
    return d;
  }
};

// Known biasing function omega_k: Z -> [0, M]. The sampling distribution of
// stratum k has density omega_k / Omega_k with respect to the test
// distribution. Range checks happen on evaluation, not at construction.
class BiasingFunction {
 public:
  using Evaluator = std::function<double(const Observation&)>;

  BiasingFunction(BiasKind kind, Evaluator evaluator, double upper_bound,
                  double declared_lower, std::string label);

  static BiasingFunction indicator(std::function<bool(const Observation&)> region,
                                   std::string label);
  // 1{target <= tau}; right-censoring at threshold tau.
  static BiasingFunction censor(double tau);
  static BiasingFunction constant_one();
  static BiasingFunction custom(Evaluator evaluator, double upper_bound,
                                double declared_lower = 0.0, std::string label = "custom");
  static BiasingFunction from_def(const BiasDef& def);

  // Unchecked evaluation.
  double operator()(const Observation& z) const { return evaluator_(z); }
  // Evaluation with the [0, M] range check (and {0,1} for indicator kinds).
  double evaluate_checked(const Observation& z) const;

  BiasKind kind() const noexcept { return kind_; }
  double upper_bound() const noexcept { return upper_bound_; }
  double declared_lower() const noexcept { return declared_lower_; }
  const std::string& label() const noexcept { return label_; }
  bool is_indicator() const noexcept { return kind_ != BiasKind::kCustom; }

 private:
  BiasKind kind_;
  Evaluator evaluator_;
  double upper_bound_;
  double declared_lower_;
  std::string label_;
};

// The K biased samples pooled in sample-major order, with the cached bias
// matrix B(row, l) = omega_l(Z_row). Immutable once built.
class PooledData {
 public:
  std::size_t num_strata() const noexcept { return sizes_.size(); }
  std::size_t size() const noexcept { return observations_->size(); }
  std::size_t dim() const noexcept { return dim_; }
  const std::vector<std::size_t>& sizes() const noexcept { return sizes_; }
  const Eigen::VectorXd& rates() const noexcept { return rates_; }
  const Eigen::MatrixXd& bias_matrix() const noexcept { return bias_; }
  const ObservationList& observations() const noexcept { return *observations_; }
  std::shared_ptr<const ObservationList> shared_observations() const noexcept {
    return observations_;
  }
  const std::vector<BiasingFunction>& functions() const noexcept { return functions_; }

  // First pooled row of sample k; offsets()[K] == n.
  const std::vector<std::size_t>& offsets() const noexcept { return offsets_; }
  std::size_t stratum_of(std::size_t row) const;
  // Largest declared upper bound M over the biasing functions.
  double max_upper_bound() const noexcept;

 private:
  friend PooledData evaluate_bias_matrix(const std::vector<ObservationList>&,
                                         const std::vector<BiasingFunction>&);
  PooledData() = default;

  std::shared_ptr<const ObservationList> observations_;
  std::vector<std::size_t> sizes_;
  std::vector<std::size_t> offsets_;
  Eigen::VectorXd rates_;
  Eigen::MatrixXd bias_;
  std::vector<BiasingFunction> functions_;
  std::size_t dim_ = 0;
};

// Builds the pooled dataset and its bias matrix. Throws DimensionMismatch,
// EvaluatorOutOfRange, OwnWeightZero or InvalidArgument.
PooledData evaluate_bias_matrix(const std::vector<ObservationList>& samples,
                                const std::vector<BiasingFunction>& fns);

// Discrete distribution over a fixed list of observations. Weights are
// nonnegative and sum to one (within 1e-12).
class DebiasedDistribution {
 public:
  DebiasedDistribution(std::shared_ptr<const ObservationList> observations,
                       Eigen::VectorXd weights);

  std::size_t size() const noexcept { return observations_->size(); }
  const ObservationList& observations() const noexcept { return *observations_; }
  std::shared_ptr<const ObservationList> shared_observations() const noexcept {
    return observations_;
  }
  const Eigen::VectorXd& weights() const noexcept { return weights_; }

  double expectation(const std::function<double(const Observation&)>& f) const;

 private:
  std::shared_ptr<const ObservationList> observations_;
  Eigen::VectorXd weights_;
};

// Raw pooled empirical measure: weight 1/n on every pooled observation.
DebiasedDistribution pooled_empirical_measure(const PooledData& pooled);

double euclidean_norm(const std::vector<double>& x);

}  // namespace debias
