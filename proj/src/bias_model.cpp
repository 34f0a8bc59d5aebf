#include "debias/bias_model.hpp"

#include "debias/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace debias {

double euclidean_norm(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

std::string BiasDef::describe() const {
  std::ostringstream os;
  switch (kind) {
    case Kind::kNormBall: os << "1{||x||<=" << r << "}"; break;
    case Kind::kNormShell: os << "1{||x||>=" << r << "}"; break;
    case Kind::kComponentBand: os << "1{|x" << j << "|<" << c << "}"; break;
    case Kind::kComponentAbove: os << "1{x" << j << ">" << c << "}"; break;
    case Kind::kComponentBelow: os << "1{x" << j << "<" << c << "}"; break;
    case Kind::kInterval: os << "1{" << lo << "<=x" << j << "<=" << hi << "}"; break;
    case Kind::kCensor: os << "1{y<=" << tau << "}"; break;
    case Kind::kWholeSpace: os << "1"; break;
  }
  return os.str();
}

BiasingFunction::BiasingFunction(BiasKind kind, Evaluator evaluator, double upper_bound,
                                 double declared_lower, std::string label)
    : kind_(kind),
      evaluator_(std::move(evaluator)),
      upper_bound_(upper_bound),
      declared_lower_(declared_lower),
      label_(std::move(label)) {
  if (!evaluator_) throw InvalidArgument("biasing function needs an evaluator");
  if (!(upper_bound_ > 0.0) || !std::isfinite(upper_bound_))
    throw InvalidArgument("biasing function upper bound must be positive and finite");
  if (!(declared_lower_ >= 0.0) || declared_lower_ > upper_bound_)
    throw InvalidArgument("biasing function lower bound must lie in [0, M]");
}

BiasingFunction BiasingFunction::indicator(std::function<bool(const Observation&)> region,
                                           std::string label) {
  return BiasingFunction(
      BiasKind::kIndicator,
      [region = std::move(region)](const Observation& z) { return region(z) ? 1.0 : 0.0; },
      1.0, 0.0, std::move(label));
}

BiasingFunction BiasingFunction::censor(double tau) {
  return BiasingFunction(
      BiasKind::kCensorThreshold,
      [tau](const Observation& z) -> double {
        if (!z.target) throw InvalidArgument("censoring biasing function needs a real target");
        return *z.target <= tau ? 1.0 : 0.0;
      },
      1.0, 0.0, BiasDef::censor(tau).describe());
}

BiasingFunction BiasingFunction::constant_one() {
  return BiasingFunction(
      BiasKind::kIndicator, [](const Observation&) { return 1.0; }, 1.0, 1.0, "1");
}

BiasingFunction BiasingFunction::custom(Evaluator evaluator, double upper_bound,
                                        double declared_lower, std::string label) {
  return BiasingFunction(BiasKind::kCustom, std::move(evaluator), upper_bound, declared_lower,
                         std::move(label));
}

namespace {

double component(const Observation& z, std::size_t j) {
  if (j >= z.features.size())
    throw DimensionMismatch("component index " + std::to_string(j) + " out of range for dimension " +
                            std::to_string(z.features.size()));
  return z.features[j];
}

}  // namespace

BiasingFunction BiasingFunction::from_def(const BiasDef& def) {
  using K = BiasDef::Kind;
  const std::string label = def.describe();
  switch (def.kind) {
    case K::kNormBall:
      return indicator([r = def.r](const Observation& z) { return euclidean_norm(z.features) <= r; },
                       label);
    case K::kNormShell:
      return indicator([r = def.r](const Observation& z) { return euclidean_norm(z.features) >= r; },
                       label);
    case K::kComponentBand:
      return indicator(
          [j = def.j, c = def.c](const Observation& z) { return std::abs(component(z, j)) < c; },
          label);
    case K::kComponentAbove:
      return indicator([j = def.j, c = def.c](const Observation& z) { return component(z, j) > c; },
                       label);
    case K::kComponentBelow:
      return indicator([j = def.j, c = def.c](const Observation& z) { return component(z, j) < c; },
                       label);
    case K::kInterval:
      return indicator(
          [j = def.j, lo = def.lo, hi = def.hi](const Observation& z) {
            const double v = component(z, j);
            return lo <= v && v <= hi;
          },
          label);
    case K::kCensor:
      return censor(def.tau);
    case K::kWholeSpace:
      return constant_one();
  }
  throw InvalidArgument("unknown biasing function kind");
}

double BiasingFunction::evaluate_checked(const Observation& z) const {
  const double w = evaluator_(z);
  if (!(w >= 0.0 && w <= upper_bound_)) {
    std::ostringstream os;
    os << "biasing function " << label_ << " returned " << w << ", outside [0, " << upper_bound_
       << "]";
    throw EvaluatorOutOfRange(os.str());
  }
  if (is_indicator() && w != 0.0 && w != 1.0) {
    std::ostringstream os;
    os << "indicator biasing function " << label_ << " returned " << w;
    throw EvaluatorOutOfRange(os.str());
  }
  return w;
}

std::size_t PooledData::stratum_of(std::size_t row) const {
  if (row >= size()) throw InvalidArgument("row index out of range");
  auto it = std::upper_bound(offsets_.begin(), offsets_.end(), row);
  return static_cast<std::size_t>(it - offsets_.begin()) - 1;
}

double PooledData::max_upper_bound() const noexcept {
  double m = 0.0;
  for (const auto& f : functions_) m = std::max(m, f.upper_bound());
  return m;
}

PooledData evaluate_bias_matrix(const std::vector<ObservationList>& samples,
                                const std::vector<BiasingFunction>& fns) {
  const std::size_t K = samples.size();
  if (K == 0) throw InvalidArgument("need at least one sample");
  if (fns.size() != K)
    throw InvalidArgument("got " + std::to_string(K) + " samples but " +
                          std::to_string(fns.size()) + " biasing functions");

  PooledData pooled;
  pooled.functions_ = fns;
  pooled.sizes_.reserve(K);
  pooled.offsets_.assign(K + 1, 0);

  auto obs = std::make_shared<ObservationList>();
  std::size_t n = 0;
  for (std::size_t k = 0; k < K; ++k) {
    if (samples[k].empty()) throw InvalidArgument("sample " + std::to_string(k) + " is empty");
    pooled.sizes_.push_back(samples[k].size());
    pooled.offsets_[k] = n;
    n += samples[k].size();
  }
  pooled.offsets_[K] = n;
  obs->reserve(n);

  const std::size_t d = samples.front().front().dim();
  for (std::size_t k = 0; k < K; ++k) {
    for (const auto& z : samples[k]) {
      if (z.dim() != d)
        throw DimensionMismatch("observation of dimension " + std::to_string(z.dim()) +
                                " in a dataset of dimension " + std::to_string(d));
      if (z.target && z.label)
        throw InvalidArgument("observation carries both a real target and a binary label");
      if (z.label && *z.label != 1 && *z.label != -1)
        throw InvalidArgument("binary labels must be -1 or +1");
      obs->push_back(z);
    }
  }
  pooled.dim_ = d;

  pooled.bias_.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(K));
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t row = pooled.offsets_[k]; row < pooled.offsets_[k + 1]; ++row) {
      const Observation& z = (*obs)[row];
      for (std::size_t l = 0; l < K; ++l)
        pooled.bias_(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(l)) =
            fns[l].evaluate_checked(z);
      if (pooled.bias_(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(k)) == 0.0)
        throw OwnWeightZero("observation " + std::to_string(row - pooled.offsets_[k]) +
                            " of sample " + std::to_string(k) +
                            " has zero weight under its own biasing function " +
                            fns[k].label());
    }
  }

  pooled.rates_.resize(static_cast<Eigen::Index>(K));
  for (std::size_t k = 0; k < K; ++k)
    pooled.rates_(static_cast<Eigen::Index>(k)) =
        static_cast<double>(pooled.sizes_[k]) / static_cast<double>(n);
  // Absorb rounding so the rates sum to one.
  Eigen::Index big = 0;
  pooled.rates_.maxCoeff(&big);
  pooled.rates_(big) += 1.0 - pooled.rates_.sum();

  pooled.observations_ = std::move(obs);
  return pooled;
}

DebiasedDistribution::DebiasedDistribution(std::shared_ptr<const ObservationList> observations,
                                           Eigen::VectorXd weights)
    : observations_(std::move(observations)), weights_(std::move(weights)) {
  if (!observations_) throw InvalidArgument("distribution needs observations");
  if (static_cast<std::size_t>(weights_.size()) != observations_->size())
    throw DimensionMismatch("weight vector length differs from observation count");
  if (weights_.size() == 0) throw InvalidArgument("distribution over an empty set");
  if ((weights_.array() < 0.0).any() || !weights_.allFinite())
    throw InvalidArgument("distribution weights must be finite and nonnegative");
  if (std::abs(weights_.sum() - 1.0) > 1e-12)
    throw InvalidArgument("distribution weights must sum to one");
}

double DebiasedDistribution::expectation(
    const std::function<double(const Observation&)>& f) const {
  double acc = 0.0;
  for (std::size_t i = 0; i < size(); ++i)
    acc += weights_(static_cast<Eigen::Index>(i)) * f((*observations_)[i]);
  return acc;
}

DebiasedDistribution pooled_empirical_measure(const PooledData& pooled) {
  const auto n = static_cast<Eigen::Index>(pooled.size());
  return DebiasedDistribution(pooled.shared_observations(),
                              Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n)));
}

}  // namespace debias
