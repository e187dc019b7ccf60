// Domain types of the diagnosis-fusion network: Beta priors, hyper-parameters,
// learnable parameters, subject records, and the joint log-likelihood.
//
// The network: risk factors Y drive the hidden diagnosis D through a logistic
// link; D drives the test outcome T, the symptomaticity S, and, when S = 1,
// the K binary symptoms X. Every rate carries a Beta prior; beta carries an
// isotropic Gaussian prior.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace stemfuse {

inline constexpr double kProbFloor = 1e-12;

/// Clamp a probability to [1e-12, 1 - 1e-12] before it is logged.
[[nodiscard]] inline double clamp_prob(double p) noexcept {
  return std::clamp(p, kProbFloor, 1.0 - kProbFloor);
}

[[nodiscard]] inline double sigmoid(double z) noexcept {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// log g(z) and log(1 - g(z)) without cancellation.
[[nodiscard]] inline double log_sigmoid(double z) noexcept {
  return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}
[[nodiscard]] inline double log_one_minus_sigmoid(double z) noexcept { return log_sigmoid(-z); }

class InfeasibleMoments : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct BetaPrior {
  double alpha = 0.5;
  double beta = 0.5;

  [[nodiscard]] bool valid() const noexcept {
    return std::isfinite(alpha) && std::isfinite(beta) && alpha > 0.0 && beta > 0.0;
  }
  [[nodiscard]] bool has_mode() const noexcept { return alpha > 1.0 && beta > 1.0; }
  [[nodiscard]] double mean() const noexcept { return alpha / (alpha + beta); }
  [[nodiscard]] double variance() const noexcept {
    const double s = alpha + beta;
    return alpha * beta / (s * s * (s + 1.0));
  }
  [[nodiscard]] double mode() const noexcept { return (alpha - 1.0) / (alpha + beta - 2.0); }
  /// Mode when it exists, otherwise the mean.
  [[nodiscard]] double point() const noexcept { return has_mode() ? mode() : mean(); }
  /// Unnormalized log density (alpha-1) log p + (beta-1) log(1-p).
  [[nodiscard]] double log_kernel(double p) const noexcept {
    const double q = clamp_prob(p);
    return (alpha - 1.0) * std::log(q) + (beta - 1.0) * std::log1p(-q);
  }

  friend bool operator==(const BetaPrior&, const BetaPrior&) = default;
};

/// Beta prior whose mean and variance equal the given moments.
[[nodiscard]] inline BetaPrior moment_match_beta(double mean, double variance) {
  if (!(mean > 0.0 && mean < 1.0)) throw InfeasibleMoments("moment_match_beta: mean must lie in (0, 1)");
  if (!(variance > 0.0)) throw InfeasibleMoments("moment_match_beta: variance must be positive");
  const double bound = mean * (1.0 - mean);
  if (variance >= bound) {
    throw InfeasibleMoments("moment_match_beta: variance " + std::to_string(variance) +
                            " must be below mean*(1-mean) = " + std::to_string(bound));
  }
  const double c = bound / variance - 1.0;
  return {mean * c, (1.0 - mean) * c};
}

[[nodiscard]] constexpr BetaPrior noninformative_prior() noexcept { return {0.5, 0.5}; }

struct HyperParams {
  BetaPrior prior_x = noninformative_prior();
  BetaPrior prior_y = noninformative_prior();
  BetaPrior prior_p0 = noninformative_prior();
  BetaPrior prior_p1 = noninformative_prior();
  std::vector<BetaPrior> prior_s0;
  std::vector<BetaPrior> prior_s1;
  double sigma_beta = 1.0;
  double sigma = 1.0;
  BetaPrior prior_imputed_x{2.0, 2.0};
  BetaPrior prior_imputed_y{2.0, 2.0};

  [[nodiscard]] std::size_t k_symptoms() const noexcept { return prior_s0.size(); }

  /// Hyper-parameters for K symptoms with every prior non-informative.
  [[nodiscard]] static HyperParams noninformative(std::size_t k) {
    HyperParams h;
    h.prior_s0.assign(k, noninformative_prior());
    h.prior_s1.assign(k, noninformative_prior());
    return h;
  }

  void validate() const {
    const auto check = [](const BetaPrior& b, const char* name) {
      if (!b.valid()) throw std::invalid_argument(std::string("invalid Beta prior for ") + name);
    };
    check(prior_x, "x");
    check(prior_y, "y");
    check(prior_p0, "p0");
    check(prior_p1, "p1");
    check(prior_imputed_x, "imputed x");
    check(prior_imputed_y, "imputed y");
    if (prior_s0.size() != prior_s1.size()) throw std::invalid_argument("s0/s1 prior arity mismatch");
    for (const auto& b : prior_s0) check(b, "s0");
    for (const auto& b : prior_s1) check(b, "s1");
    if (!(sigma_beta > 0.0)) throw std::invalid_argument("sigma_beta must be positive");
    if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
  }
};

/// Sensitivity / false-positive-rate pair of a test accuracy class.
struct TestRates {
  double x = 0.5;
  double y = 0.5;
  friend bool operator==(const TestRates&, const TestRates&) = default;
};

struct Params {
  double x = 0.5;   // sensitivity P(T=1 | D=1)
  double y = 0.5;   // false-positive rate P(T=1 | D=0)
  double p0 = 0.5;  // P(S=1 | D=0)
  double p1 = 0.5;  // P(S=1 | D=1)
  std::vector<double> s0;  // P(X_k=1 | S=1, D=0)
  std::vector<double> s1;  // P(X_k=1 | S=1, D=1)
  std::vector<double> beta;
  std::optional<TestRates> imputed;  // accuracy class for imputed test outcomes

  [[nodiscard]] std::size_t k_symptoms() const noexcept { return s0.size(); }

  [[nodiscard]] bool valid() const noexcept {
    const auto in_open = [](double p) { return p > 0.0 && p < 1.0; };
    if (!in_open(x) || !in_open(y) || !in_open(p0) || !in_open(p1)) return false;
    if (s0.size() != s1.size()) return false;
    if (!std::all_of(s0.begin(), s0.end(), in_open) || !std::all_of(s1.begin(), s1.end(), in_open)) return false;
    if (!std::all_of(beta.begin(), beta.end(), [](double b) { return std::isfinite(b); })) return false;
    if (imputed && (!in_open(imputed->x) || !in_open(imputed->y))) return false;
    return true;
  }

  friend bool operator==(const Params&, const Params&) = default;
};

struct SubjectRecord {
  std::string id;
  std::optional<int> t;  // test outcome; nullopt when missing
  int s = 0;
  std::vector<int> x;
  std::vector<double> y;

  friend bool operator==(const SubjectRecord&, const SubjectRecord&) = default;
};

struct Dataset {
  std::vector<SubjectRecord> records;
  std::size_t k_symptoms = 0;
  std::size_t m_factors = 0;

  [[nodiscard]] std::size_t size() const noexcept { return records.size(); }
  [[nodiscard]] bool any_missing_t() const noexcept {
    return std::any_of(records.begin(), records.end(), [](const SubjectRecord& r) { return !r.t; });
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct Violation {
  std::string record_id;
  std::size_t index = 0;
  std::string rule;
};

namespace rules {
inline constexpr const char* kSymptomWhileAsymptomatic = "symptom set while asymptomatic";
inline constexpr const char* kSymptomArity = "symptom arity";
inline constexpr const char* kFactorArity = "risk factor arity";
inline constexpr const char* kNonBinary = "non-binary value";
inline constexpr const char* kNonFinite = "non-finite risk factor";
inline constexpr const char* kDuplicateId = "duplicate id";
}  // namespace rules

/// Every broken record invariant, in record order. Empty iff the dataset is valid.
[[nodiscard]] inline std::vector<Violation> validate_dataset(const Dataset& d) {
  std::vector<Violation> out;
  std::set<std::string> seen;
  const auto binary = [](int v) { return v == 0 || v == 1; };
  for (std::size_t i = 0; i < d.records.size(); ++i) {
    const auto& r = d.records[i];
    const auto add = [&](const char* rule) { out.push_back({r.id, i, rule}); };
    if (!seen.insert(r.id).second) add(rules::kDuplicateId);
    if (r.x.size() != d.k_symptoms) add(rules::kSymptomArity);
    if (r.y.size() != d.m_factors) add(rules::kFactorArity);
    if (!binary(r.s) || (r.t && !binary(*r.t)) || !std::all_of(r.x.begin(), r.x.end(), binary)) {
      add(rules::kNonBinary);
    }
    if (r.s == 0 && std::any_of(r.x.begin(), r.x.end(), [](int v) { return v != 0; })) {
      add(rules::kSymptomWhileAsymptomatic);
    }
    if (!std::all_of(r.y.begin(), r.y.end(), [](double v) { return std::isfinite(v); })) add(rules::kNonFinite);
  }
  return out;
}

/// Linear predictor Y*beta, with a leading 1 when beta has one more entry than Y.
[[nodiscard]] inline double linear_predictor(std::span<const double> y, std::span<const double> beta) {
  if (beta.empty()) return 0.0;
  std::size_t offset = 0;
  double z = 0.0;
  if (beta.size() == y.size() + 1) {
    z = beta[0];
    offset = 1;
  } else if (beta.size() != y.size()) {
    throw std::invalid_argument("linear_predictor: beta arity does not match risk factors");
  }
  for (std::size_t m = 0; m < y.size(); ++m) z += y[m] * beta[m + offset];
  return z;
}

namespace detail {

/// log P(S, X | D=d) for the symptom block, structural zero -> -inf.
[[nodiscard]] inline double log_symptom_block(const SubjectRecord& r, int d, const Params& p) {
  const double ps = clamp_prob(d == 1 ? p.p1 : p.p0);
  if (r.s == 0) {
    if (std::any_of(r.x.begin(), r.x.end(), [](int v) { return v != 0; })) {
      return -std::numeric_limits<double>::infinity();
    }
    return std::log1p(-ps);
  }
  const auto& rates = d == 1 ? p.s1 : p.s0;
  double acc = std::log(ps);
  for (std::size_t k = 0; k < r.x.size(); ++k) {
    const double q = clamp_prob(rates[k]);
    acc += r.x[k] ? std::log(q) : std::log1p(-q);
  }
  return acc;
}

[[nodiscard]] inline double log_test_term(int t, int d, const TestRates& rates) {
  const double q = clamp_prob(d == 1 ? rates.x : rates.y);
  return t ? std::log(q) : std::log1p(-q);
}

[[nodiscard]] inline double log_diagnosis_prior(const SubjectRecord& r, int d, const Params& p) {
  const double z = linear_predictor(r.y, p.beta);
  return d == 1 ? log_sigmoid(z) : log_one_minus_sigmoid(z);
}

}  // namespace detail

/// Log prior density of the parameters, Beta normalizing constants omitted.
[[nodiscard]] inline double log_parameter_prior(const Params& p, const HyperParams& h) {
  double acc = h.prior_x.log_kernel(p.x) + h.prior_y.log_kernel(p.y) + h.prior_p0.log_kernel(p.p0) +
               h.prior_p1.log_kernel(p.p1);
  for (std::size_t k = 0; k < p.s0.size(); ++k) {
    acc += h.prior_s0[k].log_kernel(p.s0[k]) + h.prior_s1[k].log_kernel(p.s1[k]);
  }
  if (p.imputed) acc += h.prior_imputed_x.log_kernel(p.imputed->x) + h.prior_imputed_y.log_kernel(p.imputed->y);
  double sq = 0.0;
  for (double b : p.beta) sq += b * b;
  return acc - sq / (2.0 * h.sigma_beta * h.sigma_beta);
}

/// Log of the unnormalized joint density of (T, S, X, D=d, theta) given Y.
/// Returns -inf when the record is structurally impossible (a symptom while asymptomatic).
[[nodiscard]] inline double joint_log_likelihood(const SubjectRecord& r, int d, const Params& p, const HyperParams& h) {
  if (!r.t) throw std::invalid_argument("joint_log_likelihood: record " + r.id + " has no test outcome");
  const double sym = detail::log_symptom_block(r, d, p);
  if (std::isinf(sym)) return sym;
  return detail::log_test_term(*r.t, d, TestRates{p.x, p.y}) + sym + detail::log_diagnosis_prior(r, d, p) +
         log_parameter_prior(p, h);
}

/// Rate parameters at their prior mode (or mean when no mode), beta at zero.
[[nodiscard]] inline Params initial_params(const HyperParams& h, std::size_t beta_size, bool imputed_class) {
  Params p;
  p.x = h.prior_x.point();
  p.y = h.prior_y.point();
  p.p0 = h.prior_p0.point();
  p.p1 = h.prior_p1.point();
  for (const auto& b : h.prior_s0) p.s0.push_back(b.point());
  for (const auto& b : h.prior_s1) p.s1.push_back(b.point());
  p.beta.assign(beta_size, 0.0);
  if (imputed_class) p.imputed = TestRates{h.prior_imputed_x.point(), h.prior_imputed_y.point()};
  return p;
}

}  // namespace stemfuse
