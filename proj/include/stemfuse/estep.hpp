// Stochastic E-step: exact posteriors of the hidden diagnosis (and of a missing
// test outcome) per subject, and single-draw imputations from them.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "model.hpp"
#include "rng.hpp"

namespace stemfuse {

struct DiagnosisPosterior {
  double p1 = 0.5;  // P(D = 1 | observations, theta)
};

/// P(D = d, T = t | S, X, Y, theta), indexed as cells[2*d + t].
struct JointDTPosterior {
  std::array<double, 4> cells{0.25, 0.25, 0.25, 0.25};

  [[nodiscard]] double at(int d, int t) const noexcept { return cells[static_cast<std::size_t>(2 * d + t)]; }
  [[nodiscard]] double marginal_d1() const noexcept { return cells[2] + cells[3]; }
};

namespace detail {

[[nodiscard]] inline double probability_from_log_odds(double log_odds) noexcept { return sigmoid(log_odds); }

/// log P(S, X, D=1 | Y) - log P(S, X, D=0 | Y); the truncated-network log odds.
[[nodiscard]] inline double questionnaire_log_odds(const SubjectRecord& r, const Params& p) {
  const double z = linear_predictor(r.y, p.beta);
  double lo = z;  // log pi - log(1 - pi)
  const double p1 = clamp_prob(p.p1);
  const double p0 = clamp_prob(p.p0);
  if (r.s == 0) {
    lo += std::log1p(-p1) - std::log1p(-p0);
    return lo;
  }
  lo += std::log(p1) - std::log(p0);
  for (std::size_t k = 0; k < r.x.size(); ++k) {
    const double a = clamp_prob(p.s1[k]);
    const double b = clamp_prob(p.s0[k]);
    lo += r.x[k] ? std::log(a) - std::log(b) : std::log1p(-a) - std::log1p(-b);
  }
  return lo;
}

[[nodiscard]] inline double test_log_ratio(int t, const TestRates& rates) {
  const double x = clamp_prob(rates.x);
  const double y = clamp_prob(rates.y);
  return t ? std::log(x) - std::log(y) : std::log1p(-x) - std::log1p(-y);
}

}  // namespace detail

/// Posterior of D given the observed test, symptoms and risk factors.
[[nodiscard]] inline DiagnosisPosterior posterior_odds(const SubjectRecord& r, const Params& p) {
  if (!r.t) throw std::invalid_argument("posterior_odds: record " + r.id + " has no test outcome");
  const double lo = detail::questionnaire_log_odds(r, p) + detail::test_log_ratio(*r.t, TestRates{p.x, p.y});
  return {detail::probability_from_log_odds(lo)};
}

/// Posterior of D in the network truncated at T (questionnaire and risk factors only).
[[nodiscard]] inline DiagnosisPosterior posterior_odds_truncated(const SubjectRecord& r, const Params& p) {
  return {detail::probability_from_log_odds(detail::questionnaire_log_odds(r, p))};
}

/// Joint posterior of (D, T) for a subject whose test is missing. Uses the
/// imputed accuracy class when the parameters carry one.
[[nodiscard]] inline JointDTPosterior joint_posterior_dt(const SubjectRecord& r, const Params& p) {
  const TestRates rates = p.imputed.value_or(TestRates{p.x, p.y});
  const double lo = detail::questionnaire_log_odds(r, p);
  // Work relative to D = 0: log weights 0 and lo, then split each by the test term.
  const double w1 = detail::probability_from_log_odds(lo);
  const double w0 = detail::probability_from_log_odds(-lo);
  JointDTPosterior out;
  out.cells[0] = w0 * (1.0 - rates.y);
  out.cells[1] = w0 * rates.y;
  out.cells[2] = w1 * (1.0 - rates.x);
  out.cells[3] = w1 * rates.x;
  return out;
}

struct Imputation {
  std::vector<std::uint8_t> d;
  std::vector<std::uint8_t> t;  // imputed test outcome; meaningful only where t_imputed is set
  std::vector<std::uint8_t> t_imputed;
};

[[nodiscard]] inline int draw_diagnosis(const DiagnosisPosterior& post, Rng& rng) noexcept {
  return rng.uniform() < post.p1 ? 1 : 0;
}

/// One categorical draw; returns {d, t}.
[[nodiscard]] inline std::array<int, 2> draw_joint(const JointDTPosterior& post, Rng& rng) noexcept {
  const double u = rng.uniform();
  double acc = 0.0;
  for (int c = 0; c < 3; ++c) {
    acc += post.cells[static_cast<std::size_t>(c)];
    if (u < acc) return {c / 2, c % 2};
  }
  return {1, 1};
}

/// Seed of the substream used by subject `index` at iteration `iteration`.
[[nodiscard]] constexpr std::uint64_t subject_stream(std::uint64_t seed, std::uint64_t iteration, std::uint64_t index) noexcept {
  return derive_seed(seed, {0x45u, iteration, index});
}

/// One Bernoulli draw per subject; subject i uses its own substream.
[[nodiscard]] inline std::vector<std::uint8_t> sample_imputations(std::span<const DiagnosisPosterior> posts,
                                                                  std::uint64_t seed, std::uint64_t iteration = 0) {
  std::vector<std::uint8_t> out(posts.size());
  for (std::size_t i = 0; i < posts.size(); ++i) {
    Rng rng(subject_stream(seed, iteration, i));
    out[i] = static_cast<std::uint8_t>(draw_diagnosis(posts[i], rng));
  }
  return out;
}

/// One categorical draw per subject over the four (d, t) cells.
[[nodiscard]] inline std::vector<std::array<int, 2>> sample_imputations(std::span<const JointDTPosterior> posts,
                                                                        std::uint64_t seed, std::uint64_t iteration = 0) {
  std::vector<std::array<int, 2>> out(posts.size());
  for (std::size_t i = 0; i < posts.size(); ++i) {
    Rng rng(subject_stream(seed, iteration, i));
    out[i] = draw_joint(posts[i], rng);
  }
  return out;
}

}  // namespace stemfuse
