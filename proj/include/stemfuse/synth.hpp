// Synthetic cohorts drawn from the generative network, with the hidden
// diagnoses returned alongside for scoring.

#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "model.hpp"
#include "rng.hpp"

namespace stemfuse {

struct TrueParams {
  Params params;
  double sigma = 0.0;  // std. dev. of the log-odds noise at generation
};

struct SyntheticCohort {
  Dataset data;
  std::vector<int> truth;
};

using RiskSampler = std::function<double(Rng&)>;

[[nodiscard]] inline RiskSampler standard_normal_risk() {
  return [](Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); };
}

[[nodiscard]] inline std::string subject_id(std::size_t i) {
  std::string s = std::to_string(i + 1);
  return "S" + std::string(s.size() < 6 ? 6 - s.size() : 0, '0') + s;
}

/// Draws n subjects: Y, then D from the noisy logistic link, then S, X, T given D.
/// `truth.params.beta` has either m entries or m + 1 with a leading intercept.
[[nodiscard]] inline SyntheticCohort generate(const TrueParams& truth, std::size_t n, std::size_t k, std::size_t m,
                                              Rng& rng, const RiskSampler& risk = standard_normal_risk()) {
  const Params& p = truth.params;
  if (n == 0) throw std::invalid_argument("generate: n must be positive");
  if (p.s0.size() != k || p.s1.size() != k) throw std::invalid_argument("generate: symptom arity mismatch");
  if (p.beta.size() != m && p.beta.size() != m + 1) throw std::invalid_argument("generate: beta arity mismatch");
  SyntheticCohort out;
  out.data.k_symptoms = k;
  out.data.m_factors = m;
  out.data.records.reserve(n);
  out.truth.reserve(n);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    SubjectRecord r;
    r.id = subject_id(i);
    r.y.resize(m);
    for (auto& v : r.y) v = risk(rng);
    const double eps = truth.sigma > 0.0 ? truth.sigma * noise(rng) : 0.0;
    const int d = rng.bernoulli(sigmoid(linear_predictor(r.y, p.beta) + eps)) ? 1 : 0;
    r.s = rng.bernoulli(d ? p.p1 : p.p0) ? 1 : 0;
    r.x.assign(k, 0);
    const auto& rates = d ? p.s1 : p.s0;
    for (std::size_t j = 0; j < k; ++j) r.x[j] = (r.s && rng.bernoulli(rates[j])) ? 1 : 0;
    r.t = rng.bernoulli(d ? p.x : p.y) ? 1 : 0;
    out.data.records.push_back(std::move(r));
    out.truth.push_back(d);
  }
  return out;
}

/// Removes the test outcome from round(fraction * n) subjects chosen uniformly.
inline void mask_tests(Dataset& data, double fraction, Rng& rng) {
  const std::size_t n = data.size();
  const auto count = static_cast<std::size_t>(std::llround(std::clamp(fraction, 0.0, 1.0) * static_cast<double>(n)));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.uniform() * static_cast<double>(n - i));
    std::swap(idx[i], idx[j]);
    data.records[idx[i]].t.reset();
  }
}

/// Symptom and risk-factor profile shared by every benchmark cell. Rates are
/// drawn from fixed ranges with a fixed seed, so every cell sees the same
/// disease etiology and differs only in test accuracy, n and sigma.
struct EtiologyRanges {
  double p0_lo = 0.25, p0_hi = 0.45;
  double p1_lo = 0.55, p1_hi = 0.75;
  double s0_lo = 0.10, s0_hi = 0.35;
  double s1_lo = 0.35, s1_hi = 0.70;
  double beta_lo = 0.5, beta_hi = 1.5;  // |beta_m|, random sign
  double intercept = 0.0;
};

[[nodiscard]] inline TrueParams random_truth(double sensitivity, double specificity, std::size_t k, std::size_t m,
                                             double sigma, std::uint64_t seed = 2020, const EtiologyRanges& r = {}) {
  Rng rng(derive_seed(seed, {0x7407u, k, m}));
  const auto unif = [&](double lo, double hi) { return lo + (hi - lo) * rng.uniform(); };
  TrueParams t;
  t.sigma = sigma;
  t.params.x = sensitivity;
  t.params.y = 1.0 - specificity;
  t.params.p0 = unif(r.p0_lo, r.p0_hi);
  t.params.p1 = unif(r.p1_lo, r.p1_hi);
  for (std::size_t j = 0; j < k; ++j) {
    t.params.s0.push_back(unif(r.s0_lo, r.s0_hi));
    t.params.s1.push_back(unif(r.s1_lo, r.s1_hi));
  }
  t.params.beta.push_back(r.intercept);
  for (std::size_t j = 0; j < m; ++j) {
    const double mag = unif(r.beta_lo, r.beta_hi);
    t.params.beta.push_back(rng.uniform() < 0.5 ? -mag : mag);
  }
  return t;
}

struct GridCell {
  std::size_t index = 0;
  double sensitivity = 0.8;
  double specificity = 0.8;
  std::size_t n = 300;
  double sigma = 0.5;
  std::size_t replicates = 1;
  std::uint64_t seed = 0;

  [[nodiscard]] std::uint64_t replicate_seed(std::size_t rep) const noexcept { return derive_seed(seed, {0x4e9u, rep}); }
};

struct GridAxes {
  std::vector<double> sensitivity{0.60, 0.70, 0.80, 0.93, 0.99};
  std::vector<double> specificity{0.60, 0.70, 0.80, 0.93, 0.99};
  std::vector<std::size_t> n{300};
  std::vector<double> sigma{0.5};
  std::size_t replicates = 100;
  std::size_t k = 14;
  std::size_t m = 2;
  std::uint64_t seed = 2020;
};

/// Cartesian product of the axes, ordered sensitivity-major, with one derived seed per cell.
[[nodiscard]] inline std::vector<GridCell> grid_spec(const GridAxes& axes) {
  if (axes.sensitivity.empty() || axes.specificity.empty() || axes.n.empty() || axes.sigma.empty()) {
    throw std::invalid_argument("grid_spec: every axis needs at least one value");
  }
  if (axes.replicates == 0) throw std::invalid_argument("grid_spec: replicates must be positive");
  std::vector<GridCell> out;
  for (double se : axes.sensitivity) {
    for (double sp : axes.specificity) {
      for (std::size_t n : axes.n) {
        for (double sg : axes.sigma) {
          GridCell c{out.size(), se, sp, n, sg, axes.replicates, 0};
          c.seed = derive_seed(axes.seed, {0xce11u, c.index});
          out.push_back(c);
        }
      }
    }
  }
  return out;
}

}  // namespace stemfuse
