// Random records, parameters and small cohorts shared by the test suites.

#pragma once

#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "stemfuse/mstep.hpp"
#include "stemfuse/rng.hpp"

namespace testsupport {

using namespace stemfuse;

inline double unif(Rng& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

inline Params random_params(Rng& rng, std::size_t k, std::size_t m, bool intercept = true, bool imputed = false) {
  Params p;
  p.x = unif(rng, 0.02, 0.98);
  p.y = unif(rng, 0.02, 0.98);
  p.p0 = unif(rng, 0.02, 0.98);
  p.p1 = unif(rng, 0.02, 0.98);
  for (std::size_t j = 0; j < k; ++j) {
    p.s0.push_back(unif(rng, 0.02, 0.98));
    p.s1.push_back(unif(rng, 0.02, 0.98));
  }
  for (std::size_t j = 0; j < m + (intercept ? 1 : 0); ++j) p.beta.push_back(unif(rng, -2.0, 2.0));
  if (imputed) p.imputed = TestRates{unif(rng, 0.02, 0.98), unif(rng, 0.02, 0.98)};
  return p;
}

inline SubjectRecord random_record(Rng& rng, std::size_t k, std::size_t m, bool with_t = true) {
  SubjectRecord r;
  r.id = "r" + std::to_string(rng() % 1000000);
  if (with_t) r.t = rng.bernoulli(0.5) ? 1 : 0;
  r.s = rng.bernoulli(0.6) ? 1 : 0;
  r.x.assign(k, 0);
  if (r.s) {
    for (auto& v : r.x) v = rng.bernoulli(0.4) ? 1 : 0;
  }
  std::normal_distribution<double> nd(0.0, 1.0);
  for (std::size_t j = 0; j < m; ++j) r.y.push_back(nd(rng));
  return r;
}

inline HyperParams random_hyper(Rng& rng, std::size_t k) {
  HyperParams h = HyperParams::noninformative(k);
  const auto prior = [&] { return BetaPrior{unif(rng, 0.3, 8.0), unif(rng, 0.3, 8.0)}; };
  h.prior_x = prior();
  h.prior_y = prior();
  h.prior_p0 = prior();
  h.prior_p1 = prior();
  for (std::size_t j = 0; j < k; ++j) {
    h.prior_s0[j] = prior();
    h.prior_s1[j] = prior();
  }
  h.sigma_beta = unif(rng, 0.5, 3.0);
  return h;
}

/// P(D=1) by enumerating exp(jll) over d.
inline double enumerate_p1(const SubjectRecord& r, const Params& p, const HyperParams& h) {
  const double l1 = joint_log_likelihood(r, 1, p, h);
  const double l0 = joint_log_likelihood(r, 0, p, h);
  const double mx = std::max(l0, l1);
  const double e1 = std::exp(l1 - mx);
  const double e0 = std::exp(l0 - mx);
  return e1 / (e0 + e1);
}

/// argmax over a uniform grid of step h in (0, 1) of the Beta log kernel.
inline double grid_argmax(double A, double B, double h) {
  double best = -std::numeric_limits<double>::infinity();
  double arg = 0.0;
  const auto steps = static_cast<long>(std::llround(1.0 / h));
  for (long i = 1; i < steps; ++i) {
    const double p = static_cast<double>(i) * h;
    const double v = (A - 1.0) * std::log(p) + (B - 1.0) * std::log1p(-p);
    if (v > best) {
      best = v;
      arg = p;
    }
  }
  return arg;
}

/// Penalised beta objective for a single factor without intercept, written out longhand.
inline double objective_1d(const DesignMatrix& y, const std::vector<double>& d, double sigma, double sb, double b, BetaLoss loss) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    const double g = sigmoid(y(i, 0) * b);
    const auto di = d[static_cast<std::size_t>(i)];
    acc += loss == BetaLoss::squared ? (di - g) * (di - g) / (2.0 * sigma * sigma)
                                     : -(di * std::log(g) + (1.0 - di) * std::log1p(-g));
  }
  return acc + b * b / (2.0 * sb * sb);
}

}  // namespace testsupport
