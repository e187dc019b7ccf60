// Baselines, scoring and grid experiments on synthetic cohorts.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "engine.hpp"
#include "estep.hpp"
#include "model.hpp"
#include "mstep.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "synth.hpp"

namespace stemfuse {

// ---------------------------------------------------------------------------
// Scoring

/// Percentage of positions where `predicted` equals `truth`.
[[nodiscard]] inline double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) throw std::invalid_argument("accuracy: length mismatch");
  if (truth.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += (predicted[i] == truth[i]) ? 1 : 0;
  return 100.0 * static_cast<double>(hit) / static_cast<double>(truth.size());
}

/// Accuracy of `predicted` minus accuracy of the raw test, in percentage points.
[[nodiscard]] inline double gain_over_t(std::span<const int> predicted, std::span<const int> tests,
                                        std::span<const int> truth) {
  return accuracy(predicted, truth) - accuracy(tests, truth);
}

[[nodiscard]] inline std::vector<int> observed_tests(const Dataset& data) {
  std::vector<int> t;
  t.reserve(data.size());
  for (const auto& r : data.records) {
    if (!r.t) throw std::invalid_argument("observed_tests: record " + r.id + " has no test outcome");
    t.push_back(*r.t);
  }
  return t;
}

/// MAP diagnoses from a StEM fit: 1 where the posterior mean of P(D=1) exceeds 1/2.
[[nodiscard]] inline std::vector<int> stem_diagnoses(const FitSummary& s) {
  std::vector<int> out;
  out.reserve(s.subjects.size());
  for (const auto& sub : s.subjects) out.push_back(sub.primary().mean > 0.5 ? 1 : 0);
  return out;
}

// ---------------------------------------------------------------------------
// Vanilla classifier: L2 logistic regression of T on [Y, X]

/// Penalized logistic fit, intercept in column 0 and unpenalized.
[[nodiscard]] inline Eigen::VectorXd fit_logistic(const Eigen::MatrixXd& features, const Eigen::VectorXd& labels,
                                                  double penalty, int max_iters = 50) {
  const auto p = features.cols();
  Eigen::VectorXd w = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd ridge = Eigen::VectorXd::Constant(p, penalty);
  ridge[0] = 1e-10;
  const auto objective = [&](const Eigen::VectorXd& v) {
    const Eigen::VectorXd z = features * v;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) acc -= labels[i] * log_sigmoid(z[i]) + (1.0 - labels[i]) * log_one_minus_sigmoid(z[i]);
    return acc + 0.5 * (ridge.array() * v.array().square()).sum();
  };
  double f = objective(w);
  for (int it = 0; it < max_iters; ++it) {
    const Eigen::VectorXd z = features * w;
    Eigen::VectorXd g(z.size());
    Eigen::VectorXd h(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      const double s = sigmoid(z[i]);
      g[i] = s - labels[i];
      h[i] = std::max(s * (1.0 - s), 1e-12);
    }
    const Eigen::VectorXd grad = features.transpose() * g + (ridge.array() * w.array()).matrix();
    if (grad.norm() < 1e-8 * std::max<double>(1.0, static_cast<double>(features.rows()))) break;
    Eigen::MatrixXd hess = features.transpose() * h.asDiagonal() * features;
    hess.diagonal() += ridge;
    const Eigen::VectorXd step = -hess.ldlt().solve(grad);
    double t = 1.0;
    bool moved = false;
    for (int k = 0; k < 40; ++k) {
      const Eigen::VectorXd cand = w + t * step;
      const double fc = objective(cand);
      if (fc <= f + 1e-4 * t * grad.dot(step)) {
        w = cand;
        f = fc;
        moved = true;
        break;
      }
      t *= 0.5;
    }
    if (!moved) break;
  }
  return w;
}

/// Rows of [1, Y, X] for the vanilla classifier.
[[nodiscard]] inline Eigen::MatrixXd classifier_features(const Dataset& data) {
  const auto n = static_cast<Eigen::Index>(data.size());
  const auto p = static_cast<Eigen::Index>(1 + data.m_factors + data.k_symptoms);
  Eigen::MatrixXd f(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = data.records[static_cast<std::size_t>(i)];
    Eigen::Index c = 0;
    f(i, c++) = 1.0;
    for (double v : r.y) f(i, c++) = v;
    for (int v : r.x) f(i, c++) = v;
  }
  return f;
}

struct VanillaOptions {
  std::size_t folds = 10;
  std::vector<double> penalties = [] {
    std::vector<double> v;
    for (int i = 0; i < 13; ++i) v.push_back(std::pow(10.0, -4.0 + 0.5 * i));  // 1e-4 .. 1e2
    return v;
  }();
  std::size_t bootstrap = 200;
  std::uint64_t seed = 0;
};

struct VanillaResult {
  std::vector<int> predicted;
  double penalty = 0.0;
  double cv_accuracy = 0.0;
  std::vector<double> log_probability;  // log P(T=1 | Y, X) at the full-data fit
  std::vector<Interval> log_probability_interval;  // bootstrap 95%, empty when bootstrap == 0
  std::vector<std::string> warnings;
};

[[nodiscard]] inline VanillaResult vanilla_classifier(const Dataset& data, const VanillaOptions& opt = {}) {
  const auto tests = observed_tests(data);
  const Eigen::MatrixXd f = classifier_features(data);
  const std::size_t n = data.size();
  Eigen::VectorXd labels(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) labels[static_cast<Eigen::Index>(i)] = tests[i];

  VanillaResult out;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(opt.seed, {0xcf01u}));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform() * static_cast<double>(i))]);
  const std::size_t folds = std::max<std::size_t>(2, std::min(opt.folds, n));

  double best_acc = -1.0;
  out.penalty = opt.penalties.empty() ? 1.0 : opt.penalties.front();
  std::vector<bool> fold_warned(folds, false);
  for (double lambda : opt.penalties) {
    std::size_t hits = 0;
    std::size_t scored = 0;
    for (std::size_t fold = 0; fold < folds; ++fold) {
      std::vector<Eigen::Index> train;
      std::vector<Eigen::Index> test;
      for (std::size_t j = 0; j < n; ++j) (j % folds == fold ? test : train).push_back(static_cast<Eigen::Index>(order[j]));
      const Eigen::MatrixXd ft = f(train, Eigen::all);
      const Eigen::VectorXd lt = labels(train);
      if (lt.sum() == 0.0 || lt.sum() == static_cast<double>(lt.size()) || test.empty()) {
        if (!fold_warned[fold]) out.warnings.push_back("fold " + std::to_string(fold) + " has a single training class; skipped");
        fold_warned[fold] = true;
        continue;
      }
      const Eigen::VectorXd w = fit_logistic(ft, lt, lambda);
      for (auto j : test) {
        const int pred = f.row(j).dot(w) > 0.0 ? 1 : 0;
        hits += pred == static_cast<int>(labels[j]) ? 1 : 0;
        ++scored;
      }
    }
    const double acc = scored ? static_cast<double>(hits) / static_cast<double>(scored) : 0.0;
    if (acc > best_acc) {
      best_acc = acc;
      out.penalty = lambda;
    }
  }
  out.cv_accuracy = std::max(best_acc, 0.0);

  const Eigen::VectorXd w = fit_logistic(f, labels, out.penalty);
  out.predicted.resize(n);
  out.log_probability.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double z = f.row(static_cast<Eigen::Index>(i)).dot(w);
    out.predicted[i] = z > 0.0 ? 1 : 0;
    out.log_probability[i] = log_sigmoid(z);
  }

  if (opt.bootstrap > 0) {
    std::vector<std::vector<double>> samples(n);
    for (std::size_t b = 0; b < opt.bootstrap; ++b) {
      Rng brng(derive_seed(opt.seed, {0xb007u, b}));
      std::vector<Eigen::Index> rows(n);
      for (auto& r : rows) r = static_cast<Eigen::Index>(brng.uniform() * static_cast<double>(n));
      const Eigen::VectorXd lb = labels(rows);
      if (lb.sum() == 0.0 || lb.sum() == static_cast<double>(n)) continue;
      const Eigen::VectorXd wb = fit_logistic(f(rows, Eigen::all), lb, out.penalty);
      for (std::size_t i = 0; i < n; ++i) samples[i].push_back(log_sigmoid(f.row(static_cast<Eigen::Index>(i)).dot(wb)));
    }
    out.log_probability_interval.reserve(n);
    for (auto& s : samples) out.log_probability_interval.push_back(central_interval(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fixed-prior EM baselines: theta frozen, only D re-estimated

enum class FixedPriorMode { agnostic, informed };

struct FixedEmResult {
  std::vector<double> w;  // P(D=1 | observations) at the fixed point
  std::vector<int> predicted;
  Params params;
  std::size_t iterations = 0;
};

namespace detail {

[[nodiscard]] inline double smoothed_rate(std::int64_t a, std::int64_t b) {
  return (static_cast<double>(a) + 0.5) / (static_cast<double>(b) + 1.0);
}

/// Rates read off the observed data, using the test outcome as a stand-in for D.
inline void empirical_rates(const Dataset& data, Params& p) {
  Counts sp[2];
  std::vector<Counts> sx[2] = {std::vector<Counts>(data.k_symptoms), std::vector<Counts>(data.k_symptoms)};
  for (const auto& r : data.records) {
    if (!r.t) continue;
    const int t = *r.t;
    sp[t].add(r.s != 0);
    if (r.s) {
      for (std::size_t k = 0; k < r.x.size(); ++k) sx[t][k].add(r.x[k] != 0);
    }
  }
  p.p0 = smoothed_rate(sp[0].successes, sp[0].trials);
  p.p1 = smoothed_rate(sp[1].successes, sp[1].trials);
  for (std::size_t k = 0; k < data.k_symptoms; ++k) {
    p.s0[k] = smoothed_rate(sx[0][k].successes, sx[0][k].trials);
    p.s1[k] = smoothed_rate(sx[1][k].successes, sx[1][k].trials);
  }
}

[[nodiscard]] inline double fixed_posterior(const SubjectRecord& r, const Params& p) {
  return r.t ? posterior_odds(r, p).p1 : posterior_odds_truncated(r, p).p1;
}

}  // namespace detail

/// Deterministic EM with frozen rates. Agnostic: every rate at 1/2 except the
/// test rates, which sit at the point of their priors. Informed: symptom and
/// symptomaticity rates are set from test-stratified empirical frequencies.
/// beta is fitted once against the first posteriors and then held fixed.
[[nodiscard]] inline FixedEmResult fixed_prior_em(const Dataset& data, const HyperParams& h, FixedPriorMode mode,
                                                  bool intercept = true, BetaLoss loss = BetaLoss::squared,
                                                  double tol = 1e-8, std::size_t max_iters = 100) {
  const std::size_t n = data.size();
  const DesignMatrix design = design_matrix(data, intercept);
  FixedEmResult out;
  Params& p = out.params;
  p.x = h.prior_x.point();
  p.y = h.prior_y.point();
  p.s0.assign(data.k_symptoms, 0.5);
  p.s1.assign(data.k_symptoms, 0.5);
  p.beta.assign(static_cast<std::size_t>(design.cols()), 0.0);
  if (mode == FixedPriorMode::informed) detail::empirical_rates(data, p);

  out.w.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.w[i] = detail::fixed_posterior(data.records[i], p);
  p.beta = fit_beta(design, out.w, h.sigma, h.sigma_beta, p.beta, FitBetaOptions{loss}).beta;

  for (out.iterations = 1; out.iterations <= max_iters; ++out.iterations) {
    double change = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double w = detail::fixed_posterior(data.records[i], p);
      change = std::max(change, std::abs(w - out.w[i]));
      out.w[i] = w;
    }
    if (change < tol) break;
  }
  out.predicted.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.predicted[i] = out.w[i] > 0.5 ? 1 : 0;
  return out;
}

// ---------------------------------------------------------------------------
// Grid experiments

enum class Method { stem, em_informed, em_agnostic, vanilla };

[[nodiscard]] inline const char* to_string(Method m) noexcept {
  switch (m) {
    case Method::stem: return "stem";
    case Method::em_informed: return "em_informed";
    case Method::em_agnostic: return "em_agnostic";
    case Method::vanilla: return "vanilla";
  }
  return "unknown";
}

[[nodiscard]] inline Method parse_method(const std::string& s) {
  if (s == "stem") return Method::stem;
  if (s == "em_informed") return Method::em_informed;
  if (s == "em_agnostic") return Method::em_agnostic;
  if (s == "vanilla") return Method::vanilla;
  throw std::invalid_argument("unknown method: " + s);
}

struct BenchOptions {
  std::size_t k = 14;
  std::size_t m = 2;
  std::uint64_t etiology_seed = 2020;
  EtiologyRanges etiology;
  double test_prior_sd = 0.05;  // spread of the manufacturer prior around the true rates
  double sigma_beta = 1.0;
  double missing_t_fraction = 0.0;
  VanillaOptions vanilla{10, VanillaOptions{}.penalties, 0, 0};
  unsigned threads = 0;
};

/// Hyper-parameters a study would use: manufacturer test prior, non-informative rest.
[[nodiscard]] inline HyperParams bench_hyper(const TrueParams& truth, std::size_t k, const BenchOptions& opt) {
  HyperParams h = HyperParams::noninformative(k);
  const auto manufacturer = [&](double mean) {
    const double var = std::min(opt.test_prior_sd * opt.test_prior_sd, 0.5 * mean * (1.0 - mean));
    return moment_match_beta(mean, var);
  };
  h.prior_x = manufacturer(truth.params.x);
  h.prior_y = manufacturer(truth.params.y);
  h.sigma = truth.sigma > 0.0 ? truth.sigma : 1.0;
  h.sigma_beta = opt.sigma_beta;
  return h;
}

struct ReplicateOutcome {
  double accuracy = 0.0;
  double gain = 0.0;
  std::size_t iterations = 0;
  double seconds = 0.0;
  double seconds_per_iteration = 0.0;
  bool failed = false;
  std::string error;
  std::optional<Params> estimate;  // StEM point estimate
};

struct BenchRow {
  GridCell cell;
  Method method = Method::stem;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  double mean_gain = 0.0;
  double std_gain = 0.0;
  double mean_iterations = 0.0;
  double mean_seconds = 0.0;
  double mean_seconds_per_iteration = 0.0;
  std::size_t failures = 0;
  std::vector<ReplicateOutcome> replicates;
};

struct BenchResult {
  std::vector<BenchRow> rows;
  std::vector<TrueParams> truths;  // one per cell, same order as the grid
};

namespace detail {

inline void aggregate(BenchRow& row) {
  std::vector<double> acc;
  std::vector<double> gain;
  double it = 0.0;
  double sec = 0.0;
  double spi = 0.0;
  for (const auto& r : row.replicates) {
    if (r.failed) {
      ++row.failures;
      continue;
    }
    acc.push_back(r.accuracy);
    gain.push_back(r.gain);
    it += static_cast<double>(r.iterations);
    sec += r.seconds;
    spi += r.seconds_per_iteration;
  }
  const auto mean_sd = [](const std::vector<double>& v, double& mean, double& sd) {
    if (v.empty()) return;
    mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  };
  mean_sd(acc, row.mean_accuracy, row.std_accuracy);
  mean_sd(gain, row.mean_gain, row.std_gain);
  if (!acc.empty()) {
    const auto cnt = static_cast<double>(acc.size());
    row.mean_iterations = it / cnt;
    row.mean_seconds = sec / cnt;
    row.mean_seconds_per_iteration = spi / cnt;
  }
}

}  // namespace detail

/// Synthetic cohort of one replicate of one cell.
[[nodiscard]] inline SyntheticCohort replicate_cohort(const GridCell& cell, std::size_t rep, const TrueParams& truth,
                                                      const BenchOptions& opt) {
  Rng rng(cell.replicate_seed(rep));
  auto cohort = generate(truth, cell.n, opt.k, opt.m, rng);
  if (opt.missing_t_fraction > 0.0) mask_tests(cohort.data, opt.missing_t_fraction, rng);
  return cohort;
}

/// Runs one method on one cohort and scores it against the hidden truth.
[[nodiscard]] inline ReplicateOutcome run_method(Method method, const SyntheticCohort& cohort, const HyperParams& h,
                                                 EngineConfig cfg, const BenchOptions& opt, std::uint64_t seed) {
  ReplicateOutcome out;
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<int> pred;
  try {
    switch (method) {
      case Method::stem: {
        cfg.seed = seed;
        cfg.threads = 1;
        const auto res = run_stem(cohort.data, h, cfg);
        pred = stem_diagnoses(res.summary);
        out.iterations = res.chain.iterations;
        out.estimate = res.summary.point_estimate;
        break;
      }
      case Method::em_informed:
      case Method::em_agnostic: {
        const auto res = fixed_prior_em(cohort.data, h,
                                        method == Method::em_informed ? FixedPriorMode::informed : FixedPriorMode::agnostic,
                                        cfg.intercept, cfg.beta_loss);
        pred = res.predicted;
        out.iterations = res.iterations;
        break;
      }
      case Method::vanilla: {
        VanillaOptions vo = opt.vanilla;
        vo.seed = seed;
        pred = vanilla_classifier(cohort.data, vo).predicted;
        out.iterations = 1;
        break;
      }
    }
  } catch (const std::exception& e) {
    out.failed = true;
    out.error = e.what();
    return out;
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.seconds_per_iteration = out.iterations ? out.seconds / static_cast<double>(out.iterations) : 0.0;
  out.accuracy = accuracy(pred, cohort.truth);
  if (!cohort.data.any_missing_t()) out.gain = gain_over_t(pred, observed_tests(cohort.data), cohort.truth);
  return out;
}

/// Every cell x method x replicate: generate, fit, score. Replicates run in
/// parallel; rows come out in (cell, method) order.
[[nodiscard]] inline BenchResult run_grid(const std::vector<GridCell>& cells, const std::vector<Method>& methods,
                                          const EngineConfig& cfg, const BenchOptions& opt = {}) {
  BenchResult out;
  for (const auto& cell : cells) {
    const TrueParams truth = random_truth(cell.sensitivity, cell.specificity, opt.k, opt.m, cell.sigma, opt.etiology_seed, opt.etiology);
    out.truths.push_back(truth);
    const HyperParams h = bench_hyper(truth, opt.k, opt);
    std::vector<std::vector<ReplicateOutcome>> per_rep(cell.replicates);
    parallel_for(cell.replicates, worker_count(opt.threads), [&](std::size_t rep) {
      const auto cohort = replicate_cohort(cell, rep, truth, opt);
      for (Method m : methods) per_rep[rep].push_back(run_method(m, cohort, h, cfg, opt, derive_seed(cell.replicate_seed(rep), {0xf17u})));
    }, 1);
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
      BenchRow row;
      row.cell = cell;
      row.method = methods[mi];
      for (auto& reps : per_rep) row.replicates.push_back(reps[mi]);
      detail::aggregate(row);
      out.rows.push_back(std::move(row));
    }
  }
  return out;
}

}  // namespace stemfuse
