// Stochastic EM driver: alternates a sampled E-step with the closed-form
// M-step, keeps the chain of parameter snapshots and imputations, and turns
// the post-burn-in chain into subject-level and global posterior summaries.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "estep.hpp"
#include "model.hpp"
#include "mstep.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace stemfuse {

enum class MissingTMode { truncated, joint_imputation };

struct EngineConfig {
  std::size_t max_iters = 500;
  std::optional<std::size_t> burn_in;  // default max(50, max_iters / 5)
  double conv_tol = 1e-3;
  std::size_t conv_window = 25;
  std::uint64_t seed = 0;
  bool intercept = true;
  BetaLoss beta_loss = BetaLoss::squared;
  MissingTMode missing_t_mode = MissingTMode::joint_imputation;
  bool imputed_class_enabled = true;
  std::size_t n_posterior_draws = 200;
  unsigned threads = 0;  // 0: hardware concurrency, capped by STEM_FUSE_THREADS
  bool summarize_subjects = true;

  [[nodiscard]] std::size_t effective_burn_in() const noexcept {
    return burn_in.value_or(std::max<std::size_t>(50, max_iters / 5));
  }

  void validate() const {
    if (max_iters == 0) throw std::invalid_argument("max_iters must be positive");
    if (effective_burn_in() >= max_iters) throw std::invalid_argument("burn_in must be below max_iters");
    if (!(conv_tol > 0.0)) throw std::invalid_argument("conv_tol must be positive");
    if (conv_window == 0) throw std::invalid_argument("conv_window must be positive");
    if (n_posterior_draws < 100) throw std::invalid_argument("n_posterior_draws must be at least 100");
  }
};

enum class StopReason { converged, max_iters, beta_fit_failed };

[[nodiscard]] inline const char* to_string(StopReason r) noexcept {
  switch (r) {
    case StopReason::converged: return "converged";
    case StopReason::max_iters: return "max_iters";
    case StopReason::beta_fit_failed: return "beta_fit_failed";
  }
  return "unknown";
}

struct Chain {
  std::vector<Params> snapshots;         // parameters after each M-step
  std::vector<Imputation> imputations;   // the draw each M-step was fitted on
  std::size_t iterations = 0;
  std::size_t burn_in = 0;
  StopReason stop = StopReason::max_iters;
  SufficientStats final_stats;
  std::vector<double> iteration_seconds;

  [[nodiscard]] std::size_t post_burn_in_count() const noexcept {
    return snapshots.size() > burn_in ? snapshots.size() - burn_in : 0;
  }
  /// Post-burn-in snapshots, or the last snapshot when burn-in was never passed.
  [[nodiscard]] std::vector<const Params*> kept() const {
    std::vector<const Params*> out;
    const std::size_t first = snapshots.size() > burn_in ? burn_in : (snapshots.empty() ? 0 : snapshots.size() - 1);
    for (std::size_t i = first; i < snapshots.size(); ++i) out.push_back(&snapshots[i]);
    return out;
  }
};

struct Interval {
  double mean = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  [[nodiscard]] double width() const noexcept { return upper - lower; }
};

struct SubjectPosterior {
  std::string id;
  std::optional<Interval> with_test;  // absent when the test is missing
  Interval questionnaire;             // network truncated at T
  /// The subject's headline posterior: with the test when observed.
  [[nodiscard]] const Interval& primary() const noexcept { return with_test ? *with_test : questionnaire; }
};

struct ParameterSummary {
  std::string name;
  std::optional<BetaPrior> prior;      // rate families only
  std::optional<BetaPrior> conjugate;  // prior plus final-iteration counts
  std::vector<double> samples;         // post-burn-in chain values
  double chain_mean = 0.0;
  double chain_sd = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

struct FitSummary {
  Params point_estimate;
  std::vector<SubjectPosterior> subjects;
  std::vector<ParameterSummary> parameters;
};

struct StemResult {
  Chain chain;
  FitSummary summary;
};

class DatasetError : public std::invalid_argument {
 public:
  DatasetError(const std::string& what, std::vector<Violation> v) : std::invalid_argument(what), violations_(std::move(v)) {}
  [[nodiscard]] const std::vector<Violation>& violations() const noexcept { return violations_; }

 private:
  std::vector<Violation> violations_;
};

class StemError : public std::runtime_error {
 public:
  StemError(const std::string& what, Chain chain) : std::runtime_error(what), chain_(std::move(chain)) {}
  [[nodiscard]] const Chain& chain() const noexcept { return chain_; }

 private:
  Chain chain_;
};

/// Empirical quantile with linear interpolation between order statistics.
[[nodiscard]] inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

[[nodiscard]] inline Interval central_interval(const std::vector<double>& sample, double level = 0.95) {
  Interval out;
  if (sample.empty()) return out;
  out.mean = std::accumulate(sample.begin(), sample.end(), 0.0) / static_cast<double>(sample.size());
  const double tail = 0.5 * (1.0 - level);
  out.lower = quantile(sample, tail);
  out.upper = quantile(sample, 1.0 - tail);
  return out;
}

namespace detail {

/// Parameters as a flat vector: x, y, p0, p1, s0..., s1..., [x_imp, y_imp], beta...
[[nodiscard]] inline std::vector<double> flatten(const Params& p) {
  std::vector<double> v{p.x, p.y, p.p0, p.p1};
  v.insert(v.end(), p.s0.begin(), p.s0.end());
  v.insert(v.end(), p.s1.begin(), p.s1.end());
  if (p.imputed) {
    v.push_back(p.imputed->x);
    v.push_back(p.imputed->y);
  }
  v.insert(v.end(), p.beta.begin(), p.beta.end());
  return v;
}

[[nodiscard]] inline Params unflatten(const std::vector<double>& v, const Params& shape) {
  Params p = shape;
  std::size_t i = 0;
  p.x = v[i++];
  p.y = v[i++];
  p.p0 = v[i++];
  p.p1 = v[i++];
  for (auto& s : p.s0) s = v[i++];
  for (auto& s : p.s1) s = v[i++];
  if (p.imputed) {
    p.imputed->x = v[i++];
    p.imputed->y = v[i++];
  }
  for (auto& b : p.beta) b = v[i++];
  return p;
}

/// Snapshots to summarize over: all kept snapshots, resampled with replacement
/// up to `draws` when fewer are available.
[[nodiscard]] inline std::vector<const Params*> posterior_draws(const Chain& chain, std::size_t draws, std::uint64_t seed) {
  auto kept = chain.kept();
  if (kept.empty() || kept.size() >= draws) return kept;
  std::vector<const Params*> out;
  out.reserve(draws);
  Rng rng(derive_seed(seed, {0x5eu, kept.size()}));
  for (std::size_t i = 0; i < draws; ++i) out.push_back(kept[static_cast<std::size_t>(rng.uniform() * static_cast<double>(kept.size()))]);
  return out;
}

[[nodiscard]] inline SubjectPosterior summarize_subject(const SubjectRecord& r, const std::vector<const Params*>& draws) {
  SubjectPosterior out;
  out.id = r.id;
  std::vector<double> q;
  q.reserve(draws.size());
  for (const Params* p : draws) q.push_back(posterior_odds_truncated(r, *p).p1);
  out.questionnaire = central_interval(q);
  if (r.t) {
    std::vector<double> w;
    w.reserve(draws.size());
    for (const Params* p : draws) w.push_back(posterior_odds(r, *p).p1);
    out.with_test = central_interval(w);
  }
  return out;
}

}  // namespace detail

/// Post-burn-in mean of the parameters.
[[nodiscard]] inline Params chain_mean(const Chain& chain) {
  const auto kept = chain.kept();
  if (kept.empty()) throw std::invalid_argument("chain_mean: empty chain");
  std::vector<double> acc(detail::flatten(*kept.front()).size(), 0.0);
  for (const Params* p : kept) {
    const auto v = detail::flatten(*p);
    for (std::size_t j = 0; j < v.size(); ++j) acc[j] += v[j];
  }
  for (auto& a : acc) a /= static_cast<double>(kept.size());
  return detail::unflatten(acc, *kept.front());
}

/// Posterior mean and central 95% interval of P(D = 1) for one subject, over
/// the parameter uncertainty carried by the chain.
[[nodiscard]] inline SubjectPosterior subject_posterior(const SubjectRecord& r, const Chain& chain, const EngineConfig& cfg) {
  return detail::summarize_subject(r, detail::posterior_draws(chain, cfg.n_posterior_draws, cfg.seed));
}

/// Per-parameter summaries: conjugate Beta posterior at the final imputation
/// for every rate family, plus the empirical chain distribution of everything.
[[nodiscard]] inline std::vector<ParameterSummary> parameter_posteriors(const Chain& chain, const HyperParams& h) {
  std::vector<ParameterSummary> out;
  const auto kept = chain.kept();
  const auto& st = chain.final_stats;
  const auto add = [&](std::string name, auto getter, std::optional<BetaPrior> prior, std::optional<Counts> counts) {
    ParameterSummary s;
    s.name = std::move(name);
    s.prior = prior;
    if (prior) s.conjugate = conjugate_posterior(counts.value_or(Counts{}), *prior);
    for (const Params* p : kept) s.samples.push_back(getter(*p));
    if (!s.samples.empty()) {
      const auto iv = central_interval(s.samples);
      s.chain_mean = iv.mean;
      s.lower = iv.lower;
      s.upper = iv.upper;
      double ss = 0.0;
      for (double v : s.samples) ss += (v - s.chain_mean) * (v - s.chain_mean);
      s.chain_sd = s.samples.size() > 1 ? std::sqrt(ss / static_cast<double>(s.samples.size() - 1)) : 0.0;
    }
    out.push_back(std::move(s));
  };
  add("x", [](const Params& p) { return p.x; }, h.prior_x, st.x);
  add("y", [](const Params& p) { return p.y; }, h.prior_y, st.y);
  add("p0", [](const Params& p) { return p.p0; }, h.prior_p0, st.p0);
  add("p1", [](const Params& p) { return p.p1; }, h.prior_p1, st.p1);
  const std::size_t k = h.prior_s0.size();
  for (std::size_t j = 0; j < k; ++j) {
    add("s0[" + std::to_string(j + 1) + "]", [j](const Params& p) { return p.s0[j]; }, h.prior_s0[j],
        j < st.s0.size() ? std::optional<Counts>(st.s0[j]) : std::nullopt);
  }
  for (std::size_t j = 0; j < k; ++j) {
    add("s1[" + std::to_string(j + 1) + "]", [j](const Params& p) { return p.s1[j]; }, h.prior_s1[j],
        j < st.s1.size() ? std::optional<Counts>(st.s1[j]) : std::nullopt);
  }
  const Params* shape = chain.snapshots.empty() ? nullptr : &chain.snapshots.back();
  if (shape && shape->imputed) {
    add("x_imputed", [](const Params& p) { return p.imputed->x; }, h.prior_imputed_x, st.imputed_x);
    add("y_imputed", [](const Params& p) { return p.imputed->y; }, h.prior_imputed_y, st.imputed_y);
  }
  if (shape) {
    for (std::size_t j = 0; j < shape->beta.size(); ++j) {
      add("beta[" + std::to_string(j) + "]", [j](const Params& p) { return p.beta[j]; }, std::nullopt, std::nullopt);
    }
  }
  return out;
}

namespace detail {

[[nodiscard]] inline double max_relative_change(const std::vector<double>& now, const std::vector<double>& before) {
  double worst = 0.0;
  for (std::size_t j = 0; j < now.size(); ++j) {
    worst = std::max(worst, std::abs(now[j] - before[j]) / std::max(std::abs(now[j]), 1e-2));
  }
  return worst;
}

}  // namespace detail

/// Runs stochastic EM to convergence of the running post-burn-in mean (or
/// max_iters) and summarizes the chain. Reproducible from `cfg.seed`.
[[nodiscard]] inline StemResult run_stem(const Dataset& data, const HyperParams& h, const EngineConfig& cfg) {
  cfg.validate();
  h.validate();
  if (auto v = validate_dataset(data); !v.empty()) {
    std::string msg = "run_stem: dataset has " + std::to_string(v.size()) + " violation(s); first: " + v.front().record_id +
                      ": " + v.front().rule;
    throw DatasetError(msg, std::move(v));
  }
  if (h.k_symptoms() != data.k_symptoms) throw std::invalid_argument("run_stem: symptom priors do not match dataset K");

  const std::size_t n = data.size();
  const bool joint = cfg.missing_t_mode == MissingTMode::joint_imputation;
  const bool imputed_class = joint && cfg.imputed_class_enabled && data.any_missing_t();
  const DesignMatrix design = design_matrix(data, cfg.intercept);
  const MStepOptions mopt{cfg.intercept, imputed_class, FitBetaOptions{cfg.beta_loss, 100, 1e-8, 0.5}};
  const unsigned workers = worker_count(cfg.threads);

  StemResult res;
  Chain& chain = res.chain;
  chain.burn_in = cfg.effective_burn_in();
  Params current = initial_params(h, static_cast<std::size_t>(design.cols()), imputed_class);

  Imputation imp;
  imp.d.assign(n, 0);
  imp.t.assign(n, 0);
  imp.t_imputed.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) imp.t_imputed[i] = (!data.records[i].t && joint) ? 1 : 0;

  std::vector<std::vector<double>> running;  // running post-burn-in means
  std::vector<double> sum;

  for (std::size_t it = 0; it < cfg.max_iters; ++it) {
    const auto t0 = std::chrono::steady_clock::now();
    parallel_for(n, workers, [&](std::size_t i) {
      const auto& r = data.records[i];
      Rng rng(subject_stream(cfg.seed, it, i));
      if (r.t) {
        imp.d[i] = static_cast<std::uint8_t>(draw_diagnosis(posterior_odds(r, current), rng));
      } else if (joint) {
        const auto dt = draw_joint(joint_posterior_dt(r, current), rng);
        imp.d[i] = static_cast<std::uint8_t>(dt[0]);
        imp.t[i] = static_cast<std::uint8_t>(dt[1]);
      } else {
        imp.d[i] = static_cast<std::uint8_t>(draw_diagnosis(posterior_odds_truncated(r, current), rng));
      }
    });

    SufficientStats st = accumulate_stats(data, imp, imputed_class);
    Params next;
    try {
      next = m_step_from_stats(st, design, h, current, mopt);
    } catch (const FitBetaError& e) {
      chain.iterations = it;
      chain.stop = StopReason::beta_fit_failed;
      throw StemError(std::string("run_stem: iteration ") + std::to_string(it) + ": " + e.what(), std::move(chain));
    }
    current = std::move(next);
    chain.snapshots.push_back(current);
    chain.imputations.push_back(imp);
    chain.final_stats = std::move(st);
    chain.iterations = it + 1;
    chain.iteration_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());

    if (chain.snapshots.size() > chain.burn_in) {
      const auto v = detail::flatten(current);
      if (sum.empty()) sum.assign(v.size(), 0.0);
      for (std::size_t j = 0; j < v.size(); ++j) sum[j] += v[j];
      std::vector<double> mean(sum);
      const double m = static_cast<double>(running.size() + 1);
      for (auto& s : mean) s /= m;
      running.push_back(std::move(mean));
      if (running.size() >= 2 * cfg.conv_window &&
          detail::max_relative_change(running.back(), running[running.size() - 1 - cfg.conv_window]) < cfg.conv_tol) {
        chain.stop = StopReason::converged;
        break;
      }
    }
  }
  if (chain.stop != StopReason::converged) chain.stop = StopReason::max_iters;

  res.summary.point_estimate = chain_mean(chain);
  res.summary.parameters = parameter_posteriors(chain, h);
  if (cfg.summarize_subjects) {
    const auto draws = detail::posterior_draws(chain, cfg.n_posterior_draws, cfg.seed);
    res.summary.subjects.resize(n);
    parallel_for(n, workers, [&](std::size_t i) { res.summary.subjects[i] = detail::summarize_subject(data.records[i], draws); });
  }
  return res;
}

}  // namespace stemfuse
