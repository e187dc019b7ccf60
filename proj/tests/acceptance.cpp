// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Runs the full desk-scale experiments, so expect it to take a while.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "stemfuse/bench.hpp"
#include "stemfuse/report.hpp"
#include "support.hpp"

using namespace stemfuse;
namespace fs = std::filesystem;

namespace {

// ---- pinned tolerances and sizes -------------------------------------------
constexpr std::size_t kOraclePairs = 1000;
constexpr double kPosteriorTol = 1e-12;
constexpr double kPosteriorSeconds = 1.0;

constexpr std::size_t kRateCases = 1000;
constexpr double kRateGrid = 1e-5;
constexpr double kRateTol = 1e-5;
constexpr std::size_t kBetaCases = 20;
constexpr double kBetaGrid = 1e-4;
constexpr double kBetaTol = 1e-3;
constexpr double kMStepSeconds = 30.0;

constexpr std::size_t kReplicates = 100;
constexpr double kGain70Lo = 12.0, kGain70Hi = 20.0;
constexpr double kGain99Abs = 1.0;
constexpr double kAcc70Lo = 82.0, kAcc70Hi = 91.0;

constexpr double kVanillaMargin = 4.0;

constexpr std::size_t kRecoveryN = 1000;
constexpr std::size_t kRecoveryReplicates = 50;
constexpr double kRecoveryRelTol = 0.10;
constexpr double kRecoveryShare = 0.90;

constexpr double kSweepPoints = 5.0;

constexpr std::size_t kJointRecords = 1000;
constexpr double kJointTol = 1e-12;
constexpr double kMaskFraction = 0.30;
constexpr double kMaskDropPoints = 5.0;

constexpr double kSlopeLo = 0.8, kSlopeHi = 1.3;
constexpr std::size_t kTimingIters = 30;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

EngineConfig bench_engine() {
  EngineConfig cfg;
  cfg.n_posterior_draws = 100;
  return cfg;
}

GridCell cell(std::size_t index, double sens, double spec, std::size_t n, double sigma, std::size_t reps, std::uint64_t tag) {
  return {index, sens, spec, n, sigma, reps, derive_seed(2020, {0xacce97u, tag})};
}

const BenchRow& row_of(const BenchResult& r, std::size_t cell_index, Method m) {
  for (const auto& row : r.rows) {
    if (row.cell.index == cell_index && row.method == m) return row;
  }
  throw std::logic_error("missing benchmark row");
}

// 1 --------------------------------------------------------------------------
Outcome posterior_oracle() {
  Rng rng(101);
  std::vector<SubjectRecord> recs;
  std::vector<Params> params;
  std::vector<HyperParams> hypers;
  for (std::size_t i = 0; i < kOraclePairs; ++i) {
    recs.push_back(testsupport::random_record(rng, 14, 2));
    params.push_back(testsupport::random_params(rng, 14, 2));
    hypers.push_back(testsupport::random_hyper(rng, 14));
  }
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (std::size_t i = 0; i < kOraclePairs; ++i) {
    const double fast = posterior_odds(recs[i], params[i]).p1;
    worst = std::max(worst, std::abs(fast - testsupport::enumerate_p1(recs[i], params[i], hypers[i])));
  }
  const double secs = seconds_since(t0);
  return {worst <= kPosteriorTol && secs < kPosteriorSeconds,
          "max |posterior - enumeration| = " + fmt("%.2e", worst) + " over 1000 pairs, " + fmt("%.3f", secs) + " s"};
}

// 2 --------------------------------------------------------------------------
Outcome mstep_optimality() {
  const auto t0 = Clock::now();
  Rng rng(202);
  double worst_rate = 0.0;
  for (std::size_t i = 0; i < kRateCases; ++i) {
    const auto b = static_cast<std::int64_t>(rng() % 500);
    const auto a = b ? static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(b + 1)) : 0;
    // shapes above 1 keep the term unimodal with an interior maximum
    const BetaPrior prior{testsupport::unif(rng, 1.0, 10.0), testsupport::unif(rng, 1.0, 10.0)};
    const auto post = conjugate_posterior({a, b}, prior);
    worst_rate = std::max(worst_rate, std::abs(update_rate({a, b}, prior) - testsupport::grid_argmax(post.alpha, post.beta, kRateGrid)));
  }
  double worst_beta = 0.0;
  for (std::size_t rep = 0; rep < kBetaCases; ++rep) {
    const int n = 300;
    DesignMatrix y(n, 1);
    std::vector<double> d(n);
    const double truth = testsupport::unif(rng, -2.0, 2.0);
    for (int i = 0; i < n; ++i) {
      y(i, 0) = testsupport::unif(rng, -2.0, 2.0);
      d[static_cast<std::size_t>(i)] = rng.bernoulli(sigmoid(truth * y(i, 0)));
    }
    const double sigma = testsupport::unif(rng, 0.1, 1.0);
    const double sb = testsupport::unif(rng, 0.5, 3.0);
    for (auto loss : {BetaLoss::squared, BetaLoss::bernoulli}) {
      const auto fit = fit_beta(y, d, sigma, sb, std::vector<double>{0.0}, {loss});
      double best = std::numeric_limits<double>::infinity();
      double arg = 0.0;
      for (int i = -60000; i <= 60000; ++i) {
        const double b = i * kBetaGrid;
        const double v = testsupport::objective_1d(y, d, sigma, sb, b, loss);
        if (v < best) {
          best = v;
          arg = b;
        }
      }
      worst_beta = std::max(worst_beta, std::abs(fit.beta[0] - arg));
    }
  }
  const double secs = seconds_since(t0);
  return {worst_rate <= kRateTol && worst_beta <= kBetaTol && secs < kMStepSeconds,
          "update_rate max grid gap " + fmt("%.2e", worst_rate) + " (1000 cases), fit_beta max grid gap " + fmt("%.2e", worst_beta) +
              " (20 fits x 2 losses), " + fmt("%.1f", secs) + " s"};
}

// 3 --------------------------------------------------------------------------
Outcome table_gain() {
  const std::vector<GridCell> cells{cell(0, 0.70, 0.70, 300, 0.5, kReplicates, 3), cell(1, 0.99, 0.99, 300, 0.5, kReplicates, 3)};
  const auto r = run_grid(cells, {Method::stem}, bench_engine());
  const auto& c70 = row_of(r, 0, Method::stem);
  const auto& c99 = row_of(r, 1, Method::stem);
  const bool ok = c70.failures == 0 && c99.failures == 0 && c70.mean_gain >= kGain70Lo && c70.mean_gain <= kGain70Hi &&
                  std::abs(c99.mean_gain) <= kGain99Abs && c70.mean_accuracy >= kAcc70Lo && c70.mean_accuracy <= kAcc70Hi;
  return {ok, "70/70 gain " + fmt("%.2f", c70.mean_gain) + " +- " + fmt("%.2f", c70.std_gain) + " in [12,20], accuracy " +
                  fmt("%.2f", c70.mean_accuracy) + " +- " + fmt("%.2f", c70.std_accuracy) + " in [82,91]; 99/99 gain " +
                  fmt("%.3f", c99.mean_gain) + " (|.| <= 1)"};
}

// 4 --------------------------------------------------------------------------
Outcome benchmark_ordering() {
  const std::vector<GridCell> cells{cell(0, 0.80, 0.80, 300, 0.5, kReplicates, 4)};
  const auto r = run_grid(cells, {Method::stem, Method::em_informed, Method::em_agnostic, Method::vanilla}, bench_engine());
  const double stem = row_of(r, 0, Method::stem).mean_accuracy;
  const double inf = row_of(r, 0, Method::em_informed).mean_accuracy;
  const double agn = row_of(r, 0, Method::em_agnostic).mean_accuracy;
  const double van = row_of(r, 0, Method::vanilla).mean_accuracy;
  std::size_t failures = 0;
  for (const auto& row : r.rows) failures += row.failures;
  return {failures == 0 && stem >= inf && inf >= agn && stem - van >= kVanillaMargin,
          "StEM " + fmt("%.2f", stem) + " >= informed EM " + fmt("%.2f", inf) + " >= agnostic EM " + fmt("%.2f", agn) +
              "; StEM - vanilla = " + fmt("%.2f", stem - van) + " (>= 4)"};
}

// 5 --------------------------------------------------------------------------
Outcome parameter_recovery() {
  const BenchOptions opt;
  const auto truth = random_truth(0.8, 0.8, opt.k, opt.m, 0.5, opt.etiology_seed, opt.etiology);
  const auto h = bench_hyper(truth, opt.k, opt);
  const auto names = parameter_names(truth.params);
  const std::size_t rates = 4 + 2 * opt.k;
  const auto target = detail::flatten(truth.params);
  std::vector<double> stem_hits(rates, 0.0), oracle_hits(rates, 0.0);
  const GridCell c = cell(0, 0.8, 0.8, kRecoveryN, 0.5, kRecoveryReplicates, 5);
  for (std::size_t rep = 0; rep < kRecoveryReplicates; ++rep) {
    const auto cohort = replicate_cohort(c, rep, truth, opt);
    EngineConfig cfg = bench_engine();
    cfg.seed = c.replicate_seed(rep);
    cfg.summarize_subjects = false;
    const auto est = detail::flatten(run_stem(cohort.data, h, cfg).summary.point_estimate);
    // same M-step fed the hidden diagnoses: the best any imputation could do
    Imputation known;
    known.d.assign(cohort.truth.begin(), cohort.truth.end());
    known.t.assign(cohort.truth.size(), 0);
    known.t_imputed.assign(cohort.truth.size(), 0);
    const auto oracle = detail::flatten(m_step(cohort.data, known, h, initial_params(h, opt.m + 1, false)));
    for (std::size_t j = 0; j < rates; ++j) {
      stem_hits[j] += std::abs(est[j] - target[j]) <= kRecoveryRelTol * target[j];
      oracle_hits[j] += std::abs(oracle[j] - target[j]) <= kRecoveryRelTol * target[j];
    }
  }
  double worst = 1.0, pooled = 0.0, oracle_worst = 1.0;
  std::size_t below = 0, oracle_below = 0;
  std::string worst_name;
  for (std::size_t j = 0; j < rates; ++j) {
    const double share = stem_hits[j] / static_cast<double>(kRecoveryReplicates);
    const double oshare = oracle_hits[j] / static_cast<double>(kRecoveryReplicates);
    pooled += share / static_cast<double>(rates);
    below += share < kRecoveryShare;
    oracle_below += oshare < kRecoveryShare;
    oracle_worst = std::min(oracle_worst, oshare);
    if (share < worst) {
      worst = share;
      worst_name = names[j];
    }
  }
  return {below == 0, std::to_string(below) + "/" + std::to_string(rates) + " rates below 90% within-10% (worst " + worst_name + " " +
                          fmt("%.2f", worst) + ", pooled " + fmt("%.3f", pooled) + "); known-D oracle: " + std::to_string(oracle_below) +
                          "/" + std::to_string(rates) + " below, worst " + fmt("%.2f", oracle_worst)};
}

// 6 --------------------------------------------------------------------------
// Gated on the single 80/80 baseline cell; the other sensitivities on the
// spec=80 row are swept the same way and reported alongside.
Outcome robustness_sweeps() {
  const std::vector<double> sens{0.80, 0.60, 0.70, 0.93, 0.99};
  const std::vector<std::pair<std::size_t, double>> settings{{300, 0.5}, {100, 0.5}, {200, 0.5}, {500, 0.5},
                                                             {1000, 0.5}, {300, 0.1}, {300, 1.0}};
  std::vector<GridCell> cells;
  for (std::size_t s = 0; s < sens.size(); ++s) {
    for (std::size_t k = 0; k < settings.size(); ++k) {
      cells.push_back(cell(cells.size(), sens[s], 0.80, settings[k].first, settings[k].second, kReplicates, 6));
    }
  }
  const auto r = run_grid(cells, {Method::stem}, bench_engine());
  std::size_t failures = 0;
  double gated = 0.0;
  std::string detail;
  for (std::size_t s = 0; s < sens.size(); ++s) {
    const double base = row_of(r, s * settings.size(), Method::stem).mean_accuracy;
    double worst = 0.0;
    std::string where;
    for (std::size_t k = 1; k < settings.size(); ++k) {
      const auto& row = row_of(r, s * settings.size() + k, Method::stem);
      failures += row.failures;
      const double dev = std::abs(row.mean_accuracy - base);
      if (dev > worst) {
        worst = dev;
        where = settings[k].second != 0.5 ? "sigma " + fmt("%.1f", settings[k].second) : "n " + std::to_string(settings[k].first);
      }
    }
    if (s == 0) {
      gated = worst;
      detail = "sens 0.80: baseline " + fmt("%.2f", base) + ", max deviation " + fmt("%.2f", worst) + " at " + where + " (<= 5); other sens:";
    } else {
      detail += " " + fmt("%.2f", sens[s]) + "->" + fmt("%.2f", worst) + " (" + where + ")";
    }
  }
  return {failures == 0 && gated <= kSweepPoints, detail};
}

// 7 --------------------------------------------------------------------------
Outcome missing_tests() {
  Rng rng(707);
  double worst = 0.0;
  for (std::size_t i = 0; i < kJointRecords; ++i) {
    const auto r = testsupport::random_record(rng, 14, 2, false);
    const auto p = testsupport::random_params(rng, 14, 2, true, i % 2 == 0);
    worst = std::max(worst, std::abs(joint_posterior_dt(r, p).marginal_d1() - posterior_odds_truncated(r, p).p1));
  }
  const std::vector<GridCell> cells{cell(0, 0.80, 0.80, 300, 0.5, kReplicates, 7)};
  const auto full = run_grid(cells, {Method::stem}, bench_engine());
  BenchOptions masked;
  masked.missing_t_fraction = kMaskFraction;
  const auto part = run_grid(cells, {Method::stem}, bench_engine(), masked);
  const double a = row_of(full, 0, Method::stem).mean_accuracy;
  const double b = row_of(part, 0, Method::stem).mean_accuracy;
  return {worst <= kJointTol && a - b < kMaskDropPoints,
          "max |joint marginal - truncated| = " + fmt("%.2e", worst) + "; accuracy " + fmt("%.2f", a) + " observed vs " + fmt("%.2f", b) +
              " with 30% T masked (drop " + fmt("%.2f", a - b) + " < 5)"};
}

// 8 --------------------------------------------------------------------------
Outcome scaling() {
  const auto truth = random_truth(0.8, 0.8, 14, 2, 0.5);
  const auto h = bench_hyper(truth, 14, BenchOptions{});
  std::vector<double> logn, logt;
  std::string detail;
  for (std::size_t n : {1000u, 10000u, 100000u}) {
    Rng rng(800 + n);
    const auto cohort = generate(truth, n, 14, 2, rng);
    EngineConfig cfg;
    cfg.max_iters = kTimingIters;
    cfg.burn_in = 10;
    cfg.conv_tol = 1e-300;  // fixed iteration count
    cfg.threads = 1;
    cfg.summarize_subjects = false;
    const auto res = run_stem(cohort.data, h, cfg);
    const double per_iter = quantile(res.chain.iteration_seconds, 0.5);
    logn.push_back(std::log(static_cast<double>(n)));
    logt.push_back(std::log(per_iter));
    detail += "n=" + std::to_string(n) + ": " + fmt("%.3g", per_iter * 1e3) + " ms/iter; ";
  }
  const double mx = (logn[0] + logn[1] + logn[2]) / 3.0, my = (logt[0] + logt[1] + logt[2]) / 3.0;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    sxy += (logn[i] - mx) * (logt[i] - my);
    sxx += (logn[i] - mx) * (logn[i] - mx);
  }
  const double slope = sxy / sxx;
  return {slope >= kSlopeLo && slope <= kSlopeHi, detail + "log-log slope " + fmt("%.3f", slope) + " in [0.8, 1.3]"};
}

// 9 --------------------------------------------------------------------------
std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int cli(const std::string& args) {
  const std::string cmd = std::string(STEMFUSE_CLI) + " " + args + " >/dev/null 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

Outcome determinism() {
  const fs::path root = fs::absolute("acceptance_tmp");
  fs::remove_all(root);
  fs::create_directories(root);
  std::ofstream(root / "cfg.json") << R"({"simulate": {"n": 300}, "engine": {"seed": 9}})";
  const std::string cfg = " --config " + (root / "cfg.json").string();
  if (cli("simulate" + cfg + " --out " + (root / "sim").string()) != 0) return {false, "simulate failed"};
  const std::string data = " --data " + (root / "sim" / "dataset.csv").string();
  // same output directory both times, so the manifests name the same paths
  const std::string out = " --out " + (root / "run").string();
  for (const char* copy : {"a", "b"}) {
    if (cli("fit" + cfg + data + out) != 0) return {false, "fit failed"};
    if (cli("diagnose" + cfg + data + out) != 0) return {false, "diagnose failed"};
    fs::rename(root / "run", root / copy);
  }
  std::size_t compared = 0, bytes = 0;
  for (const char* f : {"chain.tsv", "imputations.tsv", "summary.json", "parameter_posteriors.tsv", "subjects.tsv", "diagnose.tsv"}) {
    const auto a = slurp(root / "a" / f);
    if (a.empty() || a != slurp(root / "b" / f)) return {false, std::string(f) + " differs between identical runs"};
    ++compared;
    bytes += a.size();
  }
  fs::remove_all(root);
  return {true, std::to_string(compared) + " report files byte-identical across two runs (" + std::to_string(bytes) + " bytes)"};
}

// 10 -------------------------------------------------------------------------
Outcome diagnose_smoke() {
  const auto truth = random_truth(0.7, 0.7, 14, 2, 0.5);
  Rng rng(1010);
  const auto cohort = generate(truth, 300, 14, 2, rng);
  EngineConfig cfg;
  cfg.seed = 10;
  const auto res = run_stem(cohort.data, bench_hyper(truth, 14, BenchOptions{}), cfg);
  const auto rows = diagnose_subjects(cohort.data, res.chain, cfg);
  std::vector<double> widths;
  for (const auto& r : rows) widths.push_back(r.posterior.with_test->width());
  const double median = quantile(widths, 0.5);
  // Discordant: negative test, symptomatic with several symptoms, questionnaire says sick.
  const DiagnosisRow* discordant = nullptr;
  std::size_t symptoms = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& rec = cohort.data.records[i];
    const auto count = static_cast<std::size_t>(std::count(rec.x.begin(), rec.x.end(), 1));
    if (*rec.t == 0 && count >= 3 && rows[i].flag == "potential_false_negative" && count > symptoms) {
      discordant = &rows[i];
      symptoms = count;
    }
  }
  // Concordant: negative test, asymptomatic.
  const DiagnosisRow* concordant = nullptr;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (*cohort.data.records[i].t == 0 && cohort.data.records[i].s == 0 && rows[i].flag.empty()) {
      if (!concordant || rows[i].posterior.with_test->width() < concordant->posterior.with_test->width()) concordant = &rows[i];
    }
  }
  if (!discordant || !concordant) return {false, "no discordant negative with >= 3 symptoms was flagged"};
  const double wd = discordant->posterior.with_test->width();
  const double wc = concordant->posterior.with_test->width();
  return {wd > median && wd > wc,
          discordant->id + " (T=0, " + std::to_string(symptoms) + " symptoms, questionnaire " + fmt("%.2f", discordant->posterior.questionnaire.mean) +
              ") flagged potential_false_negative, width " + fmt("%.3f", wd) + " > cohort median " + fmt("%.3f", median) +
              "; concordant " + concordant->id + " (T=0, asymptomatic) width " + fmt("%.3f", wc)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"posterior oracle equivalence", posterior_oracle},
      {"M-step optimality", mstep_optimality},
      {"gain over T at desk scale", table_gain},
      {"benchmark ordering at 80/80", benchmark_ordering},
      {"parameter recovery", parameter_recovery},
      {"robustness sweeps", robustness_sweeps},
      {"missing-T correctness", missing_tests},
      {"per-iteration scaling", scaling},
      {"determinism", determinism},
      {"diagnose smoke test", diagnose_smoke},
  };
  // optional argument: run a single criterion by number
  const int only = argc > 1 ? std::atoi(argv[1]) : 0;
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (only && static_cast<int>(i + 1) != only) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::printf("criterion %2zu %s: %s | %s [%.1f s]\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first, o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
