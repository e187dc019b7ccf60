// stemfuse: simulate / fit / diagnose / benchmark.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "stemfuse/bench.hpp"
#include "stemfuse/config.hpp"
#include "stemfuse/dataset_io.hpp"
#include "stemfuse/engine.hpp"
#include "stemfuse/report.hpp"
#include "stemfuse/synth.hpp"

namespace fs = std::filesystem;
using namespace stemfuse;

namespace {

constexpr int kExitError = 1;
constexpr int kExitStrictWarnings = 3;

struct Options {
  std::string config;
  std::string data;
  std::string out = ".";
  std::string chain;
  std::optional<std::uint64_t> seed;
  bool strict = false;
  std::string missing_t;
  std::string beta_loss;
};

struct Context {
  RunConfig cfg;
  RunManifest manifest;
  std::vector<std::string> warnings;
};

Context prepare(const Options& o, const std::string& command) {
  Context c;
  if (!o.config.empty()) {
    std::string raw;
    c.cfg = load_config(o.config, &raw);
    c.manifest.inputs.push_back({"config", o.config, sha256_hex(raw)});
  }
  c.warnings = c.cfg.warnings;
  if (!o.missing_t.empty()) c.cfg.engine.missing_t_mode = parse_missing_t(o.missing_t);
  if (!o.beta_loss.empty()) c.cfg.engine.beta_loss = parse_beta_loss(o.beta_loss);
  if (o.seed) {
    c.cfg.engine.seed = *o.seed;
    c.cfg.simulate.seed = *o.seed;
    c.cfg.benchmark.axes.seed = *o.seed;
  }
  c.cfg.engine.validate();
  c.manifest.command = command;
  c.manifest.config = to_json(c.cfg);
  fs::create_directories(o.out);
  return c;
}

Dataset load_data(const Options& o, Context& c) {
  if (o.data.empty()) throw std::invalid_argument("--data is required");
  const std::string raw = read_file(o.data);
  c.manifest.inputs.push_back({"data", o.data, sha256_hex(raw)});
  std::istringstream in(raw);
  return parse_dataset(in, {}, o.data);
}

std::string path_in(const Options& o, const char* name) { return (fs::path(o.out) / name).string(); }

int finish(const Options& o, const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  return (o.strict && !warnings.empty()) ? kExitStrictWarnings : 0;
}

int cmd_simulate(const Options& o) {
  auto c = prepare(o, "simulate");
  const auto& s = c.cfg.simulate;
  c.manifest.seed = s.seed;
  const TrueParams truth = random_truth(s.sensitivity, s.specificity, s.k, s.m, s.sigma, s.etiology_seed);
  Rng rng(s.seed);
  auto cohort = generate(truth, s.n, s.k, s.m, rng);
  if (s.missing_t_fraction > 0.0) mask_tests(cohort.data, s.missing_t_fraction, rng);

  std::ostringstream data;
  data << c.manifest.header_line();
  write_dataset(data, cohort.data);
  write_file(path_in(o, "dataset.csv"), data.str());
  std::ostringstream tr;
  tr << c.manifest.header_line();
  write_truth(tr, cohort.data, cohort.truth);
  write_file(path_in(o, "truth.csv"), tr.str());
  write_json(path_in(o, "truth.json"), c.manifest, {{"params", params_json(truth.params)}, {"sigma", truth.sigma}});
  std::cout << "simulated " << s.n << " subjects into " << o.out << '\n';
  return finish(o, c.warnings);
}

int cmd_fit(const Options& o) {
  auto c = prepare(o, "fit");
  const Dataset data = load_data(o, c);
  c.manifest.seed = c.cfg.engine.seed;
  const HyperParams h = c.cfg.priors.resolve(data.k_symptoms);
  const StemResult r = run_stem(data, h, c.cfg.engine);
  if (r.chain.stop != StopReason::converged) {
    c.warnings.push_back("chain stopped at max_iters=" + std::to_string(r.chain.iterations) + " without converging");
  }

  write_file(path_in(o, "chain.tsv"), chain_table(r.chain, c.manifest));
  write_file(path_in(o, "imputations.tsv"), imputation_table(r.chain, c.manifest));
  write_json(path_in(o, "summary.json"), c.manifest, summary_json(r));
  write_file(path_in(o, "parameter_posteriors.tsv"), parameter_table(r.summary.parameters, c.manifest));
  const auto rows = diagnose_subjects(data, r.chain, c.cfg.engine);
  write_file(path_in(o, "subjects.tsv"), diagnosis_table(rows, c.manifest));

  json timing = {{"iterations", r.chain.iterations}, {"iteration_seconds", r.chain.iteration_seconds}};
  double total = 0.0;
  for (double s : r.chain.iteration_seconds) total += s;
  timing["total_seconds"] = total;
  write_json(path_in(o, "timing.json"), c.manifest, {{"timing", timing}});

  std::cout << "fit: " << r.chain.iterations << " iterations (" << to_string(r.chain.stop) << "), outputs in " << o.out << '\n';
  return finish(o, c.warnings);
}

int cmd_diagnose(const Options& o) {
  auto c = prepare(o, "diagnose");
  const Dataset data = load_data(o, c);
  c.manifest.seed = c.cfg.engine.seed;
  const std::string chain_path = o.chain.empty() ? path_in(o, "chain.tsv") : o.chain;
  const std::string raw = read_file(chain_path);
  c.manifest.inputs.push_back({"chain", chain_path, sha256_hex(raw)});
  std::istringstream in(raw);
  const Chain chain = read_chain(in);
  if (!chain.snapshots.empty() && chain.snapshots.front().s0.size() != data.k_symptoms) {
    throw std::invalid_argument("chain has " + std::to_string(chain.snapshots.front().s0.size()) + " symptoms, data has " +
                                std::to_string(data.k_symptoms));
  }
  if (chain.post_burn_in_count() == 0) throw std::invalid_argument("chain has no post-burn-in snapshots");
  const auto rows = diagnose_subjects(data, chain, c.cfg.engine);
  write_file(path_in(o, "diagnose.tsv"), diagnosis_table(rows, c.manifest));
  std::size_t flagged = 0;
  for (const auto& r : rows) flagged += r.flag.empty() ? 0 : 1;
  std::cout << "diagnose: " << rows.size() << " subjects, " << flagged << " flagged, written to " << path_in(o, "diagnose.tsv") << '\n';
  return finish(o, c.warnings);
}

int cmd_benchmark(const Options& o) {
  auto c = prepare(o, "benchmark");
  const auto& b = c.cfg.benchmark;
  c.manifest.seed = b.axes.seed;
  BenchOptions opt;
  opt.k = b.axes.k;
  opt.m = b.axes.m;
  opt.test_prior_sd = b.test_prior_sd;
  opt.sigma_beta = b.sigma_beta;
  opt.missing_t_fraction = b.missing_t_fraction;
  opt.vanilla.bootstrap = b.vanilla_bootstrap;
  opt.threads = c.cfg.engine.threads;
  const auto cells = grid_spec(b.axes);
  const BenchResult r = run_grid(cells, b.methods, c.cfg.engine, opt);
  for (const auto& row : r.rows) {
    if (row.failures) {
      c.warnings.push_back("cell " + std::to_string(row.cell.index) + " " + to_string(row.method) + ": " +
                           std::to_string(row.failures) + " failed replicate(s)");
    }
  }
  write_file(path_in(o, "benchmark.tsv"), benchmark_table(r, c.manifest));
  write_file(path_in(o, "benchmark_timing.tsv"), benchmark_timing_table(r, c.manifest));
  json truths = json::array();
  for (std::size_t i = 0; i < r.truths.size(); ++i) {
    truths.push_back({{"cell", i}, {"params", params_json(r.truths[i].params)}, {"sigma", r.truths[i].sigma}});
  }
  write_json(path_in(o, "benchmark_truth.json"), c.manifest, {{"cells", truths}});
  std::cout << "benchmark: " << cells.size() << " cell(s) x " << b.methods.size() << " method(s), outputs in " << o.out << '\n';
  return finish(o, c.warnings);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fuse noisy diagnostic tests with questionnaires by stochastic EM"};
  app.require_subcommand(1);
  Options o;

  const auto common = [&](CLI::App* sub, bool needs_data) {
    sub->add_option("--config", o.config, "JSON config file (or a summary.json whose manifest should be replayed)")
        ->check(CLI::ExistingFile);
    auto* d = sub->add_option("--data", o.data, "dataset CSV")->check(CLI::ExistingFile);
    if (needs_data) d->required();
    sub->add_option("--out", o.out, "output directory")->capture_default_str();
    sub->add_option("--seed", o.seed, "seed override");
    sub->add_flag("--strict", o.strict, "exit with status 3 when warnings were emitted");
    sub->add_option("--missing-t", o.missing_t, "records without a test result")->check(CLI::IsMember({"truncated", "impute"}));
    sub->add_option("--beta-loss", o.beta_loss, "risk-factor regression loss")->check(CLI::IsMember({"squared", "bernoulli"}));
  };
  auto* simulate = app.add_subcommand("simulate", "draw a synthetic cohort with hidden diagnoses");
  common(simulate, false);
  auto* fit = app.add_subcommand("fit", "run stochastic EM on a dataset");
  common(fit, true);
  auto* diagnose = app.add_subcommand("diagnose", "per-subject posteriors from a fitted chain");
  common(diagnose, true);
  diagnose->add_option("--chain", o.chain, "chain table (default <out>/chain.tsv)");
  auto* benchmark = app.add_subcommand("benchmark", "grid experiment against the baselines");
  common(benchmark, false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (simulate->parsed()) return cmd_simulate(o);
    if (fit->parsed()) return cmd_fit(o);
    if (diagnose->parsed()) return cmd_diagnose(o);
    if (benchmark->parsed()) return cmd_benchmark(o);
  } catch (const IngestError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  } catch (const DatasetError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  } catch (const StemError& e) {
    std::cerr << "error: " << e.what() << " (after " << e.chain().iterations << " iterations)\n";
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}
