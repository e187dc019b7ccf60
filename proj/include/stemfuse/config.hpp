// Run configuration: priors (as moments, shapes, or "noninformative"),
// engine settings, simulation and benchmark settings, read from one JSON file.

#pragma once

#include <nlohmann/json.hpp>

#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bench.hpp"
#include "engine.hpp"
#include "model.hpp"
#include "synth.hpp"

namespace stemfuse {

using json = nlohmann::json;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One Beta prior as written in a config: moments, shapes, or non-informative.
struct PriorSpec {
  enum class Kind { noninformative, moments, shape } kind = Kind::noninformative;
  double a = 0.5;  // mean or alpha
  double b = 0.5;  // variance or beta

  [[nodiscard]] static PriorSpec shape_of(const BetaPrior& p) { return {Kind::shape, p.alpha, p.beta}; }

  [[nodiscard]] BetaPrior resolve() const {
    switch (kind) {
      case Kind::noninformative: return noninformative_prior();
      case Kind::moments: return moment_match_beta(a, b);
      case Kind::shape: {
        const BetaPrior p{a, b};
        if (!p.valid()) throw ConfigError("prior shapes must be positive");
        return p;
      }
    }
    return noninformative_prior();
  }
};

inline void to_json(json& j, const PriorSpec& p) {
  switch (p.kind) {
    case PriorSpec::Kind::noninformative: j = "noninformative"; break;
    case PriorSpec::Kind::moments: j = json{{"mean", p.a}, {"variance", p.b}}; break;
    case PriorSpec::Kind::shape: j = json{{"alpha", p.a}, {"beta", p.b}}; break;
  }
}

inline void from_json(const json& j, PriorSpec& p) {
  if (j.is_string()) {
    if (j.get<std::string>() != "noninformative") throw ConfigError("unknown prior keyword: " + j.get<std::string>());
    p = PriorSpec{};
  } else if (j.is_object() && j.contains("mean")) {
    p = {PriorSpec::Kind::moments, j.at("mean").get<double>(), j.at("variance").get<double>()};
  } else if (j.is_object() && j.contains("alpha")) {
    p = {PriorSpec::Kind::shape, j.at("alpha").get<double>(), j.at("beta").get<double>()};
  } else {
    throw ConfigError("prior must be \"noninformative\", {mean, variance} or {alpha, beta}");
  }
}

struct HyperSpec {
  PriorSpec x, y, p0, p1;
  std::vector<PriorSpec> s0{PriorSpec{}};  // one entry broadcasts to every symptom
  std::vector<PriorSpec> s1{PriorSpec{}};
  PriorSpec imputed_x{PriorSpec::Kind::shape, 2.0, 2.0};
  PriorSpec imputed_y{PriorSpec::Kind::shape, 2.0, 2.0};
  double sigma_beta = 1.0;
  double sigma = 1.0;

  [[nodiscard]] HyperParams resolve(std::size_t k) const {
    const auto family = [k](const std::vector<PriorSpec>& specs, const char* name) {
      std::vector<BetaPrior> out;
      if (specs.size() == 1) {
        out.assign(k, specs.front().resolve());
      } else if (specs.size() == k) {
        for (const auto& s : specs) out.push_back(s.resolve());
      } else {
        throw ConfigError(std::string("priors.") + name + " has " + std::to_string(specs.size()) +
                          " entries; expected 1 or " + std::to_string(k));
      }
      return out;
    };
    HyperParams h;
    h.prior_x = x.resolve();
    h.prior_y = y.resolve();
    h.prior_p0 = p0.resolve();
    h.prior_p1 = p1.resolve();
    h.prior_s0 = family(s0, "s0");
    h.prior_s1 = family(s1, "s1");
    h.prior_imputed_x = imputed_x.resolve();
    h.prior_imputed_y = imputed_y.resolve();
    h.sigma_beta = sigma_beta;
    h.sigma = sigma;
    h.validate();
    return h;
  }
};

struct SimulateSpec {
  std::size_t n = 300;
  double sensitivity = 0.8;
  double specificity = 0.8;
  double sigma = 0.5;
  std::size_t k = 14;
  std::size_t m = 2;
  double missing_t_fraction = 0.0;
  std::uint64_t etiology_seed = 2020;
  std::uint64_t seed = 1;
};

struct BenchmarkSpec {
  GridAxes axes;
  std::vector<Method> methods{Method::stem, Method::em_informed, Method::em_agnostic, Method::vanilla};
  double test_prior_sd = 0.05;
  double sigma_beta = 1.0;
  double missing_t_fraction = 0.0;
  std::size_t vanilla_bootstrap = 0;
};

struct RunConfig {
  HyperSpec priors;
  EngineConfig engine;
  SimulateSpec simulate;
  BenchmarkSpec benchmark;
  std::vector<std::string> warnings;  // unknown keys and similar
};

[[nodiscard]] inline const char* to_string(BetaLoss l) noexcept { return l == BetaLoss::squared ? "squared" : "bernoulli"; }
[[nodiscard]] inline const char* to_string(MissingTMode m) noexcept {
  return m == MissingTMode::truncated ? "truncated" : "joint_imputation";
}

[[nodiscard]] inline BetaLoss parse_beta_loss(const std::string& s) {
  if (s == "squared") return BetaLoss::squared;
  if (s == "bernoulli") return BetaLoss::bernoulli;
  throw ConfigError("beta_loss must be squared or bernoulli, got " + s);
}

[[nodiscard]] inline MissingTMode parse_missing_t(const std::string& s) {
  if (s == "truncated") return MissingTMode::truncated;
  if (s == "joint_imputation" || s == "impute") return MissingTMode::joint_imputation;
  throw ConfigError("missing_t_mode must be truncated or impute, got " + s);
}

namespace detail {

inline void check_keys(const json& j, const std::set<std::string>& known, const std::string& where,
                       std::vector<std::string>& warnings) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) warnings.push_back("unknown config key " + where + "." + key);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

[[nodiscard]] inline RunConfig parse_config(const json& root) {
  RunConfig c;
  // A manifest carries the effective config of the run it describes.
  const json& j = root.contains("manifest") && root.at("manifest").contains("config") ? root.at("manifest").at("config") : root;
  try {
    detail::check_keys(j, {"priors", "sigma_beta", "sigma", "engine", "simulate", "benchmark"}, "config", c.warnings);
    auto& h = c.priors;
    if (j.contains("priors")) {
      const auto& p = j.at("priors");
      detail::check_keys(p, {"x", "y", "p0", "p1", "s0", "s1", "imputed_x", "imputed_y"}, "priors", c.warnings);
      detail::read(p, "x", h.x);
      detail::read(p, "y", h.y);
      detail::read(p, "p0", h.p0);
      detail::read(p, "p1", h.p1);
      for (const char* fam : {"s0", "s1"}) {
        if (!p.contains(fam)) continue;
        auto& dst = std::string(fam) == "s0" ? h.s0 : h.s1;
        dst = p.at(fam).is_array() ? p.at(fam).get<std::vector<PriorSpec>>() : std::vector<PriorSpec>{p.at(fam).get<PriorSpec>()};
      }
      detail::read(p, "imputed_x", h.imputed_x);
      detail::read(p, "imputed_y", h.imputed_y);
    }
    detail::read(j, "sigma_beta", h.sigma_beta);
    detail::read(j, "sigma", h.sigma);

    if (j.contains("engine")) {
      const auto& e = j.at("engine");
      detail::check_keys(e, {"max_iters", "burn_in", "conv_tol", "conv_window", "seed", "intercept", "beta_loss",
                             "missing_t_mode", "imputed_class_enabled", "n_posterior_draws", "threads"},
                         "engine", c.warnings);
      auto& g = c.engine;
      detail::read(e, "max_iters", g.max_iters);
      if (e.contains("burn_in") && !e.at("burn_in").is_null()) g.burn_in = e.at("burn_in").get<std::size_t>();
      detail::read(e, "conv_tol", g.conv_tol);
      detail::read(e, "conv_window", g.conv_window);
      detail::read(e, "seed", g.seed);
      detail::read(e, "intercept", g.intercept);
      if (e.contains("beta_loss")) g.beta_loss = parse_beta_loss(e.at("beta_loss").get<std::string>());
      if (e.contains("missing_t_mode")) g.missing_t_mode = parse_missing_t(e.at("missing_t_mode").get<std::string>());
      detail::read(e, "imputed_class_enabled", g.imputed_class_enabled);
      detail::read(e, "n_posterior_draws", g.n_posterior_draws);
      detail::read(e, "threads", g.threads);
    }

    if (j.contains("simulate")) {
      const auto& s = j.at("simulate");
      detail::check_keys(s, {"n", "sensitivity", "specificity", "sigma", "k", "m", "missing_t_fraction", "etiology_seed", "seed"},
                         "simulate", c.warnings);
      auto& sim = c.simulate;
      detail::read(s, "n", sim.n);
      detail::read(s, "sensitivity", sim.sensitivity);
      detail::read(s, "specificity", sim.specificity);
      detail::read(s, "sigma", sim.sigma);
      detail::read(s, "k", sim.k);
      detail::read(s, "m", sim.m);
      detail::read(s, "missing_t_fraction", sim.missing_t_fraction);
      detail::read(s, "etiology_seed", sim.etiology_seed);
      detail::read(s, "seed", sim.seed);
    }

    if (j.contains("benchmark")) {
      const auto& b = j.at("benchmark");
      detail::check_keys(b, {"sensitivity", "specificity", "n", "sigma", "replicates", "k", "m", "seed", "methods",
                             "test_prior_sd", "sigma_beta", "missing_t_fraction", "vanilla_bootstrap"},
                         "benchmark", c.warnings);
      auto& bs = c.benchmark;
      detail::read(b, "sensitivity", bs.axes.sensitivity);
      detail::read(b, "specificity", bs.axes.specificity);
      detail::read(b, "n", bs.axes.n);
      detail::read(b, "sigma", bs.axes.sigma);
      detail::read(b, "replicates", bs.axes.replicates);
      detail::read(b, "k", bs.axes.k);
      detail::read(b, "m", bs.axes.m);
      detail::read(b, "seed", bs.axes.seed);
      if (b.contains("methods")) {
        bs.methods.clear();
        for (const auto& m : b.at("methods")) bs.methods.push_back(parse_method(m.get<std::string>()));
      }
      detail::read(b, "test_prior_sd", bs.test_prior_sd);
      detail::read(b, "sigma_beta", bs.sigma_beta);
      detail::read(b, "missing_t_fraction", bs.missing_t_fraction);
      detail::read(b, "vanilla_bootstrap", bs.vanilla_bootstrap);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.engine.validate();
  return c;
}

[[nodiscard]] inline RunConfig load_config(const std::string& path, std::string* raw = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  if (raw) *raw = ss.str();
  try {
    return parse_config(json::parse(ss.str()));
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

/// The effective configuration, complete enough to reproduce a run.
[[nodiscard]] inline json to_json(const RunConfig& c) {
  json j;
  auto& p = j["priors"];
  p["x"] = c.priors.x;
  p["y"] = c.priors.y;
  p["p0"] = c.priors.p0;
  p["p1"] = c.priors.p1;
  p["s0"] = c.priors.s0;
  p["s1"] = c.priors.s1;
  p["imputed_x"] = c.priors.imputed_x;
  p["imputed_y"] = c.priors.imputed_y;
  j["sigma_beta"] = c.priors.sigma_beta;
  j["sigma"] = c.priors.sigma;
  const auto& e = c.engine;
  j["engine"] = {{"max_iters", e.max_iters},
                 {"burn_in", e.effective_burn_in()},
                 {"conv_tol", e.conv_tol},
                 {"conv_window", e.conv_window},
                 {"seed", e.seed},
                 {"intercept", e.intercept},
                 {"beta_loss", to_string(e.beta_loss)},
                 {"missing_t_mode", to_string(e.missing_t_mode)},
                 {"imputed_class_enabled", e.imputed_class_enabled},
                 {"n_posterior_draws", e.n_posterior_draws}};
  const auto& s = c.simulate;
  j["simulate"] = {{"n", s.n},         {"sensitivity", s.sensitivity}, {"specificity", s.specificity},
                   {"sigma", s.sigma}, {"k", s.k},                     {"m", s.m},
                   {"missing_t_fraction", s.missing_t_fraction}, {"etiology_seed", s.etiology_seed}, {"seed", s.seed}};
  const auto& b = c.benchmark;
  std::vector<std::string> methods;
  for (auto m : b.methods) methods.emplace_back(to_string(m));
  j["benchmark"] = {{"sensitivity", b.axes.sensitivity}, {"specificity", b.axes.specificity}, {"n", b.axes.n},
                    {"sigma", b.axes.sigma},             {"replicates", b.axes.replicates},   {"k", b.axes.k},
                    {"m", b.axes.m},                     {"seed", b.axes.seed},               {"methods", methods},
                    {"test_prior_sd", b.test_prior_sd},  {"sigma_beta", b.sigma_beta},
                    {"missing_t_fraction", b.missing_t_fraction}, {"vanilla_bootstrap", b.vanilla_bootstrap}};
  return j;
}

}  // namespace stemfuse
