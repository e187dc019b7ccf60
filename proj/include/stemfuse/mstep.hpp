// M-step: closed-form Beta-mode updates for every rate family and a
// penalized Newton fit for the risk-factor weights.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "estep.hpp"
#include "model.hpp"

namespace stemfuse {

/// Bernoulli pseudo-counts: `successes` out of `trials`.
struct Counts {
  std::int64_t successes = 0;
  std::int64_t trials = 0;

  void add(bool success) noexcept {
    successes += success ? 1 : 0;
    trials += 1;
  }
  friend bool operator==(const Counts&, const Counts&) = default;
};

struct SufficientStats {
  Counts x;   // T=1 among D=1
  Counts y;   // T=1 among D=0
  Counts p0;  // S=1 among D=0
  Counts p1;  // S=1 among D=1
  std::vector<Counts> s0;  // X_k=1 among S=1, D=0
  std::vector<Counts> s1;  // X_k=1 among S=1, D=1
  std::optional<Counts> imputed_x;
  std::optional<Counts> imputed_y;
  std::vector<double> labels;  // imputed D as reals, the beta-fit targets

  friend bool operator==(const SufficientStats&, const SufficientStats&) = default;
};

/// Counts every rate family from the current imputation. A missing test that was
/// imputed counts toward the imputed class when `imputed_class` is set, otherwise
/// toward the main class; a missing test left unimputed counts toward neither.
[[nodiscard]] inline SufficientStats accumulate_stats(const Dataset& data, const Imputation& imp, bool imputed_class) {
  const std::size_t n = data.size();
  if (imp.d.size() != n) throw std::invalid_argument("accumulate_stats: imputation length mismatch");
  SufficientStats st;
  st.s0.assign(data.k_symptoms, {});
  st.s1.assign(data.k_symptoms, {});
  if (imputed_class) {
    st.imputed_x.emplace();
    st.imputed_y.emplace();
  }
  st.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = data.records[i];
    const bool d = imp.d[i] != 0;
    st.labels[i] = d ? 1.0 : 0.0;

    std::optional<int> t = r.t;
    bool routed_imputed = false;
    if (!t && i < imp.t_imputed.size() && imp.t_imputed[i]) {
      t = imp.t[i];
      routed_imputed = imputed_class;
    }
    if (t) {
      Counts& c = routed_imputed ? (d ? *st.imputed_x : *st.imputed_y) : (d ? st.x : st.y);
      c.add(*t != 0);
    }

    (d ? st.p1 : st.p0).add(r.s != 0);
    if (r.s != 0) {
      auto& fam = d ? st.s1 : st.s0;
      for (std::size_t k = 0; k < r.x.size(); ++k) fam[k].add(r.x[k] != 0);
    }
  }
  return st;
}

/// Maximizer of the Beta(a + alpha, b - a + beta) kernel: its mode when both
/// shapes exceed 1, otherwise its mean.
[[nodiscard]] inline double update_rate(const Counts& c, const BetaPrior& prior) {
  if (c.successes < 0 || c.successes > c.trials) throw std::invalid_argument("update_rate: need 0 <= a <= b");
  const BetaPrior post{static_cast<double>(c.successes) + prior.alpha,
                       static_cast<double>(c.trials - c.successes) + prior.beta};
  return clamp_prob(post.point());
}

/// Conjugate posterior of a rate given its counts.
[[nodiscard]] inline BetaPrior conjugate_posterior(const Counts& c, const BetaPrior& prior) noexcept {
  return {static_cast<double>(c.successes) + prior.alpha, static_cast<double>(c.trials - c.successes) + prior.beta};
}

enum class BetaLoss { squared, bernoulli };

using DesignMatrix = Eigen::MatrixXd;

/// n x (M + intercept) design; the intercept column comes first.
[[nodiscard]] inline DesignMatrix design_matrix(const Dataset& data, bool intercept) {
  const auto n = static_cast<Eigen::Index>(data.size());
  const auto off = static_cast<Eigen::Index>(intercept ? 1 : 0);
  DesignMatrix y(n, static_cast<Eigen::Index>(data.m_factors) + off);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = data.records[static_cast<std::size_t>(i)];
    if (intercept) y(i, 0) = 1.0;
    for (std::size_t m = 0; m < r.y.size(); ++m) y(i, static_cast<Eigen::Index>(m) + off) = r.y[m];
  }
  return y;
}

struct FitBetaOptions {
  BetaLoss loss = BetaLoss::squared;
  int max_iters = 100;
  double grad_tol = 1e-8;
  double backtrack = 0.5;
};

struct FitBetaResult {
  std::vector<double> beta;
  double objective = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
};

class FitBetaError : public std::runtime_error {
 public:
  FitBetaError(const std::string& what, std::vector<double> best, double grad_norm)
      : std::runtime_error(what), best_(std::move(best)), grad_norm_(grad_norm) {}
  [[nodiscard]] const std::vector<double>& best_iterate() const noexcept { return best_; }
  [[nodiscard]] double grad_norm() const noexcept { return grad_norm_; }

 private:
  std::vector<double> best_;
  double grad_norm_;
};

/// The penalized risk-factor objective and its derivatives.
class BetaObjective {
 public:
  BetaObjective(const DesignMatrix& design, std::span<const double> labels, double sigma, double sigma_beta,
                BetaLoss loss)
      : y_(design), d_(Eigen::Map<const Eigen::VectorXd>(labels.data(), static_cast<Eigen::Index>(labels.size()))),
        inv_s2_(1.0 / (sigma * sigma)), inv_sb2_(1.0 / (sigma_beta * sigma_beta)), loss_(loss) {
    if (design.rows() != d_.size()) throw std::invalid_argument("fit_beta: design rows != labels");
    if (!(sigma > 0.0) || !(sigma_beta > 0.0)) throw std::invalid_argument("fit_beta: scales must be positive");
  }

  [[nodiscard]] double value(const Eigen::VectorXd& b) const {
    const Eigen::VectorXd z = y_ * b;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      if (loss_ == BetaLoss::squared) {
        const double r = d_[i] - sigmoid(z[i]);
        acc += 0.5 * inv_s2_ * r * r;
      } else {
        acc -= d_[i] * log_sigmoid(z[i]) + (1.0 - d_[i]) * log_one_minus_sigmoid(z[i]);
      }
    }
    return acc + 0.5 * inv_sb2_ * b.squaredNorm();
  }

  void derivatives(const Eigen::VectorXd& b, Eigen::VectorXd& grad, Eigen::MatrixXd& hess) const {
    const Eigen::VectorXd z = y_ * b;
    Eigen::VectorXd gw(z.size());
    Eigen::VectorXd hw(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      const double g = sigmoid(z[i]);
      const double gp = g * (1.0 - g);
      if (loss_ == BetaLoss::squared) {
        const double r = g - d_[i];
        gw[i] = inv_s2_ * r * gp;
        hw[i] = inv_s2_ * (gp * gp + r * gp * (1.0 - 2.0 * g));
      } else {
        gw[i] = g - d_[i];
        hw[i] = gp;
      }
    }
    grad = y_.transpose() * gw + inv_sb2_ * b;
    hess = y_.transpose() * hw.asDiagonal() * y_;
    hess.diagonal().array() += inv_sb2_;
  }

 private:
  const DesignMatrix& y_;
  Eigen::Map<const Eigen::VectorXd> d_;
  double inv_s2_;
  double inv_sb2_;
  BetaLoss loss_;
};

/// Minimizes the penalized objective by Newton-Raphson with backtracking. When
/// the Hessian is not positive definite it is shifted toward a scaled identity,
/// which bends the step toward steepest descent.
[[nodiscard]] inline FitBetaResult fit_beta(const DesignMatrix& design, std::span<const double> labels, double sigma,
                                            double sigma_beta, std::span<const double> init,
                                            const FitBetaOptions& opt = {}) {
  const BetaObjective f(design, labels, sigma, sigma_beta, opt.loss);
  const auto p = design.cols();
  if (static_cast<Eigen::Index>(init.size()) != p) throw std::invalid_argument("fit_beta: init arity mismatch");

  Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(init.data(), p);
  Eigen::VectorXd grad(p);
  Eigen::MatrixXd hess(p, p);
  double fb = f.value(b);
  const auto to_vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };

  for (int it = 0; it <= opt.max_iters; ++it) {
    f.derivatives(b, grad, hess);
    const double gnorm = grad.norm();
    if (gnorm < opt.grad_tol) return {to_vec(b), fb, gnorm, it};
    if (it == opt.max_iters) break;

    Eigen::VectorXd step;
    Eigen::LLT<Eigen::MatrixXd> llt(hess);
    if (llt.info() == Eigen::Success) {
      step = -llt.solve(grad);
    } else {
      const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(hess);
      const double shift = std::abs(eig.eigenvalues().minCoeff()) + 1e-3 * std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
      Eigen::MatrixXd damped = hess;
      damped.diagonal().array() += shift;
      step = -damped.llt().solve(grad);
    }

    const double slope = grad.dot(step);
    const double roundoff = 1e-13 * std::max(1.0, std::abs(fb));
    double t = 1.0;
    bool accepted = false;
    for (int k = 0; k < 60; ++k) {
      const Eigen::VectorXd cand = b + t * step;
      const double fc = f.value(cand);
      if (fc <= fb + 1e-4 * t * slope || (std::abs(slope) * t < roundoff && fc <= fb + roundoff)) {
        b = cand;
        fb = std::min(fb, fc);
        accepted = true;
        break;
      }
      t *= opt.backtrack;
    }
    if (!accepted) {
      throw FitBetaError("fit_beta: line search stalled with gradient norm " + std::to_string(gnorm), to_vec(b), gnorm);
    }
  }
  throw FitBetaError("fit_beta: no convergence after " + std::to_string(opt.max_iters) + " iterations, gradient norm " +
                         std::to_string(grad.norm()),
                     to_vec(b), grad.norm());
}

struct MStepOptions {
  bool intercept = true;
  bool imputed_class = false;
  FitBetaOptions beta_fit;
};

/// Rate updates from precomputed statistics, beta warm-started at `current`.
[[nodiscard]] inline Params m_step_from_stats(const SufficientStats& st, const DesignMatrix& design,
                                              const HyperParams& h, const Params& current, const MStepOptions& opt) {
  Params next;
  next.x = update_rate(st.x, h.prior_x);
  next.y = update_rate(st.y, h.prior_y);
  next.p0 = update_rate(st.p0, h.prior_p0);
  next.p1 = update_rate(st.p1, h.prior_p1);
  next.s0.resize(st.s0.size());
  next.s1.resize(st.s1.size());
  for (std::size_t k = 0; k < st.s0.size(); ++k) {
    next.s0[k] = update_rate(st.s0[k], h.prior_s0[k]);
    next.s1[k] = update_rate(st.s1[k], h.prior_s1[k]);
  }
  if (opt.imputed_class) {
    next.imputed = TestRates{update_rate(st.imputed_x.value_or(Counts{}), h.prior_imputed_x),
                             update_rate(st.imputed_y.value_or(Counts{}), h.prior_imputed_y)};
  }
  next.beta = fit_beta(design, st.labels, h.sigma, h.sigma_beta, current.beta, opt.beta_fit).beta;
  return next;
}

[[nodiscard]] inline Params m_step(const Dataset& data, const Imputation& imp, const HyperParams& h,
                                   const Params& current, const MStepOptions& opt = {}) {
  const auto st = accumulate_stats(data, imp, opt.imputed_class);
  return m_step_from_stats(st, design_matrix(data, opt.intercept), h, current, opt);
}

}  // namespace stemfuse
