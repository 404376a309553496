#pragma once

// Exact conditional time averages E_x( sum_t w_t f(X_t) | T < tau ) and the
// bounds that compare them with beta(f).

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "qsd/error.hpp"
#include "qsd/linalg.hpp"
#include "qsd/markov_core.hpp"
#include "qsd/qprocess.hpp"
#include "qsd/spectral.hpp"

namespace qsd {

/// Probability measure mu_T on the integer times 0..T.
struct SamplingPlan {
  enum class Kind { uniform, dirac, custom };

  Kind kind = Kind::uniform;
  Step horizon = 0;
  std::vector<std::pair<Step, double>> atoms;

  /// Average over steps 0..T-1 (left Riemann sum of the time integral).
  static SamplingPlan uniform(Step T) {
    if (T < 1) throw InvalidArgument("SamplingPlan: uniform plan needs T >= 1");
    SamplingPlan p{Kind::uniform, T, {}};
    p.atoms.reserve(static_cast<std::size_t>(T));
    for (Step t = 0; t < T; ++t) p.atoms.emplace_back(t, 1.0 / static_cast<double>(T));
    return p;
  }

  static SamplingPlan dirac(Step t, Step T) {
    SamplingPlan p{Kind::dirac, T, {{t, 1.0}}};
    p.validate();
    return p;
  }

  static SamplingPlan custom(Step T, std::vector<std::pair<Step, double>> atoms) {
    SamplingPlan p{Kind::custom, T, std::move(atoms)};
    p.validate();
    return p;
  }

  void validate() const {
    if (horizon < 0) throw InvalidArgument("SamplingPlan: negative horizon");
    if (atoms.empty()) throw InvalidArgument("SamplingPlan: no atoms");
    double total = 0.0;
    for (auto [t, w] : atoms) {
      if (t < 0 || t > horizon) throw InvalidArgument("SamplingPlan: atom outside [0, T]");
      if (!(w >= 0.0)) throw InvalidArgument("SamplingPlan: negative weight");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-12) throw InvalidArgument("SamplingPlan: weights do not sum to 1");
  }
};

namespace detail {

inline double envelope_term(double rate, double lag) {
  if (lag == 0.0) return 1.0;
  if (std::isinf(rate)) return 0.0;
  return std::exp(-rate * lag);
}

}  // namespace detail

/// int (e^{-gamma' t} + e^{-gamma (T - t)}) mu_T(dt).
inline double plan_envelope(const SamplingPlan& plan, double gamma, double gamma_prime) {
  double env = 0.0;
  for (auto [t, w] : plan.atoms)
    env += w * (detail::envelope_term(gamma_prime, static_cast<double>(t)) +
                detail::envelope_term(gamma, static_cast<double>(plan.horizon - t)));
  return env;
}

/// Forward conditioned laws from every state and survival shapes, up to T_max.
/// Answers bridge expectations for any 0 <= t <= T <= T_max.
class BridgeTable {
 public:
  BridgeTable(const SubStochasticKernel& k, Step T_max) : n_(k.size()), T_max_(T_max) {
    if (T_max < 0) throw InvalidArgument("BridgeTable: negative horizon");
    forward_.reserve(n_);
    for (std::size_t x = 0; x < n_; ++x) forward_.push_back(conditioned_path(k, x, T_max));
    shapes_ = survival_shapes(k, T_max);
  }

  std::size_t size() const noexcept { return n_; }
  Step horizon() const noexcept { return T_max_; }

  /// Law of X_t given X_0 = x, T < tau.
  Vector marginal(State x, Step t, Step T) const {
    check(t, T);
    return bridge_weights(forward_[x][static_cast<std::size_t>(t)], shapes_[static_cast<std::size_t>(T - t)]);
  }

  /// E_x(f(X_t) | T < tau).
  double expectation(State x, Step t, Step T, std::span<const double> f) const {
    check(t, T);
    const Vector& fw = forward_[x][static_cast<std::size_t>(t)];
    const Vector& h = shapes_[static_cast<std::size_t>(T - t)];
    double num = 0.0;
    double den = 0.0;
    for (std::size_t y = 0; y < n_; ++y) {
      const double w = fw[y] * h[y];
      num += w * f[y];
      den += w;
    }
    return num / den;
  }

  double functional(State x, std::span<const double> f, const SamplingPlan& plan) const {
    double acc = 0.0;
    for (auto [t, w] : plan.atoms) acc += w * expectation(x, t, plan.horizon, f);
    return acc;
  }

 private:
  void check(Step t, Step T) const {
    if (t < 0 || t > T || T > T_max_) throw InvalidArgument("BridgeTable: need 0 <= t <= T <= horizon");
  }

  std::size_t n_;
  Step T_max_;
  std::vector<std::vector<Vector>> forward_;
  std::vector<Vector> shapes_;
};

/// E_x( int f(X_t) mu_T(dt) | T < tau ), evaluated exactly.
inline double conditional_functional(const SubStochasticKernel& k, State x, std::span<const double> f,
                                     const SamplingPlan& plan) {
  plan.validate();
  if (f.size() != k.size()) throw InvalidArgument("conditional_functional: f has wrong size");
  if (x >= k.size()) throw InvalidArgument("conditional_functional: state out of range");
  return BridgeTable(k, plan.horizon).functional(x, f, plan);
}

inline double sup_norm(std::span<const double> f) { return max_abs(f); }

/// Checks sup_x |E_x(int f dmu_T | T < tau) - beta(f)| <= a3 |f|_inf int (e^{-gamma' t} + e^{-gamma (T-t)}) dmu_T.
///
/// a3 is the smallest constant over `fit_plans`; `validation_plans` only
/// check it. Grid points carry t = the atom for Dirac plans and -1 otherwise.
/// Ratios use the error minus 1e-12 |f|_inf, the resolution of the bridge sums.
inline BoundReport verify_general_bound(const SubStochasticKernel& k, const SpectralTriple& s, double gamma,
                                        double gamma_prime, std::span<const double> f,
                                        const std::vector<SamplingPlan>& fit_plans,
                                        const std::vector<SamplingPlan>& validation_plans) {
  if (fit_plans.empty()) throw InvalidArgument("verify_general_bound: no fit plans");
  if (f.size() != k.size()) throw InvalidArgument("verify_general_bound: f has wrong size");
  Step T_max = 0;
  for (const auto* plans : {&fit_plans, &validation_plans})
    for (const auto& p : *plans) {
      p.validate();
      T_max = std::max(T_max, p.horizon);
    }
  const BridgeTable table(k, T_max);
  const double target = s.beta_of(f);
  const double norm = sup_norm(f);

  auto evaluate = [&](const SamplingPlan& plan) {
    double err = 0.0;
    for (std::size_t x = 0; x < k.size(); ++x) err = std::max(err, std::abs(table.functional(x, f, plan) - target));
    const double env = norm * plan_envelope(plan, gamma, gamma_prime);
    return std::pair{err, env};
  };

  BoundReport r;
  r.name = "general_bound";
  r.rate = gamma;
  r.extras.emplace_back("gamma_prime", gamma_prime);
  std::vector<std::pair<double, double>> fit_values;
  for (const auto& p : fit_plans) {
    const auto [err, env] = evaluate(p);
    fit_values.emplace_back(err, env);
    if (err > 0.0) r.constant = std::max(r.constant, env > 0.0 ? err / env : std::numeric_limits<double>::infinity());
  }
  auto point = [&](const SamplingPlan& p, double err, double env) {
    const Step t = p.kind == SamplingPlan::Kind::dirac ? p.atoms.front().first : -1;
    // errors are only resolved down to roundoff of the bridge expectation
    const double resolved = std::max(0.0, err - kRoundoffFloor * norm);
    const double ratio =
        resolved == 0.0 ? 0.0
                        : detail::bound_ratio(env > 0.0 ? resolved / env : std::numeric_limits<double>::infinity(),
                                              r.constant);
    return BoundPoint{t, p.horizon, err, r.constant * env, ratio};
  };
  for (std::size_t i = 0; i < fit_plans.size(); ++i)
    r.fit.push_back(point(fit_plans[i], fit_values[i].first, fit_values[i].second));
  for (const auto& p : validation_plans) {
    const auto [err, env] = evaluate(p);
    r.validation.push_back(point(p, err, env));
  }
  detail::finish(r);
  return r;
}

/// Checks sup_x |E_x((1/T) sum_{t<T} f(X_t) | T < tau) - beta(f)| <= a4 |f|_inf / T.
///
/// a4 is fitted on the first half of `T_grid` and validated on the second.
/// Extras: "a4_sup" (sup over the whole grid) and "validation_nonincreasing"
/// (T * error never rises by more than 1e-9 between consecutive validation points).
inline BoundReport verify_ergodic_theorem(const SubStochasticKernel& k, const SpectralTriple& s,
                                          std::span<const double> f, std::vector<Step> T_grid) {
  T_grid = detail::sorted_unique(std::move(T_grid));
  if (T_grid.empty() || T_grid.front() < 1) throw InvalidArgument("verify_ergodic_theorem: bad T_grid");
  if (f.size() != k.size()) throw InvalidArgument("verify_ergodic_theorem: f has wrong size");
  const BridgeTable table(k, T_grid.back());
  const double target = s.beta_of(f);
  const double norm = sup_norm(f);

  std::vector<double> errors;
  for (Step T : T_grid) {
    double err = 0.0;
    for (std::size_t x = 0; x < k.size(); ++x) {
      double acc = 0.0;
      for (Step t = 0; t < T; ++t) acc += table.expectation(x, t, T, f);
      err = std::max(err, std::abs(acc / static_cast<double>(T) - target));
    }
    errors.push_back(err);
  }
  auto scaled = [&](std::size_t i) { return norm > 0.0 ? static_cast<double>(T_grid[i]) * errors[i] / norm : 0.0; };

  BoundReport r;
  r.name = "ergodic_theorem";
  r.rate = 1.0;
  const std::size_t n_fit = (T_grid.size() + 1) / 2;
  double sup_all = 0.0;
  for (std::size_t i = 0; i < T_grid.size(); ++i) {
    if (i < n_fit) r.constant = std::max(r.constant, scaled(i));
    sup_all = std::max(sup_all, scaled(i));
  }
  bool nonincreasing = true;
  for (std::size_t i = 0; i < T_grid.size(); ++i) {
    const Step T = T_grid[i];
    BoundPoint p{T, T, errors[i], r.constant * norm / static_cast<double>(T), detail::bound_ratio(scaled(i), r.constant)};
    (i < n_fit ? r.fit : r.validation).push_back(p);
    if (i > n_fit && scaled(i) > scaled(i - 1) + 1e-9) nonincreasing = false;
  }
  r.extras.emplace_back("a4_sup", sup_all);
  r.extras.emplace_back("validation_nonincreasing", nonincreasing ? 1.0 : 0.0);
  detail::finish(r);
  return r;
}

/// t0 = gamma T / (gamma + gamma'), rounded to the nearest step.
inline Step optimal_t0(double gamma, double gamma_prime, Step T) {
  if (!(gamma > 0.0) || !(gamma_prime > 0.0)) throw InvalidArgument("optimal_t0: rates must be positive");
  if (T < 0) throw InvalidArgument("optimal_t0: negative horizon");
  double share = 0.5;
  if (std::isinf(gamma) && !std::isinf(gamma_prime)) share = 1.0;
  else if (!std::isinf(gamma) && std::isinf(gamma_prime)) share = 0.0;
  else if (!std::isinf(gamma)) share = gamma / (gamma + gamma_prime);
  const auto t0 = static_cast<Step>(std::llround(share * static_cast<double>(T)));
  return std::clamp<Step>(t0, 0, T);
}

/// Integer minimizer of e^{-gamma' t} + e^{-gamma (T - t)} over 0..T (first one on ties).
inline Step grid_optimal_t0(double gamma, double gamma_prime, Step T) {
  Step best = 0;
  double best_value = std::numeric_limits<double>::infinity();
  for (Step t = 0; t <= T; ++t) {
    const double v = detail::envelope_term(gamma_prime, static_cast<double>(t)) +
                     detail::envelope_term(gamma, static_cast<double>(T - t));
    if (v < best_value) {
      best_value = v;
      best = t;
    }
  }
  return best;
}

}  // namespace qsd
