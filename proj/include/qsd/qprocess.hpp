#pragma once

// The Q-process (chain conditioned never to be absorbed) as a Doob
// h-transform, and empirical constants for its convergence bounds.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "qsd/error.hpp"
#include "qsd/linalg.hpp"
#include "qsd/markov_core.hpp"
#include "qsd/spectral.hpp"

namespace qsd {

/// Stochastic kernel Q(x,y) = K(x,y) eta(y) / (rho eta(x)).
class QKernel {
 public:
  QKernel(SubStochasticKernel source, SpectralTriple spectral)
      : source_(std::move(source)), spectral_(std::move(spectral)) {
    const std::size_t n = source_.size();
    if (spectral_.eta.size() != n) throw InvalidArgument("build_q_kernel: spectral data size mismatch");
    for (double e : spectral_.eta)
      if (!(e >= 1e-14)) throw InvalidArgument("build_q_kernel: eta below 1e-14, h-transform ill-conditioned");
    entries_ = Matrix(n, n);
    const double rho = spectral_.rho;
    for (std::size_t x = 0; x < n; ++x)
      for (std::size_t y = 0; y < n; ++y)
        entries_(x, y) = source_(x, y) * spectral_.eta[y] / (rho * spectral_.eta[x]);
  }

  std::size_t size() const noexcept { return entries_.rows(); }
  const Matrix& entries() const noexcept { return entries_; }
  double operator()(State x, State y) const { return entries_(x, y); }
  const SubStochasticKernel& source() const noexcept { return source_; }
  const SpectralTriple& spectral() const noexcept { return spectral_; }
  const Distribution& beta() const noexcept { return spectral_.beta; }

  /// Law of X_t under Q_x.
  Vector marginal(State x, Step t) const {
    Vector law = Distribution::dirac(size(), x).weights();
    for (Step s = 0; s < t; ++s) law = left_multiply(law, entries_);
    return law;
  }

 private:
  SubStochasticKernel source_;
  SpectralTriple spectral_;
  Matrix entries_;
};

inline QKernel build_q_kernel(const SubStochasticKernel& k, const SpectralTriple& s) { return QKernel(k, s); }

struct BoundPoint {
  Step t = 0;
  Step T = 0;
  double observed = 0.0;
  double bound = 0.0;
  double ratio = 0.0;
};

/// Fitted constant and rate for one inequality, with the grid backing them.
///
/// The constant is the smallest one valid on `fit`; `validation` is a
/// held-out grid on which the same constant is only checked.
struct BoundReport {
  std::string name;
  double constant = 0.0;
  double rate = 0.0;
  std::vector<BoundPoint> fit;
  std::vector<BoundPoint> validation;
  double max_violation = 0.0;
  /// Rate fitted on the observed errors themselves (NaN when not applicable).
  double observed_rate = std::numeric_limits<double>::quiet_NaN();
  /// Extra named facts worth printing in a summary.
  std::vector<std::pair<std::string, double>> extras;

  bool valid(double slack = 1e-9) const { return max_violation <= 1.0 + slack; }

  std::vector<BoundPoint> grid() const {
    std::vector<BoundPoint> all = fit;
    all.insert(all.end(), validation.begin(), validation.end());
    return all;
  }
};

namespace detail {

// observed / (constant * envelope) where scaled = observed / envelope.
inline double bound_ratio(double scaled, double constant) {
  if (scaled == 0.0) return 0.0;
  if (constant == 0.0) return std::numeric_limits<double>::infinity();
  return scaled / constant;
}

// observed * e^{rate * lag} without intermediate overflow.
inline double rescale(double observed, double rate, double lag) {
  if (observed == 0.0) return 0.0;
  return std::exp(std::log(observed) + rate * lag);
}

inline void finish(BoundReport& r) {
  r.max_violation = 0.0;
  for (const auto& p : r.fit) r.max_violation = std::max(r.max_violation, p.ratio);
  for (const auto& p : r.validation) r.max_violation = std::max(r.max_violation, p.ratio);
}

inline std::vector<Step> sorted_unique(std::vector<Step> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

}  // namespace detail

/// Rate gamma of uniform convergence of conditioned laws to the QSD.
inline double conditioned_rate(const SubStochasticKernel& k, const SpectralTriple& s, Step t_max = 200) {
  return fit_conditioned_rate(k, s, t_max).rate;
}

/// Checks |eta_t(x) - eta(x)| <= a1 eta_t(x) e^{-gamma t}, eta_t(x) = rho^{-t} P_x(t < tau).
///
/// a1 is fitted on the first half of `t_grid` and checked on the second.
/// The two-sided sandwich (1 -+ a1 e^{-gamma t}) eta_t <= / >= eta is
/// re-checked on every grid point and reported as extra "sandwich_holds".
inline BoundReport verify_eta_bound(const SubStochasticKernel& k, const SpectralTriple& s,
                                    std::vector<Step> t_grid, double gamma) {
  t_grid = detail::sorted_unique(std::move(t_grid));
  if (t_grid.empty() || t_grid.front() < 0) throw InvalidArgument("verify_eta_bound: bad t_grid");
  const ScaledPowers powers(k, s, t_grid.back());
  const std::size_t n_fit = (t_grid.size() + 1) / 2;

  // per-t worst state of e^{gamma t} |eta_t - eta| / eta_t
  auto worst = [&](Step t) {
    const Vector& d = powers.eta_deviation(t);
    std::size_t arg = 0;
    double best = -1.0;
    for (std::size_t x = 0; x < powers.size(); ++x) {
      const double scaled = detail::rescale(std::abs(d[x]), gamma, static_cast<double>(t)) / powers.eta_t(x, t);
      if (scaled > best) {
        best = scaled;
        arg = x;
      }
    }
    return std::pair{arg, best};
  };

  BoundReport r;
  r.name = "eta_bound";
  r.rate = gamma;
  for (std::size_t i = 0; i < n_fit; ++i) r.constant = std::max(r.constant, worst(t_grid[i]).second);

  bool sandwich = true;
  for (std::size_t i = 0; i < t_grid.size(); ++i) {
    const Step t = t_grid[i];
    const auto [x, scaled] = worst(t);
    const double eta_t = powers.eta_t(x, t);
    const double envelope = std::exp(-gamma * static_cast<double>(t));
    BoundPoint p{t, t, std::abs(powers.eta_deviation(t)[x]), r.constant * eta_t * envelope,
                 detail::bound_ratio(scaled, r.constant)};
    (i < n_fit ? r.fit : r.validation).push_back(p);
    for (std::size_t y = 0; y < powers.size(); ++y) {
      const double ety = powers.eta_t(y, t);
      const double slack = r.constant * envelope * ety;
      const double tol = 1e-12 * ety;
      if ((ety - slack) > s.eta[y] + tol || s.eta[y] > (ety + slack) + tol) sandwich = false;
    }
  }
  r.extras.emplace_back("sandwich_holds", sandwich ? 1.0 : 0.0);
  detail::finish(r);
  return r;
}

inline BoundReport verify_eta_bound(const SubStochasticKernel& k, const SpectralTriple& s, std::vector<Step> t_grid) {
  return verify_eta_bound(k, s, std::move(t_grid), conditioned_rate(k, s));
}

/// sup_x TV(Q_x(X_t in .), P_x(X_t in . | T < tau)) through the deflated powers.
inline double qproc_gap(const ScaledPowers& powers, Step t, Step T) {
  const Vector& dT = powers.eta_deviation(T);
  const Vector& dlag = powers.eta_deviation(T - t);
  const Vector& eta = powers.eta();
  double worst = 0.0;
  for (std::size_t x = 0; x < powers.size(); ++x) {
    double l1 = 0.0;
    for (std::size_t y = 0; y < powers.size(); ++y) {
      const double gap = eta[y] * dT[x] - dlag[y] * eta[x];
      if (gap == 0.0) continue;
      l1 += std::abs(powers.scaled_entry(x, y, t)) * std::abs(gap);
    }
    worst = std::max(worst, 0.5 * l1 / (eta[x] * powers.eta_t(x, T)));
  }
  return worst;
}

/// Checks sup_x TV(Q_x(X_t in .), P_x(X_t in . | T < tau)) <= a2 e^{-gamma (T - t)}.
///
/// Pairs are split by lag T - t: the lower half of the distinct lags fits a2,
/// the upper half validates it. Extras: the proof's validity threshold on
/// the lag, log(a1) / gamma, when a1 > 0.
inline BoundReport verify_qproc_approx(const SubStochasticKernel& k, const SpectralTriple& s, const QKernel& q,
                                       std::vector<std::pair<Step, Step>> pairs, double gamma) {
  if (pairs.empty()) throw InvalidArgument("verify_qproc_approx: empty grid");
  if (q.size() != k.size()) throw InvalidArgument("verify_qproc_approx: size mismatch");
  Step T_max = 0;
  std::vector<Step> lags;
  for (auto [t, T] : pairs) {
    if (t < 0 || t > T) throw InvalidArgument("verify_qproc_approx: need 0 <= t <= T");
    T_max = std::max(T_max, T);
    lags.push_back(T - t);
  }
  lags = detail::sorted_unique(std::move(lags));
  const Step fit_max_lag = lags[(lags.size() - 1) / 2];
  const ScaledPowers powers(k, s, T_max);

  std::vector<double> observed(pairs.size());
  BoundReport r;
  r.name = "qproc_approx";
  r.rate = gamma;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto [t, T] = pairs[i];
    observed[i] = qproc_gap(powers, t, T);
    if (T - t <= fit_max_lag)
      r.constant = std::max(r.constant, detail::rescale(observed[i], gamma, static_cast<double>(T - t)));
  }

  std::vector<double> by_lag(static_cast<std::size_t>(lags.back()) + 1, 0.0);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto [t, T] = pairs[i];
    const double lag = static_cast<double>(T - t);
    BoundPoint p{t, T, observed[i], r.constant * std::exp(-gamma * lag),
                 detail::bound_ratio(detail::rescale(observed[i], gamma, lag), r.constant)};
    (T - t <= fit_max_lag ? r.fit : r.validation).push_back(p);
    auto& slot = by_lag[static_cast<std::size_t>(T - t)];
    slot = std::max(slot, observed[i]);
  }
  Series curve;
  for (Step lag : lags) curve.emplace_back(static_cast<double>(lag), by_lag[static_cast<std::size_t>(lag)]);
  r.observed_rate = fit_decay_tail(curve).rate;

  const double a1 = eta_bound_constant(powers, gamma, 1, T_max);
  if (a1 > 0.0) r.extras.emplace_back("proof_lag_threshold", std::log(a1) / gamma);
  detail::finish(r);
  return r;
}

inline BoundReport verify_qproc_approx(const SubStochasticKernel& k, const SpectralTriple& s, const QKernel& q,
                                       std::vector<std::pair<Step, Step>> pairs) {
  return verify_qproc_approx(k, s, q, std::move(pairs), conditioned_rate(k, s));
}

/// max_x TV(delta_x Q^t, beta) for t = 0..t_max, with the beta component
/// projected out at every step so tiny distances keep relative precision.
inline Series q_mixing_series(const QKernel& q, Step t_max) {
  const std::size_t n = q.size();
  const Vector& beta = q.beta().weights();
  std::vector<double> worst(static_cast<std::size_t>(t_max) + 1, 0.0);
  for (std::size_t x = 0; x < n; ++x) {
    Vector u(n);
    for (std::size_t y = 0; y < n; ++y) u[y] = (x == y ? 1.0 : 0.0) - beta[y];
    for (Step t = 0; t <= t_max; ++t) {
      if (t > 0) {
        u = left_multiply(u, q.entries());
        const double drift = sum(u);
        for (std::size_t y = 0; y < n; ++y) u[y] -= drift * beta[y];
      }
      double l1 = 0.0;
      for (double v : u) l1 += std::abs(v);
      auto& w = worst[static_cast<std::size_t>(t)];
      w = std::max(w, 0.5 * l1);
    }
  }
  Series out;
  for (Step t = 0; t <= t_max; ++t) out.emplace_back(static_cast<double>(t), worst[static_cast<std::size_t>(t)]);
  return out;
}

/// Fits C', gamma' in max_x TV(delta_x Q^t, beta) <= C' e^{-gamma' t}.
///
/// gamma' comes from the tail of the mixing curve; C' is the smallest constant
/// on the first half of `t_grid` and is validated on the second half. A
/// curve that vanishes identically reports gamma' = +inf and C' = 0.
inline BoundReport q_mixing_report(const QKernel& q, std::vector<Step> t_grid) {
  t_grid = detail::sorted_unique(std::move(t_grid));
  if (t_grid.empty() || t_grid.front() < 0) throw InvalidArgument("q_mixing_report: bad t_grid");
  const Series curve = q_mixing_series(q, std::max<Step>(t_grid.back(), 3));
  Series probed;
  for (Step t : t_grid) probed.push_back(curve[static_cast<std::size_t>(t)]);
  const DecayFit fit = fit_decay_tail(probed.size() >= 3 ? probed : curve);

  BoundReport r;
  r.name = "q_mixing";
  r.rate = fit.rate;
  r.observed_rate = fit.rate;
  const std::size_t n_fit = (t_grid.size() + 1) / 2;
  auto scaled = [&](std::size_t i) {
    return fit.degenerate() ? 0.0 : detail::rescale(probed[i].second, fit.rate, probed[i].first);
  };
  for (std::size_t i = 0; i < n_fit; ++i) r.constant = std::max(r.constant, scaled(i));
  for (std::size_t i = 0; i < t_grid.size(); ++i) {
    const double envelope = fit.degenerate() ? 0.0 : std::exp(-fit.rate * probed[i].first);
    BoundPoint p{t_grid[i], t_grid[i], probed[i].second, r.constant * envelope,
                 fit.degenerate() ? (probed[i].second == 0.0 ? 0.0 : std::numeric_limits<double>::infinity())
                                  : detail::bound_ratio(scaled(i), r.constant)};
    (i < n_fit ? r.fit : r.validation).push_back(p);
  }
  detail::finish(r);
  return r;
}

}  // namespace qsd
