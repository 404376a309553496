#pragma once

// Perron data of a killed kernel and the decay rates derived from it.

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "qsd/error.hpp"
#include "qsd/linalg.hpp"
#include "qsd/markov_core.hpp"

namespace qsd {

/// QSD alpha, survival eigenvalue rho, eigenfunction eta with alpha(eta) = 1,
/// and beta = eta * alpha.
struct SpectralTriple {
  Distribution alpha;
  double rho = 0.0;
  Vector eta;
  Distribution beta;
  double residual = 0.0;
  long iterations = 0;

  /// -log(rho), the per-step exponential decay rate of survival.
  double lambda0() const { return -std::log(rho); }
  double lambda0_physical(double time_unit) const { return lambda0() / time_unit; }
  double beta_of(std::span<const double> f) const { return beta.expectation(f); }
};

struct SpectralOptions {
  double tol = 1e-12;
  long max_iters = 1'000'000;
};

/// Left and right Perron vectors by power iteration on (K + I/2) / (3/2).
///
/// The shift makes the iteration matrix aperiodic without moving eigenvectors.
/// Once both residuals are below `tol` the iteration count is doubled, which
/// drives the eigenvector error to roundoff level.
inline SpectralTriple compute_spectral(const SubStochasticKernel& k, SpectralOptions opts = {}) {
  if (!(opts.tol > 0.0)) throw InvalidArgument("compute_spectral: tol must be positive");
  const std::size_t n = k.size();
  const Matrix& m = k.entries();

  Vector left(n, 1.0 / static_cast<double>(n));
  Vector right(n, 1.0);

  auto residuals = [&](double& rho_out) {
    const Vector lk = left_multiply(left, m);
    const double rho = sum(lk);
    double r = 0.0;
    for (std::size_t i = 0; i < n; ++i) r = std::max(r, std::abs(lk[i] - rho * left[i]));
    const Vector kr = right_multiply(m, right);
    for (std::size_t i = 0; i < n; ++i) r = std::max(r, std::abs(kr[i] - rho * right[i]));
    rho_out = rho;
    return r;
  };

  auto step = [&] {
    Vector lk = left_multiply(left, m);
    double mass = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      lk[i] = (lk[i] + 0.5 * left[i]) / 1.5;
      mass += lk[i];
    }
    for (double& v : lk) v /= mass;
    left = std::move(lk);

    Vector kr = right_multiply(m, right);
    for (std::size_t i = 0; i < n; ++i) kr[i] = (kr[i] + 0.5 * right[i]) / 1.5;
    const double top = max_abs(kr);
    for (double& v : kr) v /= top;
    right = std::move(kr);
  };

  double rho = 0.0;
  double residual = residuals(rho);
  long iters = 0;
  while (residual > opts.tol) {
    if (iters >= opts.max_iters)
      throw NotConverged("compute_spectral: no convergence after max_iters", residual);
    step();
    ++iters;
    residual = residuals(rho);
  }
  const long polish = std::min(iters, opts.max_iters - iters);
  for (long i = 0; i < polish; ++i) step();
  iters += polish;

  // alpha to unit mass first, then eta so that alpha(eta) = 1.
  const double mass = sum(left);
  for (double& v : left) v /= mass;
  const double pairing = dot(left, right);
  for (double& v : right) v /= pairing;
  residual = residuals(rho);
  if (!(rho < 1.0)) throw InvalidKernel("compute_spectral: rho >= 1, the chain is not absorbed");

  Vector beta(n);
  for (std::size_t i = 0; i < n; ++i) beta[i] = right[i] * left[i];

  SpectralTriple s;
  s.alpha = Distribution(std::move(left));
  s.rho = rho;
  s.eta = std::move(right);
  s.beta = Distribution(std::move(beta));
  s.residual = residual;
  s.iterations = iters;
  return s;
}

/// Least-squares fit of log(value) = log(C) - rate * t.
struct DecayFit {
  double constant = 0.0;
  double rate = 0.0;
  double rms_residual = 0.0;

  /// Series that vanished identically: no decay to measure.
  bool degenerate() const { return std::isinf(rate); }
};

using Series = std::vector<std::pair<double, double>>;

inline DecayFit fit_decay(const Series& series) {
  if (series.size() < 3) throw InvalidArgument("fit_decay: need at least 3 points");
  double mt = 0.0;
  double my = 0.0;
  for (auto [t, v] : series) {
    if (!(v > 0.0) || !std::isfinite(v)) throw InvalidArgument("fit_decay: values must be positive");
    mt += t;
    my += std::log(v);
  }
  const double count = static_cast<double>(series.size());
  mt /= count;
  my /= count;
  double stt = 0.0;
  double sty = 0.0;
  for (auto [t, v] : series) {
    stt += (t - mt) * (t - mt);
    sty += (t - mt) * (std::log(v) - my);
  }
  if (!(stt > 0.0)) throw InvalidArgument("fit_decay: all points share the same t");
  const double slope = sty / stt;
  const double intercept = my - slope * mt;
  double ss = 0.0;
  for (auto [t, v] : series) {
    const double r = std::log(v) - (intercept + slope * t);
    ss += r * r;
  }
  return {std::exp(intercept), -slope, std::sqrt(ss / count)};
}

/// Values at or below this are treated as exhausted when fitting rates.
inline constexpr double kDecayFloor = 1e-250;

/// Values computed without deflation carry absolute roundoff near 1e-16;
/// fits of such curves ignore points below this.
inline constexpr double kRoundoffFloor = 1e-12;

/// Fits the tail of a decay curve: points above `floor` whose t lies in the
/// upper half of their range. A series with no point above the floor yields
/// rate = +inf and C = 0.
inline DecayFit fit_decay_tail(const Series& series, double floor = kDecayFloor) {
  Series kept;
  for (const auto& p : series)
    if (p.second > floor) kept.push_back(p);
  if (kept.empty()) return {0.0, std::numeric_limits<double>::infinity(), 0.0};
  const double mid = 0.5 * (kept.front().first + kept.back().first);
  Series tail;
  for (const auto& p : kept)
    if (p.first >= mid) tail.push_back(p);
  if (tail.size() < 3) tail = kept;
  return fit_decay(tail);
}

/// Powers of K / rho with the Perron part removed.
///
/// With R = K - rho * eta alpha, for every t:
///   rho^{-t} K^t = eta alpha + (R / rho)^t.
/// Iterating R / rho directly keeps full relative precision on the
/// deviations eta_t - eta and rho^{-t} delta_x K^t - eta(x) alpha, which
/// decay far below double roundoff of the undeflated quantities.
class ScaledPowers {
 public:
  ScaledPowers(const SubStochasticKernel& k, const SpectralTriple& s, Step t_max)
      : n_(k.size()), t_max_(t_max), eta_(s.eta), alpha_(s.alpha.weights()) {
    if (t_max < 0) throw InvalidArgument("ScaledPowers: negative horizon");
    const Matrix& m = k.entries();
    const double rho = s.rho;
    const auto steps = static_cast<std::size_t>(t_max) + 1;

    right_.reserve(steps);
    Vector d(n_);
    for (std::size_t x = 0; x < n_; ++x) d[x] = 1.0 - eta_[x];
    right_.push_back(d);
    for (Step t = 1; t <= t_max; ++t) {
      const double proj = dot(alpha_, d);
      Vector next = right_multiply(m, d);
      for (std::size_t x = 0; x < n_; ++x) next[x] = (next[x] - rho * eta_[x] * proj) / rho;
      d = std::move(next);
      right_.push_back(d);
    }

    left_.resize(n_);
    for (std::size_t x = 0; x < n_; ++x) {
      auto& rows = left_[x];
      rows.reserve(steps);
      Vector w(n_);
      for (std::size_t y = 0; y < n_; ++y) w[y] = (x == y ? 1.0 : 0.0) - eta_[x] * alpha_[y];
      rows.push_back(w);
      for (Step t = 1; t <= t_max; ++t) {
        const double proj = dot(w, eta_);
        Vector next = left_multiply(w, m);
        for (std::size_t y = 0; y < n_; ++y) next[y] = (next[y] - rho * proj * alpha_[y]) / rho;
        w = std::move(next);
        rows.push_back(w);
      }
    }
  }

  std::size_t size() const noexcept { return n_; }
  Step horizon() const noexcept { return t_max_; }
  const Vector& eta() const noexcept { return eta_; }
  const Vector& alpha() const noexcept { return alpha_; }

  /// eta_t - eta, where eta_t(x) = rho^{-t} P_x(t < tau).
  const Vector& eta_deviation(Step t) const { return right_.at(static_cast<std::size_t>(t)); }
  double eta_t(State x, Step t) const { return eta_[x] + eta_deviation(t)[x]; }

  /// rho^{-t} delta_x K^t - eta(x) alpha.
  const Vector& row_deviation(State x, Step t) const {
    return left_.at(x).at(static_cast<std::size_t>(t));
  }

  /// rho^{-t} K^t(x, y).
  double scaled_entry(State x, State y, Step t) const {
    return eta_[x] * alpha_[y] + row_deviation(x, t)[y];
  }

  /// Law of X_t given t < tau from x, minus alpha.
  Vector conditioned_deviation(State x, Step t) const {
    const Vector& w = row_deviation(x, t);
    const double excess = sum(w);
    const double norm = eta_[x] + excess;
    Vector out(n_);
    for (std::size_t y = 0; y < n_; ++y) out[y] = (w[y] - excess * alpha_[y]) / norm;
    return out;
  }

  /// TV distance between the conditioned law from x at t and alpha.
  double conditioned_tv(State x, Step t) const {
    const Vector dev = conditioned_deviation(x, t);
    double l1 = 0.0;
    for (double v : dev) l1 += std::abs(v);
    return 0.5 * l1;
  }

 private:
  std::size_t n_;
  Step t_max_;
  Vector eta_;
  Vector alpha_;
  std::vector<Vector> right_;
  std::vector<std::vector<Vector>> left_;
};

/// sup_x TV(P_x(X_t in . | t < tau), alpha) for t = 1..t_max.
inline Series conditioned_tv_series(const ScaledPowers& powers) {
  Series out;
  for (Step t = 1; t <= powers.horizon(); ++t) {
    double worst = 0.0;
    for (std::size_t x = 0; x < powers.size(); ++x) worst = std::max(worst, powers.conditioned_tv(x, t));
    out.emplace_back(static_cast<double>(t), worst);
  }
  return out;
}

/// Fitted (C, gamma) of the uniform convergence of conditioned laws to alpha.
inline DecayFit fit_conditioned_rate(const SubStochasticKernel& k, const SpectralTriple& s, Step t_max = 200) {
  return fit_decay_tail(conditioned_tv_series(ScaledPowers(k, s, t_max)));
}

/// max over x and t in [t_begin, t_end] of e^{gamma t} |eta_t(x) - eta(x)| / eta_t(x):
/// the smallest constant a1 for which the relative eta bound holds on that range.
inline double eta_bound_constant(const ScaledPowers& powers, double gamma, Step t_begin, Step t_end) {
  double a1 = 0.0;
  for (Step t = t_begin; t <= t_end; ++t) {
    const Vector& d = powers.eta_deviation(t);
    for (std::size_t x = 0; x < powers.size(); ++x) {
      if (d[x] == 0.0) continue;
      const double scaled = std::exp(std::log(std::abs(d[x])) + gamma * static_cast<double>(t)) /
                            powers.eta_t(x, t);
      a1 = std::max(a1, scaled);
    }
  }
  return a1;
}

/// Certificate for the minorization / survival comparison pair.
struct MinorizationCert {
  Step t0 = 0;
  Distribution nu;
  double c1 = 0.0;
  double c2 = 0.0;
  Step horizon = 0;
  /// Lower bound for the survival ratio beyond `horizon`, from the eta sandwich.
  double tail_bound = 0.0;
};

/// Builds nu from the entrywise minimum of the conditioned t0-step laws.
///
/// If that minimum vanishes, t0 is incremented up to max(t0, n^2) before the
/// condition is declared unsatisfied. `horizon` = 0 selects ceil(20 / gamma)
/// with gamma from a pilot fit of the conditioned convergence rate.
inline MinorizationCert certify_minorization(const SubStochasticKernel& k, Step t0, Step horizon = 0) {
  if (t0 < 1) throw InvalidArgument("certify_minorization: t0 must be >= 1");
  const std::size_t n = k.size();
  const Step last_t0 = std::max<Step>(t0, static_cast<Step>(n * n));

  MinorizationCert cert;
  Vector floor_law;
  std::vector<Vector> laws(n);
  for (std::size_t x = 0; x < n; ++x) laws[x] = Distribution::dirac(n, x).weights();
  for (Step t = 1; t <= last_t0; ++t) {
    for (auto& law : laws) conditioned_step(k, law);
    if (t < t0) continue;
    floor_law = laws[0];
    for (std::size_t x = 1; x < n; ++x)
      for (std::size_t y = 0; y < n; ++y) floor_law[y] = std::min(floor_law[y], laws[x][y]);
    cert.c1 = sum(floor_law);
    cert.t0 = t;
    if (cert.c1 > 0.0) break;
  }
  if (!(cert.c1 > 0.0))
    throw CertificationFailure("certify_minorization: condition not satisfied for t0 up to " +
                               std::to_string(last_t0));
  cert.nu = Distribution::normalized(floor_law);

  const SpectralTriple s = compute_spectral(k);
  const Step pilot = 200;
  const ScaledPowers pilot_powers(k, s, pilot);
  const DecayFit fit = fit_decay_tail(conditioned_tv_series(pilot_powers));
  if (horizon <= 0)
    horizon = fit.degenerate() ? 1 : static_cast<Step>(std::ceil(20.0 / fit.rate));
  cert.horizon = horizon;

  // Probed part: P_nu(t < tau) / max_x P_x(t < tau) for t = 0..horizon.
  double c2 = 1.0;
  Vector law = cert.nu.weights();
  double log_nu = 0.0;
  Vector h(n, 1.0);
  double log_h = 0.0;
  for (Step t = 1; t <= horizon; ++t) {
    log_nu += std::log(conditioned_step(k, law));
    h = right_multiply(k.entries(), h);
    const double top = max_abs(h);
    for (double& v : h) v /= top;
    log_h += std::log(top);
    c2 = std::min(c2, std::exp(log_nu - log_h));
  }

  // Tail: eta(x) / (1 + eps) <= eta_t(x) <= eta(x) / (1 - eps), eps = a1 e^{-gamma H}.
  const double nu_eta = cert.nu.expectation(s.eta);
  const double eta_max = max_abs(s.eta);
  double eps = 0.0;
  if (!fit.degenerate()) {
    const ScaledPowers powers(k, s, horizon);
    const double a1 = eta_bound_constant(powers, fit.rate, 1, horizon);
    eps = a1 * std::exp(-fit.rate * static_cast<double>(horizon));
  }
  cert.tail_bound = eps < 1.0 ? nu_eta * (1.0 - eps) / ((1.0 + eps) * eta_max) : 0.0;
  cert.c2 = std::min(c2, cert.tail_bound);
  if (!(cert.c2 > 0.0))
    throw CertificationFailure("certify_minorization: survival comparison not established; raise horizon");
  return cert;
}

}  // namespace qsd
