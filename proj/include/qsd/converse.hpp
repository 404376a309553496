#pragma once

// Bridge operators R^T_{s,t} (the chain pinned to survive until T), their
// Dobrushin coefficients, and the contraction argument that turns uniform
// Q-process approximation plus Q-mixing into exponential convergence.

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "qsd/ergodic.hpp"
#include "qsd/error.hpp"
#include "qsd/markov_core.hpp"
#include "qsd/parallel.hpp"
#include "qsd/qprocess.hpp"
#include "qsd/spectral.hpp"

namespace qsd {

/// max over state pairs of the TV distance between rows of a row-stochastic family.
inline double max_pair_tv(const std::vector<Vector>& rows) {
  double worst = 0.0;
  for (std::size_t x = 0; x < rows.size(); ++x)
    for (std::size_t y = x + 1; y < rows.size(); ++y) worst = std::max(worst, tv_distance(rows[x], rows[y]));
  return worst;
}

/// delta(t, T) = max_{x,y} TV(delta_x R^T_{0,t}, delta_y R^T_{0,t}).
inline double dobrushin_coeff(const SubStochasticKernel& k, Step t, Step T) {
  if (t < 0 || t > T) throw InvalidArgument("dobrushin_coeff: need 0 <= t <= T");
  const std::size_t n = k.size();
  if (n == 1) return 0.0;
  const auto shapes = survival_shapes(k, T - t);
  std::vector<Vector> rows;
  rows.reserve(n);
  for (std::size_t x = 0; x < n; ++x) {
    const Distribution fw = conditioned_evolve(k, Distribution::dirac(n, x), t);
    rows.push_back(bridge_weights(fw.weights(), shapes.back()));
  }
  return max_pair_tv(rows);
}

/// delta(t, T) for T = t..T_max, sharing the forward laws.
inline std::vector<double> dobrushin_profile(const SubStochasticKernel& k, Step t, Step T_max) {
  if (t < 0 || t > T_max) throw InvalidArgument("dobrushin_profile: need 0 <= t <= T_max");
  const std::size_t n = k.size();
  std::vector<Vector> forward;
  forward.reserve(n);
  for (std::size_t x = 0; x < n; ++x)
    forward.push_back(conditioned_evolve(k, Distribution::dirac(n, x), t).weights());
  const auto shapes = survival_shapes(k, T_max - t);
  std::vector<double> out;
  out.reserve(shapes.size());
  std::vector<Vector> rows(n);
  for (const auto& h : shapes) {
    for (std::size_t x = 0; x < n; ++x) rows[x] = bridge_weights(forward[x], h);
    out.push_back(n == 1 ? 0.0 : max_pair_tv(rows));
  }
  return out;
}

struct ConverseLimits {
  Step t1_max = 16;
  /// Largest horizon probed for sup_{T >= T1} delta(t1, T).
  Step T_limit = 512;
  /// Largest T on the decay curve of R^T_{0,T}.
  Step decay_T_max = 200;
  /// delta(t1, T) must move by less than this over the last half of the probe.
  double stabilization_tol = 1e-9;
  unsigned threads = 1;
};

struct FrontierPoint {
  Step t1 = 0;
  Step T1 = 0;
  double sup_delta = 0.0;
};

struct DecayPoint {
  Step T = 0;
  double sup_pair_tv = 0.0;
  double envelope = 0.0;
};

struct ContractionReport {
  bool certified = false;
  Step t1 = 0;
  Step T1 = 0;
  double delta = 0.0;
  std::vector<DecayPoint> decay_curve;
  /// Every (t1, T1) candidate probed, in search order.
  std::vector<FrontierPoint> frontier;
  /// |delta(t1, T_limit) - delta(t1, T_limit / 2)| for the certified t1.
  double stabilization_gap = 0.0;
  bool envelope_respected = false;
};

/// (1/2)^{floor((T - T1) / t1)}.
inline double contraction_envelope(Step T, Step T1, Step t1) {
  if (T < T1) return 1.0;
  return std::pow(0.5, static_cast<double>((T - T1) / t1));
}

/// Finds the smallest t1 (then the smallest T1 in {t1, 2 t1, 4 t1, ...}) with
/// sup_{T1 <= T <= T_limit} delta(t1, T) <= 1/2 and a stabilized tail, then
/// checks sup-pair TV of R^T_{0,T} against (1/2)^{floor((T - T1) / t1)}.
/// A failed search returns certified = false with the probed frontier.
inline ContractionReport certify_converse(const SubStochasticKernel& k, ConverseLimits limits = {}) {
  if (limits.t1_max < 1 || limits.T_limit < 2 || limits.decay_T_max < 1)
    throw InvalidArgument("certify_converse: limits must be positive");
  ContractionReport report;
  const std::size_t n = k.size();

  const auto t1_count = static_cast<std::size_t>(std::min(limits.t1_max, limits.T_limit / 2));
  std::vector<std::vector<double>> profiles(t1_count);
  parallel_for(t1_count, limits.threads, [&](std::size_t i) {
    profiles[i] = dobrushin_profile(k, static_cast<Step>(i) + 1, limits.T_limit);
  });

  for (std::size_t i = 0; i < t1_count && !report.certified; ++i) {
    const Step t1 = static_cast<Step>(i) + 1;
    const auto& prof = profiles[i];  // prof[j] = delta(t1, t1 + j)
    auto at = [&](Step T) { return prof[static_cast<std::size_t>(T - t1)]; };
    double gap = 0.0;
    for (Step T = limits.T_limit / 2; T <= limits.T_limit; ++T)
      gap = std::max(gap, std::abs(at(T) - at(limits.T_limit)));
    for (Step T1 = t1; 2 * T1 <= limits.T_limit; T1 *= 2) {
      double sup = 0.0;
      for (Step T = T1; T <= limits.T_limit; ++T) sup = std::max(sup, at(T));
      report.frontier.push_back({t1, T1, sup});
      if (sup <= 0.5 && gap <= limits.stabilization_tol) {
        report.certified = true;
        report.t1 = t1;
        report.T1 = T1;
        report.delta = sup;
        report.stabilization_gap = gap;
        break;
      }
    }
  }
  if (!report.certified) return report;

  // sup-pair TV of conditioned laws, i.e. of R^T_{0,T}.
  std::vector<Vector> laws(n);
  for (std::size_t x = 0; x < n; ++x) laws[x] = Distribution::dirac(n, x).weights();
  report.envelope_respected = true;
  for (Step T = 1; T <= limits.decay_T_max; ++T) {
    for (auto& law : laws) conditioned_step(k, law);
    if (T < report.T1) continue;
    const double v = n == 1 ? 0.0 : max_pair_tv(laws);
    const double env = contraction_envelope(T, report.T1, report.t1);
    report.decay_curve.push_back({T, v, env});
    if (v > env + 1e-9) report.envelope_respected = false;
  }
  report.certified = report.envelope_respected;
  return report;
}

/// Decay curves for the two hypotheses of the converse statement.
struct HypothesisReport {
  /// (T, sup over t in t_grid, t <= T, and x of TV(Q_x(X_t), P_x(X_t | T < tau))).
  Series bridge_curve;
  /// (t, sup_{x,y} TV(Q_x(X_t), Q_y(X_t))).
  Series mixing_curve;
  DecayFit bridge_fit;
  DecayFit mixing_fit;
  bool bridge_decays = false;
  bool mixing_decays = false;
};

namespace detail {

inline bool curve_decays(const Series& curve, const DecayFit& fit) {
  if (curve.empty()) return false;
  // a curve that never leaves the roundoff floor is zero
  const bool resolved = std::any_of(curve.begin(), curve.end(), [](const auto& p) { return p.second > kRoundoffFloor; });
  if (!resolved || curve.back().second == 0.0) return true;
  return fit.rate > 0.0 && curve.back().second < curve.front().second;
}

}  // namespace detail

/// Evaluates both curves directly (no spectral deflation); rates are fitted
/// on points above the roundoff floor.
inline HypothesisReport hypothesis_check(const SubStochasticKernel& k, const QKernel& q, std::vector<Step> t_grid,
                                         std::vector<Step> T_grid) {
  t_grid = detail::sorted_unique(std::move(t_grid));
  T_grid = detail::sorted_unique(std::move(T_grid));
  if (t_grid.empty() || T_grid.empty() || t_grid.front() < 0) throw InvalidArgument("hypothesis_check: empty grid");
  if (q.size() != k.size()) throw InvalidArgument("hypothesis_check: size mismatch");
  const std::size_t n = k.size();
  HypothesisReport r;

  const Step t_max = t_grid.back();
  std::vector<std::vector<Vector>> q_laws(n);
  for (std::size_t x = 0; x < n; ++x) {
    Vector law = Distribution::dirac(n, x).weights();
    for (Step t = 0; t <= t_max; ++t) {
      if (t > 0) law = left_multiply(law, q.entries());
      q_laws[x].push_back(law);
    }
  }

  const BridgeTable table(k, std::max(T_grid.back(), t_max));
  for (Step T : T_grid) {
    double worst = 0.0;
    for (Step t : t_grid) {
      if (t > T) break;
      for (std::size_t x = 0; x < n; ++x)
        worst = std::max(worst, tv_distance(q_laws[x][static_cast<std::size_t>(t)], table.marginal(x, t, T)));
    }
    r.bridge_curve.emplace_back(static_cast<double>(T), worst);
  }
  for (Step t : t_grid) {
    std::vector<Vector> rows(n);
    for (std::size_t x = 0; x < n; ++x) rows[x] = q_laws[x][static_cast<std::size_t>(t)];
    r.mixing_curve.emplace_back(static_cast<double>(t), max_pair_tv(rows));
  }
  r.bridge_fit = fit_decay_tail(r.bridge_curve, kRoundoffFloor);
  r.mixing_fit = fit_decay_tail(r.mixing_curve, kRoundoffFloor);
  r.bridge_decays = detail::curve_decays(r.bridge_curve, r.bridge_fit);
  r.mixing_decays = detail::curve_decays(r.mixing_curve, r.mixing_fit);
  return r;
}

}  // namespace qsd
