#pragma once

// Kernel zoo: chains that satisfy the uniform conditions (logistic
// birth-death, dense random kernels) and truncations of chains that fail
// them in the limit (linear birth-death, Ornstein-Uhlenbeck with killing).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "qsd/error.hpp"
#include "qsd/linalg.hpp"
#include "qsd/markov_core.hpp"

namespace qsd {

struct ModelSpec {
  std::string kind;
  std::size_t n = 1;
  std::uint64_t seed = 0;
  std::map<std::string, double> params;

  double param(const std::string& name, double fallback) const {
    const auto it = params.find(name);
    return it == params.end() ? fallback : it->second;
  }
};

namespace models {

inline const std::vector<std::string>& kinds() {
  static const std::vector<std::string> k{"birth_death", "logistic_bd", "random_substochastic",
                                          "linear_bd_truncated", "ou_discretized"};
  return k;
}

/// Three-state golden kernel shared by the cross-module checks.
inline SubStochasticKernel w3() {
  return SubStochasticKernel(Matrix(3, 3, {0.3, 0.4, 0.0, 0.3, 0.3, 0.3, 0.0, 0.4, 0.5}));
}

/// Symmetric two-state kernel with constant row sums 0.7.
inline SubStochasticKernel t3() { return SubStochasticKernel(Matrix(2, 2, {0.4, 0.3, 0.3, 0.4})); }

namespace detail {

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw InvalidArgument("model: " + msg);
}

inline double unit_uniform(std::mt19937_64& gen) { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }

// Discrete-time birth-death chain: state 0 dies to the absorbing state, the
// top state's birth mass stays put.
inline SubStochasticKernel tridiagonal(std::size_t n, const std::vector<double>& birth,
                                       const std::vector<double>& death) {
  Matrix k(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const double b = i + 1 < n ? birth[i] : 0.0;
    const double d = death[i];
    const double stay = 1.0 - b - d;
    require(stay >= -1e-15, "birth + death exceeds 1 at state " + std::to_string(i));
    if (i + 1 < n) k(i, i + 1) = b;
    if (i > 0) k(i, i - 1) = d;
    k(i, i) = std::max(0.0, stay);
  }
  return SubStochasticKernel(std::move(k));
}

inline SubStochasticKernel birth_death(const ModelSpec& s) {
  const double b = s.param("birth", 0.3);
  const double d = s.param("death", 0.3);
  require(b >= 0.0 && d > 0.0 && b + d <= 1.0, "birth_death needs birth >= 0, death > 0, birth + death <= 1");
  require(s.n == 1 || b > 0.0, "birth_death needs birth > 0 when n > 1");
  return tridiagonal(s.n, std::vector<double>(s.n, b), std::vector<double>(s.n, d));
}

// b(i) = max(0, birth - birth_slope * i), d(i) = death + competition * i.
// The default slope birth / n keeps every birth rate positive.
inline SubStochasticKernel logistic_bd(const ModelSpec& s) {
  const double b0 = s.param("birth", 0.4);
  const double slope = s.param("birth_slope", b0 / static_cast<double>(s.n));
  const double d0 = s.param("death", 0.3);
  const double comp = s.param("competition", 0.0);
  require(b0 > 0.0 && slope >= 0.0 && d0 > 0.0 && comp >= 0.0, "logistic_bd parameters must be nonnegative");
  std::vector<double> birth(s.n), death(s.n);
  for (std::size_t i = 0; i < s.n; ++i) {
    birth[i] = std::max(0.0, b0 - slope * static_cast<double>(i));
    death[i] = d0 + comp * static_cast<double>(i);
  }
  return tridiagonal(s.n, birth, death);
}

inline SubStochasticKernel random_substochastic(const ModelSpec& s) {
  const double min_absorb = s.param("min_absorb", 0.05);
  const double max_absorb = s.param("max_absorb", 0.5);
  const double density = s.param("density", 1.0);
  require(min_absorb > 0.0 && min_absorb <= max_absorb && max_absorb < 1.0,
          "random_substochastic needs 0 < min_absorb <= max_absorb < 1");
  require(density > 0.0 && density <= 1.0, "random_substochastic needs density in (0, 1]");
  std::mt19937_64 gen(s.seed);
  const std::size_t n = s.n;
  Matrix k(n, n);
  for (std::size_t x = 0; x < n; ++x) {
    double row = 0.0;
    for (std::size_t y = 0; y < n; ++y) {
      const double keep = unit_uniform(gen);
      const double w = 0.05 + unit_uniform(gen);
      // self-loops and the cycle x -> x+1 keep the kernel primitive
      const bool forced = y == x || y == (x + 1) % n;
      k(x, y) = (forced || keep < density) ? w : 0.0;
      row += k(x, y);
    }
    const double absorb = min_absorb + (max_absorb - min_absorb) * unit_uniform(gen);
    for (std::size_t y = 0; y < n; ++y) k(x, y) *= (1.0 - absorb) / row;
  }
  return SubStochasticKernel(std::move(k));
}

// theta = (1 + slack) * max exit rate; a positive slack leaves mass on every
// diagonal, so small truncations stay aperiodic.
inline constexpr double kDefaultSlack = 0.05;

inline SubStochasticKernel uniformized(Matrix g, double slack) {
  const Generator gen(std::move(g));
  return uniformize(gen, gen.max_exit_rate() * (1.0 + slack));
}

// Continuous-time linear birth-death with k = i + 1 individuals:
// birth k * birth_rate, death k * death_rate, state 0 dies out.
inline SubStochasticKernel linear_bd_truncated(const ModelSpec& s) {
  const double lambda = s.param("birth_rate", 1.0);
  const double mu = s.param("death_rate", 1.0);
  const double slack = s.param("uniformization_slack", kDefaultSlack);
  require(lambda > 0.0 && mu > 0.0 && slack >= 0.0, "linear_bd_truncated needs positive rates");
  require(s.n >= 2, "linear_bd_truncated needs n >= 2");
  const std::size_t n = s.n;
  Matrix g(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const double k = static_cast<double>(i + 1);
    const double up = i + 1 < n ? k * lambda : 0.0;
    const double down = k * mu;
    if (i + 1 < n) g(i, i + 1) = up;
    if (i > 0) g(i, i - 1) = down;
    g(i, i) = -(up + down);
  }
  return uniformized(std::move(g), slack);
}

// Upwind finite differences for dX = -kappa X dt + sigma dW on a grid of
// spacing h centred at 0; jumps off either end are killed.
inline SubStochasticKernel ou_discretized(const ModelSpec& s) {
  const double kappa = s.param("kappa", 1.0);
  const double sigma = s.param("sigma", 1.0);
  const double h = s.param("h", 0.25);
  const double slack = s.param("uniformization_slack", kDefaultSlack);
  require(kappa > 0.0 && sigma > 0.0 && h > 0.0 && slack >= 0.0, "ou_discretized needs positive parameters");
  require(s.n >= 2, "ou_discretized needs n >= 2");
  const std::size_t n = s.n;
  const double diffusion = sigma * sigma / (2.0 * h * h);
  Matrix g(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = (static_cast<double>(i) - 0.5 * static_cast<double>(n - 1)) * h;
    const double drift = -kappa * x;
    const double right = diffusion + std::max(drift, 0.0) / h;
    const double left = diffusion + std::max(-drift, 0.0) / h;
    if (i + 1 < n) g(i, i + 1) = right;
    if (i > 0) g(i, i - 1) = left;
    g(i, i) = -(right + left);
  }
  return uniformized(std::move(g), slack);
}

}  // namespace detail

/// Builds the kernel described by `spec`; throws InvalidArgument on bad parameters.
inline SubStochasticKernel build(const ModelSpec& spec) {
  detail::require(spec.n >= 1, "n must be >= 1");
  if (spec.kind == "birth_death") return detail::birth_death(spec);
  if (spec.kind == "logistic_bd") return detail::logistic_bd(spec);
  if (spec.kind == "random_substochastic") return detail::random_substochastic(spec);
  if (spec.kind == "linear_bd_truncated") return detail::linear_bd_truncated(spec);
  if (spec.kind == "ou_discretized") return detail::ou_discretized(spec);
  throw InvalidArgument("model: unknown kind '" + spec.kind + "'");
}

inline SubStochasticKernel random_kernel(std::size_t n, std::uint64_t seed, double min_absorb = 0.05) {
  return build(ModelSpec{"random_substochastic", n, seed, {{"min_absorb", min_absorb}}});
}

}  // namespace models

/// Minorization constant c1(t0) = sum_y min_x P_x(X_t0 = y | t0 < tau).
inline double minorization_constant(const SubStochasticKernel& k, Step t0) {
  const std::size_t n = k.size();
  std::vector<Vector> laws(n);
  for (std::size_t x = 0; x < n; ++x) laws[x] = conditioned_evolve(k, Distribution::dirac(n, x), t0).weights();
  double c1 = 0.0;
  for (std::size_t y = 0; y < n; ++y) {
    double m = laws[0][y];
    for (std::size_t x = 1; x < n; ++x) m = std::min(m, laws[x][y]);
    c1 += m;
  }
  return c1;
}

struct ConditionRow {
  std::size_t n = 0;
  Step t0 = 0;
  double c1 = 0.0;
};

/// c1(t0) for t0 = 1..t0_max.
inline std::vector<ConditionRow> condition_quality(const SubStochasticKernel& k, Step t0_max) {
  std::vector<ConditionRow> rows;
  const std::size_t n = k.size();
  std::vector<Vector> laws(n);
  for (std::size_t x = 0; x < n; ++x) laws[x] = Distribution::dirac(n, x).weights();
  for (Step t = 1; t <= t0_max; ++t) {
    for (auto& law : laws) conditioned_step(k, law);
    double c1 = 0.0;
    for (std::size_t y = 0; y < n; ++y) {
      double m = laws[0][y];
      for (std::size_t x = 1; x < n; ++x) m = std::min(m, laws[x][y]);
      c1 += m;
    }
    rows.push_back({n, t, c1});
  }
  return rows;
}

/// c1 at a fixed physical time (t0 = ceil(time / time_unit) steps) as the
/// truncation size of `base` varies.
inline std::vector<ConditionRow> truncation_trend(ModelSpec base, const std::vector<std::size_t>& sizes,
                                                  double physical_time) {
  if (!(physical_time > 0.0)) throw InvalidArgument("truncation_trend: time must be positive");
  std::vector<ConditionRow> rows;
  for (std::size_t n : sizes) {
    base.n = n;
    const SubStochasticKernel k = models::build(base);
    const auto t0 = std::max<Step>(1, static_cast<Step>(std::ceil(physical_time / k.time_unit() - 1e-9)));
    rows.push_back({n, t0, minorization_constant(k, t0)});
  }
  return rows;
}

}  // namespace qsd
