#pragma once

// Absorbed finite Markov chains: kernels, distributions, survival and
// conditioned evolution.
//
// The absorbing state is implicit. A kernel K holds the transition
// probabilities among the n survivor states; row x loses 1 - sum_y K(x,y)
// to absorption at every step.

#include <cmath>
#include <cstddef>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "qsd/error.hpp"
#include "qsd/linalg.hpp"

namespace qsd {

using State = std::size_t;
using Step = long;

/// Probability vector on the survivor states.
class Distribution {
 public:
  Distribution() = default;

  /// Takes weights that already sum to one (within 1e-12).
  explicit Distribution(Vector weights) : weights_(std::move(weights)) {
    if (weights_.empty()) throw InvalidArgument("distribution: empty weight vector");
    for (double w : weights_)
      if (!(w >= 0.0) || !std::isfinite(w))
        throw InvalidArgument("distribution: weights must be finite and nonnegative");
    if (std::abs(sum(weights_) - 1.0) > 1e-12)
      throw InvalidArgument("distribution: weights do not sum to 1");
  }

  /// Rescales nonnegative weights to unit mass.
  static Distribution normalized(Vector weights) {
    double mass = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0) || !std::isfinite(w))
        throw InvalidArgument("distribution: weights must be finite and nonnegative");
      mass += w;
    }
    if (!(mass > 0.0)) throw InvalidArgument("distribution: zero total mass");
    for (double& w : weights) w /= mass;
    return Distribution(std::move(weights));
  }

  static Distribution dirac(std::size_t n, State x) {
    if (x >= n) throw InvalidArgument("distribution: state out of range");
    Vector w(n, 0.0);
    w[x] = 1.0;
    return Distribution(std::move(w));
  }

  static Distribution uniform(std::size_t n) {
    return Distribution(Vector(n, 1.0 / static_cast<double>(n)));
  }

  std::size_t size() const noexcept { return weights_.size(); }
  double operator[](State x) const { return weights_[x]; }
  const Vector& weights() const noexcept { return weights_; }

  /// Integral of f against the distribution.
  double expectation(std::span<const double> f) const { return dot(weights_, f); }

 private:
  Vector weights_;
};

/// Half-L1 total variation distance, in [0, 1].
inline double tv_distance(std::span<const double> mu, std::span<const double> nu) {
  if (mu.size() != nu.size()) throw InvalidArgument("tv_distance: size mismatch");
  double l1 = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) l1 += std::abs(mu[i] - nu[i]);
  return 0.5 * l1;
}

inline double tv_distance(const Distribution& mu, const Distribution& nu) {
  return tv_distance(mu.weights(), nu.weights());
}

namespace detail {

// Boolean reachability pattern of K^m for some m >= n^2, by repeated squaring.
inline std::vector<char> positivity_pattern(const Matrix& k) {
  const std::size_t n = k.rows();
  std::vector<char> p(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) p[i * n + j] = k(i, j) > 0.0;
  const std::size_t target = n * n;
  for (std::size_t m = 1; m < target; m *= 2) {
    std::vector<char> q(n * n, 0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t l = 0; l < n; ++l) {
        if (!p[i * n + l]) continue;
        for (std::size_t j = 0; j < n; ++j) q[i * n + j] |= p[l * n + j];
      }
    p = std::move(q);
  }
  return p;
}

}  // namespace detail

/// Killed transition matrix on the survivor states.
///
/// Construction enforces: entries in [0, 1], row sums <= 1, at least one row
/// losing mass, and primitivity (K^m > 0 entrywise for some m <= n^2).
class SubStochasticKernel {
 public:
  SubStochasticKernel() = default;

  explicit SubStochasticKernel(Matrix entries, double time_unit = 1.0)
      : entries_(std::move(entries)), time_unit_(time_unit) {
    validate();
  }

  std::size_t size() const noexcept { return entries_.rows(); }
  const Matrix& entries() const noexcept { return entries_; }
  double operator()(State x, State y) const { return entries_(x, y); }
  double time_unit() const noexcept { return time_unit_; }

  double row_sum(State x) const { return sum(entries_.row(x)); }
  double absorption(State x) const { return 1.0 - row_sum(x); }

  /// Same transition law with a different physical duration per step.
  SubStochasticKernel with_time_unit(double time_unit) const {
    return SubStochasticKernel(entries_, time_unit);
  }

 private:
  void validate() const {
    const std::size_t n = entries_.rows();
    if (n == 0 || entries_.cols() != n) throw InvalidKernel("kernel: matrix must be square and nonempty");
    if (!(time_unit_ > 0.0) || !std::isfinite(time_unit_))
      throw InvalidKernel("kernel: time_unit must be positive");
    bool leaks = false;
    for (std::size_t x = 0; x < n; ++x) {
      double row = 0.0;
      for (std::size_t y = 0; y < n; ++y) {
        const double v = entries_(x, y);
        if (!(v >= 0.0) || !std::isfinite(v)) {
          std::ostringstream msg;
          msg << "kernel: entry (" << x << ',' << y << ") is negative or not finite";
          throw InvalidKernel(msg.str());
        }
        row += v;
      }
      if (row > 1.0 + 1e-12) {
        std::ostringstream msg;
        msg << "kernel: row " << x << " sums to " << row << " > 1";
        throw InvalidKernel(msg.str());
      }
      if (row < 1.0 - 1e-15) leaks = true;
    }
    if (!leaks) throw InvalidKernel("kernel: no row loses mass, absorption is impossible");

    const auto pattern = detail::positivity_pattern(entries_);
    std::ostringstream bad;
    std::size_t violations = 0;
    for (std::size_t x = 0; x < n; ++x)
      for (std::size_t y = 0; y < n; ++y)
        if (!pattern[x * n + y]) {
          if (violations < 16) bad << " (" << x << "->" << y << ")";
          ++violations;
        }
    if (violations > 0) {
      std::ostringstream msg;
      msg << "kernel: not primitive, " << violations
          << " state pairs never connected at a common step:" << bad.str();
      if (violations > 16) msg << " ...";
      throw InvalidKernel(msg.str());
    }
  }

  Matrix entries_;
  double time_unit_ = 1.0;
};

/// Continuous-time killed generator: off-diagonal >= 0, row sums <= 0.
class Generator {
 public:
  explicit Generator(Matrix rates) : rates_(std::move(rates)) {
    const std::size_t n = rates_.rows();
    if (n == 0 || rates_.cols() != n) throw InvalidArgument("generator: matrix must be square and nonempty");
    for (std::size_t x = 0; x < n; ++x) {
      double row = 0.0;
      for (std::size_t y = 0; y < n; ++y) {
        const double v = rates_(x, y);
        if (!std::isfinite(v)) throw InvalidArgument("generator: non-finite rate");
        if (x != y && v < 0.0) throw InvalidArgument("generator: negative off-diagonal rate");
        row += v;
      }
      if (rates_(x, x) > 0.0) throw InvalidArgument("generator: positive diagonal entry");
      if (row > 1e-12) throw InvalidArgument("generator: positive row sum");
    }
  }

  std::size_t size() const noexcept { return rates_.rows(); }
  const Matrix& rates() const noexcept { return rates_; }
  double operator()(State x, State y) const { return rates_(x, y); }

  double max_exit_rate() const {
    double m = 0.0;
    for (std::size_t x = 0; x < size(); ++x) m = std::max(m, -rates_(x, x));
    return m;
  }

 private:
  Matrix rates_;
};

/// I + G/theta as a plain matrix (no primitivity check).
inline Matrix uniformized_entries(const Generator& g, double theta) {
  if (!(theta > 0.0) || theta < g.max_exit_rate())
    throw InvalidArgument("uniformize: rate must be at least the largest exit rate");
  const std::size_t n = g.size();
  Matrix k(n, n);
  for (std::size_t x = 0; x < n; ++x)
    for (std::size_t y = 0; y < n; ++y)
      k(x, y) = (x == y ? 1.0 : 0.0) + g(x, y) / theta;
  for (std::size_t x = 0; x < n; ++x) k(x, x) = std::max(0.0, k(x, x));
  return k;
}

/// K = I + G/theta with one step lasting 1/theta. Throws InvalidKernel when
/// the result is periodic, e.g. theta equal to every exit rate of a cycle.
inline SubStochasticKernel uniformize(const Generator& g, double theta) {
  return SubStochasticKernel(uniformized_entries(g, theta), 1.0 / theta);
}

/// Continuous-time decay rate recovered from a uniformized kernel's rho.
inline double continuous_decay_rate(double rho, double theta) { return theta * (1.0 - rho); }

/// Survival profile K^s 1 divided by its largest entry, plus log of that scale.
struct ScaledVector {
  Vector shape;
  double log_scale = 0.0;

  Vector values() const {
    Vector v(shape.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = shape[i] * std::exp(log_scale);
    return v;
  }
};

/// log P_x(t < tau) for every x, computed with stepwise rescaling.
inline Vector log_survival_vector(const SubStochasticKernel& k, Step t) {
  if (t < 0) throw InvalidArgument("survival_vector: negative step count");
  ScaledVector h{Vector(k.size(), 1.0), 0.0};
  for (Step s = 0; s < t; ++s) {
    h.shape = right_multiply(k.entries(), h.shape);
    const double m = max_abs(h.shape);
    if (!(m > 1e-300)) throw HorizonTooLarge("survival_vector: surviving mass underflow");
    for (double& v : h.shape) v /= m;
    h.log_scale += std::log(m);
  }
  Vector out(k.size());
  for (std::size_t x = 0; x < out.size(); ++x) out[x] = std::log(h.shape[x]) + h.log_scale;
  return out;
}

/// P_x(t < tau) = (K^t 1)(x). Entries may underflow to 0 at long horizons;
/// use log_survival_vector there.
inline Vector survival_vector(const SubStochasticKernel& k, Step t) {
  if (t < 0) throw InvalidArgument("survival_vector: negative step count");
  Vector h(k.size(), 1.0);
  for (Step s = 0; s < t; ++s) h = right_multiply(k.entries(), h);
  return h;
}

/// Scale-free survival shapes K^s 1 / max for s = 0..s_max.
inline std::vector<Vector> survival_shapes(const SubStochasticKernel& k, Step s_max) {
  std::vector<Vector> shapes;
  shapes.reserve(static_cast<std::size_t>(s_max) + 1);
  shapes.emplace_back(k.size(), 1.0);
  for (Step s = 1; s <= s_max; ++s) {
    Vector h = right_multiply(k.entries(), shapes.back());
    const double m = max_abs(h);
    if (!(m > 1e-300)) throw HorizonTooLarge("survival_shapes: surviving mass underflow");
    for (double& v : h) v /= m;
    shapes.push_back(std::move(h));
  }
  return shapes;
}

/// One renormalized step mu -> mu K / (mu K 1). Returns the mass mu K 1.
inline double conditioned_step(const SubStochasticKernel& k, Vector& law) {
  law = left_multiply(law, k.entries());
  const double mass = sum(law);
  if (!(mass > 1e-300)) throw HorizonTooLarge("conditioned_evolve: surviving mass underflow");
  for (double& v : law) v /= mass;
  return mass;
}

/// Law of X_t given t < tau, started from mu.
inline Distribution conditioned_evolve(const SubStochasticKernel& k, const Distribution& mu, Step t) {
  if (t < 0) throw InvalidArgument("conditioned_evolve: negative step count");
  if (mu.size() != k.size()) throw InvalidArgument("conditioned_evolve: size mismatch");
  if (t == 0) return mu;
  Vector law = mu.weights();
  for (Step s = 0; s < t; ++s) conditioned_step(k, law);
  return Distribution::normalized(std::move(law));
}

/// log P_mu(t < tau) = log (mu K^t 1).
inline double log_survival(const SubStochasticKernel& k, const Distribution& mu, Step t) {
  if (t < 0) throw InvalidArgument("log_survival: negative step count");
  Vector law = mu.weights();
  double log_mass = 0.0;
  for (Step s = 0; s < t; ++s) log_mass += std::log(conditioned_step(k, law));
  return log_mass;
}

/// Conditioned laws of X_t from delta_x for t = 0..t_max.
inline std::vector<Vector> conditioned_path(const SubStochasticKernel& k, State x, Step t_max) {
  std::vector<Vector> laws;
  laws.reserve(static_cast<std::size_t>(t_max) + 1);
  laws.push_back(Distribution::dirac(k.size(), x).weights());
  for (Step s = 1; s <= t_max; ++s) {
    Vector law = laws.back();
    conditioned_step(k, law);
    laws.push_back(std::move(law));
  }
  return laws;
}

/// Pointwise product of a forward law and a survival shape, renormalized.
inline Vector bridge_weights(std::span<const double> forward, std::span<const double> survival) {
  Vector w(forward.size());
  double mass = 0.0;
  for (std::size_t y = 0; y < w.size(); ++y) {
    w[y] = forward[y] * survival[y];
    mass += w[y];
  }
  if (!(mass > 0.0)) throw HorizonTooLarge("bridge: surviving mass underflow");
  for (double& v : w) v /= mass;
  return w;
}

/// Law of X_t given X_0 = x and T < tau (the bridge operator R^T_{0,t}).
inline Distribution conditioned_marginal_given_T(const SubStochasticKernel& k, State x, Step t, Step T) {
  if (t < 0 || t > T) throw InvalidArgument("conditioned_marginal_given_T: need 0 <= t <= T");
  if (x >= k.size()) throw InvalidArgument("conditioned_marginal_given_T: state out of range");
  if (t == 0) return Distribution::dirac(k.size(), x);
  const Distribution forward = conditioned_evolve(k, Distribution::dirac(k.size(), x), t);
  if (t == T) return forward;
  const auto shapes = survival_shapes(k, T - t);
  return Distribution::normalized(bridge_weights(forward.weights(), shapes.back()));
}

}  // namespace qsd
