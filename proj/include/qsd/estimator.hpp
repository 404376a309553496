#pragma once

// Seeded Monte Carlo estimation of beta(f) from surviving trajectories and
// the N-versus-T error tradeoff.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "qsd/ergodic.hpp"
#include "qsd/error.hpp"
#include "qsd/markov_core.hpp"
#include "qsd/parallel.hpp"
#include "qsd/spectral.hpp"

namespace qsd {

inline constexpr std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Stateless generator: the draw for (trajectory, step) depends only on the
/// seed and those two counters, never on how trajectories are partitioned.
class CounterRng {
 public:
  explicit constexpr CounterRng(std::uint64_t seed) : seed_(seed) {}

  constexpr std::uint64_t stream_key(std::uint64_t trajectory) const {
    return splitmix64(seed_ ^ splitmix64(trajectory));
  }

  constexpr std::uint64_t bits(std::uint64_t key, std::uint64_t step) const {
    return splitmix64(key + step * 0xd1b54a32d192ed03ULL);
  }

  /// Uniform on [0, 1) with 53 random bits.
  constexpr double uniform(std::uint64_t key, std::uint64_t step) const {
    return static_cast<double>(bits(key, step) >> 11) * 0x1.0p-53;
  }

  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::uint64_t seed_;
};

/// Derives an independent seed for a sub-experiment.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return splitmix64(splitmix64(seed ^ splitmix64(a)) ^ splitmix64(~b));
}

/// N trajectories from x0 up to step T; survivors keep their whole path.
struct TrajectoryBatch {
  std::uint64_t seed = 0;
  State x0 = 0;
  Step T = 0;
  std::size_t N = 0;
  std::size_t N_T = 0;
  /// Trajectory index of each survivor, increasing.
  std::vector<std::size_t> survivors;
  /// Survivor paths, row-major N_T x (T + 1).
  std::vector<std::uint32_t> paths;
  /// Step at which each trajectory was absorbed, or -1 for survivors.
  std::vector<std::int32_t> absorption_step;

  std::span<const std::uint32_t> path(std::size_t survivor) const {
    const auto len = static_cast<std::size_t>(T) + 1;
    return {paths.data() + survivor * len, len};
  }
  bool extinct() const noexcept { return N_T == 0; }
};

/// Simulates N absorbed trajectories. Bit-identical for a fixed seed at any thread count.
inline TrajectoryBatch simulate(const SubStochasticKernel& k, State x0, Step T, std::size_t N, std::uint64_t seed,
                                unsigned threads = 1) {
  if (N < 1) throw InvalidArgument("simulate: N must be >= 1");
  if (T < 0) throw InvalidArgument("simulate: negative horizon");
  const std::size_t n = k.size();
  if (x0 >= n) throw InvalidArgument("simulate: start state out of range");

  Matrix cumulative(n, n);
  for (std::size_t x = 0; x < n; ++x) {
    double acc = 0.0;
    for (std::size_t y = 0; y < n; ++y) cumulative(x, y) = acc += k(x, y);
  }

  const CounterRng rng(seed);
  const auto len = static_cast<std::size_t>(T) + 1;
  constexpr std::size_t kBlock = 4096;
  const std::size_t blocks = (N + kBlock - 1) / kBlock;

  TrajectoryBatch batch;
  batch.seed = seed;
  batch.x0 = x0;
  batch.T = T;
  batch.N = N;
  batch.absorption_step.assign(N, -1);

  struct BlockOut {
    std::vector<std::size_t> survivors;
    std::vector<std::uint32_t> paths;
  };
  std::vector<BlockOut> out(blocks);

  parallel_for(blocks, threads, [&](std::size_t b) {
    std::vector<std::uint32_t> path(len);
    auto& local = out[b];
    const std::size_t end = std::min(N, (b + 1) * kBlock);
    for (std::size_t i = b * kBlock; i < end; ++i) {
      const std::uint64_t key = rng.stream_key(i);
      std::size_t x = x0;
      path[0] = static_cast<std::uint32_t>(x);
      bool alive = true;
      for (Step s = 0; s < T; ++s) {
        const double u = rng.uniform(key, static_cast<std::uint64_t>(s));
        auto row = cumulative.row(x);
        const auto it = std::upper_bound(row.begin(), row.end(), u);
        if (it == row.end()) {
          batch.absorption_step[i] = static_cast<std::int32_t>(s + 1);
          alive = false;
          break;
        }
        x = static_cast<std::size_t>(it - row.begin());
        path[static_cast<std::size_t>(s) + 1] = static_cast<std::uint32_t>(x);
      }
      if (alive) {
        local.survivors.push_back(i);
        local.paths.insert(local.paths.end(), path.begin(), path.end());
      }
    }
  });

  for (auto& o : out) {
    batch.survivors.insert(batch.survivors.end(), o.survivors.begin(), o.survivors.end());
    batch.paths.insert(batch.paths.end(), o.paths.begin(), o.paths.end());
  }
  batch.N_T = batch.survivors.size();
  return batch;
}

struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
};

/// Average over survivors of sum_atoms w f(X_t), with its standard error.
inline Estimate estimate_beta(const TrajectoryBatch& batch, std::span<const double> f, const SamplingPlan& plan) {
  plan.validate();
  if (batch.N_T < 2) throw InvalidArgument("estimate_beta: fewer than 2 survivors");
  if (plan.horizon > batch.T) throw InvalidArgument("estimate_beta: plan horizon exceeds batch horizon");
  double mean = 0.0;
  double m2 = 0.0;
  for (std::size_t i = 0; i < batch.N_T; ++i) {
    const auto p = batch.path(i);
    double v = 0.0;
    for (auto [t, w] : plan.atoms) v += w * f[p[static_cast<std::size_t>(t)]];
    const double delta = v - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (v - mean);
  }
  const double count = static_cast<double>(batch.N_T);
  const double sd = std::sqrt(m2 / (count - 1.0));
  return {mean, sd / std::sqrt(count)};
}

/// Optimal horizon/sample size and the predicted global error.
struct TradeoffPrediction {
  double zeta = 0.0;
  double T_star = 0.0;
  double N_star = 0.0;
  double predicted_error = 0.0;
};

namespace detail {

// gamma gamma' / (gamma + gamma'), the rate of the best Dirac-plan bias.
inline double bias_rate(double gamma, double gamma_prime) {
  if (std::isinf(gamma) && std::isinf(gamma_prime)) return std::numeric_limits<double>::infinity();
  if (std::isinf(gamma)) return gamma_prime;
  if (std::isinf(gamma_prime)) return gamma;
  return gamma * gamma_prime / (gamma + gamma_prime);
}

inline void check_rates(double lambda0, double gamma, double gamma_prime) {
  if (!(lambda0 > 0.0) || !(gamma > 0.0) || !(gamma_prime > 0.0))
    throw InvalidArgument("predict_tradeoff: rates must be positive");
}

}  // namespace detail

/// zeta = gamma gamma' / (2 gamma gamma' + lambda0 (gamma + gamma')).
inline double error_exponent(double lambda0, double gamma, double gamma_prime) {
  const double kappa = detail::bias_rate(gamma, gamma_prime);
  if (std::isinf(kappa)) return 0.5;
  return kappa / (2.0 * kappa + lambda0);
}

/// e^{lambda0 T / 2} / sqrt(N) + e^{-gamma gamma' T / (gamma + gamma')}.
inline double global_error(double lambda0, double gamma, double gamma_prime, double N, double T) {
  const double kappa = detail::bias_rate(gamma, gamma_prime);
  return std::exp(0.5 * lambda0 * T) / std::sqrt(N) + (std::isinf(kappa) ? 0.0 : std::exp(-kappa * T));
}

/// Fixed N: T* = log N / (lambda0 + 2 gamma gamma' / (gamma + gamma')).
inline TradeoffPrediction predict_tradeoff_for_N(double lambda0, double gamma, double gamma_prime, double N) {
  detail::check_rates(lambda0, gamma, gamma_prime);
  if (!(N >= 1.0)) throw InvalidArgument("predict_tradeoff: N must be >= 1");
  TradeoffPrediction p;
  p.zeta = error_exponent(lambda0, gamma, gamma_prime);
  p.T_star = std::log(N) / (lambda0 + 2.0 * detail::bias_rate(gamma, gamma_prime));
  p.N_star = N;
  p.predicted_error = global_error(lambda0, gamma, gamma_prime, N, p.T_star);
  return p;
}

/// Fixed T: N* = exp((lambda0 + 2 gamma gamma' / (gamma + gamma')) T).
inline TradeoffPrediction predict_tradeoff_for_T(double lambda0, double gamma, double gamma_prime, double T) {
  detail::check_rates(lambda0, gamma, gamma_prime);
  if (!(T >= 0.0)) throw InvalidArgument("predict_tradeoff: T must be >= 0");
  TradeoffPrediction p;
  p.zeta = error_exponent(lambda0, gamma, gamma_prime);
  p.T_star = T;
  p.N_star = std::exp((lambda0 + 2.0 * detail::bias_rate(gamma, gamma_prime)) * T);
  p.predicted_error = global_error(lambda0, gamma, gamma_prime, p.N_star, T);
  return p;
}

struct SweepRow {
  std::size_t N = 0;
  Step T = 0;
  Step t0 = 0;
  double N_T = 0.0;
  double estimate = 0.0;
  double std_error = 0.0;
  double exact = 0.0;
  double abs_error = 0.0;
  double predicted = 0.0;
  /// Every replication ended with fewer than two survivors.
  bool flagged = false;
};

struct SweepOptions {
  State x0 = 0;
  double gamma = 0.0;
  double gamma_prime = 0.0;
  unsigned threads = 1;
};

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// For each N: T = round(T*(N)), plan = Dirac at the optimal t0, and the
/// medians over replications of survivor count, estimate, standard error and
/// absolute error against beta(f). `predicted` is N^{-zeta}.
inline std::vector<SweepRow> sweep_error_vs_N(const SubStochasticKernel& k, const SpectralTriple& s,
                                              std::span<const double> f, const std::vector<std::size_t>& N_list,
                                              std::size_t replications, std::uint64_t seed, SweepOptions opts) {
  if (N_list.empty() || replications < 1) throw InvalidArgument("sweep_error_vs_N: empty sweep");
  if (!std::is_sorted(N_list.begin(), N_list.end()) ||
      std::adjacent_find(N_list.begin(), N_list.end()) != N_list.end())
    throw InvalidArgument("sweep_error_vs_N: N_list must be strictly increasing");
  if (f.size() != k.size()) throw InvalidArgument("sweep_error_vs_N: f has wrong size");
  const double lambda0 = s.lambda0();
  const double exact = s.beta_of(f);
  const double zeta = error_exponent(lambda0, opts.gamma, opts.gamma_prime);

  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < N_list.size(); ++i) {
    const std::size_t N = N_list[i];
    const auto pred = predict_tradeoff_for_N(lambda0, opts.gamma, opts.gamma_prime, static_cast<double>(N));
    SweepRow row;
    row.N = N;
    row.T = std::max<Step>(1, static_cast<Step>(std::llround(pred.T_star)));
    row.t0 = optimal_t0(opts.gamma, opts.gamma_prime, row.T);
    row.exact = exact;
    row.predicted = std::pow(static_cast<double>(N), -zeta);
    const auto plan = SamplingPlan::dirac(row.t0, row.T);

    std::vector<double> survivors, estimates, errors, stderrs;
    for (std::size_t r = 0; r < replications; ++r) {
      const auto batch = simulate(k, opts.x0, row.T, N, derive_seed(seed, N, r), opts.threads);
      survivors.push_back(static_cast<double>(batch.N_T));
      if (batch.N_T < 2) continue;
      const auto e = estimate_beta(batch, f, plan);
      estimates.push_back(e.value);
      stderrs.push_back(e.std_error);
      errors.push_back(std::abs(e.value - exact));
    }
    row.N_T = median(survivors);
    row.flagged = estimates.empty();
    row.estimate = median(estimates);
    row.std_error = median(stderrs);
    row.abs_error = median(errors);
    rows.push_back(row);
  }
  return rows;
}

/// Least-squares slope of log(abs_error) against log(N) over unflagged rows
/// with positive error. NaN if fewer than two such rows.
inline double loglog_slope(const std::vector<SweepRow>& rows) {
  std::vector<std::pair<double, double>> pts;
  for (const auto& r : rows)
    if (!r.flagged && r.abs_error > 0.0) pts.emplace_back(std::log(static_cast<double>(r.N)), std::log(r.abs_error));
  if (pts.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  double mx = 0.0, my = 0.0;
  for (auto [x, y] : pts) {
    mx += x;
    my += y;
  }
  mx /= static_cast<double>(pts.size());
  my /= static_cast<double>(pts.size());
  double sxx = 0.0, sxy = 0.0;
  for (auto [x, y] : pts) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
  }
  return sxy / sxx;
}

}  // namespace qsd
