#pragma once

// Independent reference computations for the tests. Nothing here calls the
// library's numerical routines; only the kernel's raw entries are read.

#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/multiprecision/cpp_bin_float.hpp>

#include "qsd/linalg.hpp"
#include "qsd/markov_core.hpp"

namespace oracle {

using Mp = boost::multiprecision::cpp_bin_float_100;
using MpMatrix = std::vector<std::vector<Mp>>;
using MpVector = std::vector<Mp>;

inline MpMatrix to_mp(const qsd::Matrix& k) {
  MpMatrix m(k.rows(), MpVector(k.cols()));
  for (std::size_t i = 0; i < k.rows(); ++i)
    for (std::size_t j = 0; j < k.cols(); ++j) m[i][j] = Mp(k(i, j));
  return m;
}

inline MpMatrix mp_multiply(const MpMatrix& a, const MpMatrix& b) {
  const std::size_t n = a.size(), m = b[0].size(), inner = b.size();
  MpMatrix c(n, MpVector(m, Mp(0)));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t l = 0; l < inner; ++l)
      for (std::size_t j = 0; j < m; ++j) c[i][j] += a[i][l] * b[l][j];
  return c;
}

/// K^t by repeated multiplication (t small) in 100-digit arithmetic.
inline MpMatrix mp_power(const MpMatrix& k, long t) {
  const std::size_t n = k.size();
  MpMatrix r(n, MpVector(n, Mp(0)));
  for (std::size_t i = 0; i < n; ++i) r[i][i] = 1;
  for (long s = 0; s < t; ++s) r = mp_multiply(r, k);
  return r;
}

/// All powers K^0..K^t_max in 100-digit arithmetic.
inline std::vector<MpMatrix> mp_powers(const qsd::Matrix& k, long t_max) {
  const MpMatrix base = to_mp(k);
  std::vector<MpMatrix> out{mp_power(base, 0)};
  for (long t = 1; t <= t_max; ++t) out.push_back(mp_multiply(out.back(), base));
  return out;
}

inline MpVector mp_row_sums(const MpMatrix& m) {
  MpVector r(m.size(), Mp(0));
  for (std::size_t i = 0; i < m.size(); ++i)
    for (const auto& v : m[i]) r[i] += v;
  return r;
}

/// Extended-precision Perron data by long power iteration on K, normalised
/// like the library (sum alpha = 1, alpha . eta = 1).
struct MpPerron {
  Mp rho;
  MpVector alpha;
  MpVector eta;
};

inline MpPerron mp_perron(const qsd::Matrix& k, long iters = 3000) {
  const std::size_t n = k.rows();
  const MpMatrix m = to_mp(k);
  // shifted iteration (K + I) keeps periodic-looking transients from stalling
  MpMatrix shifted = m;
  for (std::size_t i = 0; i < n; ++i) shifted[i][i] += 1;
  MpVector left(n, Mp(1) / n), right(n, Mp(1));
  for (long it = 0; it < iters; ++it) {
    MpVector l2(n, Mp(0)), r2(n, Mp(0));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        l2[j] += left[i] * shifted[i][j];
        r2[i] += shifted[i][j] * right[j];
      }
    Mp ls = 0, rs = 0;
    for (std::size_t i = 0; i < n; ++i) {
      ls += l2[i];
      rs = std::max(rs, r2[i]);
    }
    for (std::size_t i = 0; i < n; ++i) {
      left[i] = l2[i] / ls;
      right[i] = r2[i] / rs;
    }
  }
  MpPerron p;
  p.alpha = left;
  Mp mass = 0;
  MpVector ka(n, Mp(0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) ka[j] += left[i] * m[i][j];
  for (std::size_t j = 0; j < n; ++j) mass += ka[j];
  p.rho = mass;
  Mp pairing = 0;
  for (std::size_t i = 0; i < n; ++i) pairing += left[i] * right[i];
  p.eta.resize(n);
  for (std::size_t i = 0; i < n; ++i) p.eta[i] = right[i] / pairing;
  return p;
}

/// Double-precision dense eigen-decomposition via Eigen.
struct DensePerron {
  double rho = 0.0;
  std::vector<double> alpha;
  std::vector<double> eta;
  /// Largest modulus among the remaining eigenvalues.
  double second_modulus = 0.0;
  /// Every eigenvalue of that modulus is real, so the decay does not oscillate.
  bool second_is_real = true;
};

inline Eigen::MatrixXd to_eigen(const qsd::Matrix& k) {
  Eigen::MatrixXd m(k.rows(), k.cols());
  for (std::size_t i = 0; i < k.rows(); ++i)
    for (std::size_t j = 0; j < k.cols(); ++j) m(i, j) = k(i, j);
  return m;
}

inline std::size_t perron_index(const Eigen::VectorXcd& values) {
  std::size_t best = 0;
  for (Eigen::Index i = 1; i < values.size(); ++i)
    if (values[i].real() > values[static_cast<Eigen::Index>(best)].real()) best = static_cast<std::size_t>(i);
  return best;
}

inline std::vector<double> real_positive(const Eigen::VectorXcd& v) {
  std::vector<double> out(static_cast<std::size_t>(v.size()));
  double sign = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) sign += v[i].real();
  for (Eigen::Index i = 0; i < v.size(); ++i) out[static_cast<std::size_t>(i)] = v[i].real() * (sign < 0 ? -1.0 : 1.0);
  return out;
}

inline DensePerron dense_perron(const qsd::Matrix& k) {
  const Eigen::MatrixXd m = to_eigen(k);
  Eigen::EigenSolver<Eigen::MatrixXd> right(m), left(m.transpose());
  const auto ir = perron_index(right.eigenvalues());
  const auto il = perron_index(left.eigenvalues());
  DensePerron p;
  p.rho = right.eigenvalues()[static_cast<Eigen::Index>(ir)].real();
  p.eta = real_positive(right.eigenvectors().col(static_cast<Eigen::Index>(ir)));
  p.alpha = real_positive(left.eigenvectors().col(static_cast<Eigen::Index>(il)));
  double mass = 0.0;
  for (double v : p.alpha) mass += v;
  for (double& v : p.alpha) v /= mass;
  double pairing = 0.0;
  for (std::size_t i = 0; i < p.alpha.size(); ++i) pairing += p.alpha[i] * p.eta[i];
  for (double& v : p.eta) v /= pairing;
  for (Eigen::Index i = 0; i < right.eigenvalues().size(); ++i)
    if (static_cast<std::size_t>(i) != ir) p.second_modulus = std::max(p.second_modulus, std::abs(right.eigenvalues()[i]));
  for (Eigen::Index i = 0; i < right.eigenvalues().size(); ++i) {
    const auto v = right.eigenvalues()[i];
    if (static_cast<std::size_t>(i) != ir && std::abs(v) > p.second_modulus * (1 - 1e-9) && std::abs(v.imag()) > 1e-12)
      p.second_is_real = false;
  }
  return p;
}

/// Visits every survivor path x = x_0, x_1, ..., x_T with its probability.
inline void for_each_path(const qsd::Matrix& k, std::size_t x, long T,
                          const std::function<void(const std::vector<std::size_t>&, double)>& visit) {
  const std::size_t n = k.rows();
  std::vector<std::size_t> path{x};
  std::function<void(double)> rec = [&](double w) {
    if (static_cast<long>(path.size()) == T + 1) {
      visit(path, w);
      return;
    }
    const std::size_t at = path.back();
    for (std::size_t y = 0; y < n; ++y) {
      if (k(at, y) == 0.0) continue;
      path.push_back(y);
      rec(w * k(at, y));
      path.pop_back();
    }
  };
  rec(1.0);
}

/// Law of X_t given T < tau, by path enumeration.
inline std::vector<double> enumerated_marginal(const qsd::Matrix& k, std::size_t x, long t, long T) {
  std::vector<double> law(k.rows(), 0.0);
  double total = 0.0;
  for_each_path(k, x, T, [&](const std::vector<std::size_t>& p, double w) {
    law[p[static_cast<std::size_t>(t)]] += w;
    total += w;
  });
  for (double& v : law) v /= total;
  return law;
}

inline double half_l1(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return 0.5 * s;
}

/// Fresh scratch directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("qsd_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace oracle
