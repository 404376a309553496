#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "oracle.hpp"
#include "qsd/io.hpp"
#include "qsd/markov_core.hpp"
#include "qsd/models.hpp"

using namespace qsd;

namespace {

SubStochasticKernel single(double p) { return SubStochasticKernel(Matrix(1, 1, {p})); }

Distribution random_distribution(std::size_t n, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vector w(n);
  for (double& v : w) v = u(gen) + 1e-3;
  return Distribution::normalized(w);
}

}  // namespace

TEST(Survival, Examples) {
  EXPECT_DOUBLE_EQ(survival_vector(single(0.5), 3)[0], 0.125);
  for (double v : survival_vector(models::w3(), 0)) EXPECT_EQ(v, 1.0);
  const auto s = survival_vector(models::t3(), 2);
  EXPECT_NEAR(s[0], 0.49, 1e-15);
  EXPECT_NEAR(s[1], 0.49, 1e-15);
}

TEST(Survival, MarkovProperty) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto k = models::random_kernel(6, seed);
    for (Step t : {0, 1, 3, 7})
      for (Step s : {0, 2, 5}) {
        const auto lhs = survival_vector(k, t + s);
        const auto rhs = right_multiply(power(k.entries(), t), survival_vector(k, s));
        EXPECT_LT(max_abs_diff(lhs, rhs), 1e-12);
      }
  }
}

TEST(Survival, LogSpaceAtLongHorizon) {
  const auto v = log_survival_vector(single(0.5), 5000);
  EXPECT_NEAR(v[0], 5000 * std::log(0.5), 1e-9);
  EXPECT_EQ(survival_vector(single(0.5), 5000)[0], 0.0);  // plain product underflows
  const auto w = log_survival_vector(models::t3(), 4000);
  EXPECT_NEAR(w[0], 4000 * std::log(0.7), 1e-8);
  EXPECT_THROW(log_survival_vector(models::t3(), -1), InvalidArgument);
}

TEST(ConditionedEvolve, Examples) {
  EXPECT_EQ(conditioned_evolve(single(0.5), Distribution::dirac(1, 0), 7)[0], 1.0);
  const auto d = conditioned_evolve(models::t3(), Distribution::dirac(2, 0), 1);
  EXPECT_NEAR(d[0], 4.0 / 7.0, 1e-15);
  EXPECT_NEAR(d[1], 3.0 / 7.0, 1e-15);
  const auto mu = Distribution::uniform(3);
  EXPECT_EQ(conditioned_evolve(models::w3(), mu, 0).weights(), mu.weights());
}

TEST(ConditionedEvolve, W3MatchesExtendedPrecisionPower) {
  const auto k = models::w3();
  const auto p5 = oracle::mp_power(oracle::to_mp(k.entries()), 5);
  oracle::Mp total = 0;
  for (const auto& v : p5[0]) total += v;
  const auto d = conditioned_evolve(k, Distribution::dirac(3, 0), 5);
  for (std::size_t y = 0; y < 3; ++y) EXPECT_NEAR(d[y], static_cast<double>(p5[0][y] / total), 1e-15);
}

TEST(ConditionedEvolve, Semigroup) {
  std::mt19937_64 gen(11);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto k = models::random_kernel(5, seed);
    const auto mu = random_distribution(5, gen);
    for (Step t : {1, 4, 9})
      for (Step s : {1, 3, 20}) {
        const auto a = conditioned_evolve(k, conditioned_evolve(k, mu, t), s);
        const auto b = conditioned_evolve(k, mu, t + s);
        EXPECT_LT(max_abs_diff(a.weights(), b.weights()), 1e-10);
      }
  }
}

TEST(ConditionedEvolve, LongHorizonAndUnderflow) {
  const auto d = conditioned_evolve(models::w3(), Distribution::dirac(3, 2), 5000);
  EXPECT_NEAR(sum(d.weights()), 1.0, 1e-12);
  const auto tiny = single(1e-320);
  EXPECT_THROW(conditioned_evolve(tiny, Distribution::dirac(1, 0), 1), HorizonTooLarge);
  EXPECT_THROW(conditioned_evolve(models::w3(), Distribution::dirac(3, 0), -1), InvalidArgument);
  EXPECT_THROW(conditioned_evolve(models::w3(), Distribution::dirac(2, 0), 1), InvalidArgument);
}

TEST(ConditionedMarginal, Examples) {
  const auto k = models::w3();
  for (State x = 0; x < 3; ++x) EXPECT_EQ(conditioned_marginal_given_T(k, x, 0, 9).weights(), Distribution::dirac(3, x).weights());
  const auto t3 = models::t3();
  for (Step T : {1, 3, 12})
    for (Step t = 0; t <= T; ++t)
      EXPECT_LT(max_abs_diff(conditioned_marginal_given_T(t3, 0, t, T).weights(),
                             conditioned_evolve(t3, Distribution::dirac(2, 0), t).weights()),
                1e-15);
  EXPECT_THROW(conditioned_marginal_given_T(k, 0, 5, 4), InvalidArgument);
  EXPECT_THROW(conditioned_marginal_given_T(k, 3, 1, 4), InvalidArgument);
}

TEST(ConditionedMarginal, W3MatchesPathEnumeration) {
  const auto k = models::w3();
  const auto oracle_law = oracle::enumerated_marginal(k.entries(), 1, 2, 6);
  const auto law = conditioned_marginal_given_T(k, 1, 2, 6);
  for (std::size_t y = 0; y < 3; ++y) EXPECT_NEAR(law[y], oracle_law[y], 1e-14);
}

TEST(ConditionedMarginal, EndpointIsForwardLawExactly) {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const auto k = models::random_kernel(4, seed);
    for (State x = 0; x < 4; ++x)
      for (Step T : {1, 5, 30})
        EXPECT_EQ(conditioned_marginal_given_T(k, x, T, T).weights(),
                  conditioned_evolve(k, Distribution::dirac(4, x), T).weights());
  }
}

TEST(TotalVariation, Examples) {
  const auto mu = Distribution(Vector{0.75, 0.25});
  EXPECT_EQ(tv_distance(mu, mu), 0.0);
  EXPECT_EQ(tv_distance(Distribution::dirac(2, 0), Distribution::dirac(2, 1)), 1.0);
  EXPECT_EQ(tv_distance(mu, Distribution(Vector{0.25, 0.75})), 0.5);
}

TEST(TotalVariation, SymmetryAndTriangle) {
  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = random_distribution(6, gen), b = random_distribution(6, gen), c = random_distribution(6, gen);
    EXPECT_EQ(tv_distance(a, b), tv_distance(b, a));
    EXPECT_LE(tv_distance(a, c), tv_distance(a, b) + tv_distance(b, c) + 1e-15);
    EXPECT_GE(tv_distance(a, b), 0.0);
    EXPECT_LE(tv_distance(a, b), 1.0);
  }
}

TEST(Uniformize, Examples) {
  const auto k1 = uniformize(Generator(Matrix(1, 1, {-1.0})), 2.0);
  EXPECT_EQ(k1(0, 0), 0.5);
  EXPECT_EQ(k1.time_unit(), 0.5);
  const Generator g2(Matrix(2, 2, {-2.0, 1.0, 1.0, -2.0}));
  EXPECT_EQ(uniformized_entries(g2, 2.0).data(), (std::vector<double>{0.0, 0.5, 0.5, 0.0}));
  // that matrix has period 2, so it is not accepted as a kernel; a faster clock is
  EXPECT_THROW(uniformize(g2, 2.0), InvalidKernel);
  EXPECT_EQ(uniformize(g2, 4.0).entries().data(), (std::vector<double>{0.5, 0.25, 0.25, 0.5}));
  EXPECT_THROW(uniformize(Generator(Matrix(1, 1, {-3.0})), 2.0), InvalidArgument);
}

TEST(Uniformize, BirthDeathDecayRateMatchesGeneratorEigenvalue) {
  const std::size_t n = 8;
  Matrix g(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const double k = static_cast<double>(i + 1);
    if (i + 1 < n) g(i, i + 1) = 1.5 * k;
    if (i > 0) g(i, i - 1) = k;
    g(i, i) = -((i + 1 < n ? 1.5 * k : 0.0) + k);
  }
  const Generator gen(g);
  const double theta = gen.max_exit_rate();
  const auto k = uniformize(gen, theta);
  for (State x = 0; x < n; ++x) EXPECT_LE(k.row_sum(x), 1.0 + 1e-12);
  // slowest decay rate of the generator: minus its top real eigenvalue
  Eigen::EigenSolver<Eigen::MatrixXd> es(oracle::to_eigen(g));
  double top = -1e300;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) top = std::max(top, es.eigenvalues()[i].real());
  const auto dense = oracle::dense_perron(k.entries());
  EXPECT_NEAR(continuous_decay_rate(dense.rho, theta), -top, 1e-9);
}

TEST(KernelValidation, RejectsBadKernels) {
  EXPECT_THROW(SubStochasticKernel(Matrix(2, 2, {0.5, -0.1, 0.2, 0.2})), InvalidKernel);
  EXPECT_THROW(SubStochasticKernel(Matrix(2, 2, {0.8, 0.3, 0.2, 0.2})), InvalidKernel);
  EXPECT_THROW(SubStochasticKernel(Matrix(2, 2, {0.5, 0.5, 0.5, 0.5})), InvalidKernel);  // no absorption
  EXPECT_THROW(SubStochasticKernel(Matrix(2, 2, {NAN, 0.1, 0.1, 0.1})), InvalidKernel);
  EXPECT_THROW(SubStochasticKernel(Matrix(2, 3)), InvalidKernel);
  EXPECT_THROW(SubStochasticKernel(Matrix(1, 1, {0.5}), 0.0), InvalidKernel);
}

TEST(KernelValidation, ReducibleAndPeriodicListViolations) {
  try {
    SubStochasticKernel(Matrix(2, 2, {0.5, 0.0, 0.0, 0.5}));
    FAIL() << "reducible kernel accepted";
  } catch (const InvalidKernel& e) {
    EXPECT_NE(std::string(e.what()).find("(0->1)"), std::string::npos) << e.what();
  }
  try {
    SubStochasticKernel(Matrix(2, 2, {0.0, 0.9, 0.9, 0.0}));
    FAIL() << "periodic kernel accepted";
  } catch (const InvalidKernel& e) {
    EXPECT_NE(std::string(e.what()).find("primitive"), std::string::npos) << e.what();
  }
}

TEST(Distribution, Validation) {
  EXPECT_THROW(Distribution(Vector{0.5, 0.4}), InvalidArgument);
  EXPECT_THROW(Distribution(Vector{1.2, -0.2}), InvalidArgument);
  EXPECT_THROW(Distribution::normalized(Vector{0.0, 0.0}), InvalidArgument);
  EXPECT_NO_THROW(Distribution(Vector{0.5, 0.5 + 1e-13}));
}

TEST(Generator, Validation) {
  EXPECT_THROW(Generator(Matrix(2, 2, {-1.0, -0.5, 0.5, -1.0})), InvalidArgument);
  EXPECT_THROW(Generator(Matrix(2, 2, {-1.0, 2.0, 0.5, -1.0})), InvalidArgument);
}

TEST(KernelFile, RoundTripIsExact) {
  const auto k = models::random_kernel(5, 3).with_time_unit(0.125);
  std::istringstream in(kernel_to_string(k));
  const auto back = read_kernel(in);
  EXPECT_EQ(back.entries().data(), k.entries().data());
  EXPECT_EQ(back.time_unit(), 0.125);
}

TEST(KernelFile, RejectsMalformedInput) {
  auto bad = [](const std::string& text) {
    std::istringstream in(text);
    return read_kernel(in);
  };
  EXPECT_THROW(bad("n 2 time_unit 1\n0.1 nan\n0.1 0.1\n"), ParseError);
  EXPECT_THROW(bad("n 2 time_unit 1\n0.1 -0.2\n0.1 0.1\n"), ParseError);
  EXPECT_THROW(bad("n 2 time_unit 1\n0.1 inf\n0.1 0.1\n"), ParseError);
  EXPECT_THROW(bad("n 2 time_unit 1\n0.1 0.2\n"), ParseError);
  EXPECT_THROW(bad("n 2 time_unit 1\n0.1 0.2 0.3\n0.1 0.1\n"), ParseError);
  EXPECT_THROW(bad("size 2\n0.1 0.2\n0.1 0.1\n"), ParseError);
  EXPECT_THROW(bad("n 2 time_unit 1\n0.5 0.0\n0.0 0.5\n"), ParseError);  // reducible
  try {
    bad("n 2 time_unit 1\n0.1 0.2\n0.1 x\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(Format, SeventeenDigitsRoundTrip) {
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> u(-1e3, 1e3);
  for (int i = 0; i < 1000; ++i) {
    const double v = u(gen);
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
  EXPECT_EQ(format_double(0.1), "0.10000000000000001");
}
