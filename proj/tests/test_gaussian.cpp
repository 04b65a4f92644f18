#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "vmloc/gaussian.hpp"

using namespace vmloc;
namespace o = vmloc::ops;

namespace {

DiagonalGaussian random_gaussian(std::size_t d, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> um(-3, 3), us(0.2, 2.5);
  std::vector<double> mu(d), s(d);
  for (std::size_t i = 0; i < d; ++i) {
    mu[i] = um(rng);
    s[i] = us(rng);
  }
  return {mu, s};
}

}  // namespace

TEST(PoeFuseTest, SingleStandardExpertWithPrior) {
  const auto prior = DiagonalGaussian::standard(1);
  const auto f = poe_fuse({DiagonalGaussian::standard(1)}, prior);
  EXPECT_DOUBLE_EQ(f.mu[0], 0.0);
  EXPECT_DOUBLE_EQ(f.sigma[0] * f.sigma[0], 0.5);
}

TEST(PoeFuseTest, TwoExpertsMatchGridOracle) {
  const auto f = poe_fuse({DiagonalGaussian({1.0}, {1.0}), DiagonalGaussian({3.0}, {1.0})},
                          DiagonalGaussian::standard(1));
  const auto m = oracle::grid_density_product({1.0, 3.0, 0.0}, {1.0, 1.0, 1.0});
  EXPECT_NEAR(m.mean, 4.0 / 3.0, 1e-6);
  EXPECT_NEAR(m.variance, 1.0 / 3.0, 1e-6);
  EXPECT_NEAR(f.mu[0], m.mean, 1e-6);
  EXPECT_NEAR(f.sigma[0] * f.sigma[0], m.variance, 1e-6);
}

TEST(PoeFuseTest, MissingModalityDropsItsFactor) {
  std::mt19937_64 rng(1);
  const auto prior = DiagonalGaussian::standard(4);
  const auto a = random_gaussian(4, rng);
  const auto f = poe_fuse({a}, prior);
  for (std::size_t i = 0; i < 4; ++i) {
    const double t = 1.0 / (a.sigma[i] * a.sigma[i]);
    EXPECT_NEAR(f.mu[i], a.mu[i] * t / (1.0 + t), 1e-15);
    EXPECT_NEAR(f.sigma[i], 1.0 / std::sqrt(1.0 + t), 1e-15);
  }
}

TEST(PoeFuseTest, DimensionMismatchIsContractViolation) {
  EXPECT_THROW(poe_fuse({DiagonalGaussian::standard(2)}, DiagonalGaussian::standard(3)), ContractViolation);
  EXPECT_THROW(poe_fuse(std::span<const DiagonalGaussian>{}, DiagonalGaussian::standard(3)), ContractViolation);
}

TEST(PoeFuseTest, PermutationSharpeningAndFolding) {
  std::mt19937_64 rng(2);
  for (int c = 0; c < 200; ++c) {
    const auto prior = random_gaussian(8, rng);
    const auto a = random_gaussian(8, rng), b = random_gaussian(8, rng), e = random_gaussian(8, rng);
    const auto abe = poe_fuse({a, b, e}, prior);
    const auto eba = poe_fuse({e, b, a}, prior);
    for (std::size_t i = 0; i < 8; ++i) {
      EXPECT_NEAR(abe.mu[i], eba.mu[i], 1e-12);
      EXPECT_NEAR(abe.sigma[i], eba.sigma[i], 1e-12);
      EXPECT_LE(abe.sigma[i], std::min({prior.sigma[i], a.sigma[i], b.sigma[i], e.sigma[i]}));
    }
    // folding b into (a with prior) counts the prior once
    const auto folded = poe_fuse({b}, poe_fuse({a}, prior));
    const auto once = poe_fuse({a, b}, prior);
    for (std::size_t i = 0; i < 8; ++i) {
      EXPECT_NEAR(folded.mu[i], once.mu[i], 1e-12);
      EXPECT_NEAR(folded.sigma[i], once.sigma[i], 1e-12);
    }
  }
}

TEST(PoeFuseTest, FusedLogDensityDiffersFromFactorSumByConstant) {
  std::mt19937_64 rng(3);
  const auto prior = DiagonalGaussian::standard(5);
  const auto a = random_gaussian(5, rng), b = random_gaussian(5, rng);
  const auto f = poe_fuse({a, b}, prior);
  std::normal_distribution<double> n;
  double first = 0.0;
  for (int i = 0; i < 100; ++i) {
    std::vector<double> z(5);
    for (auto& v : z) v = 2.0 * n(rng);
    const double gap = log_density(a, z) + log_density(b, z) + log_density(prior, z) - log_density(f, z);
    if (i == 0) first = gap;
    EXPECT_NEAR(gap, first, 1e-9);
  }
}

TEST(SampleKTest, DegenerateSigmaAndDeterminism) {
  const DiagonalGaussian g({1.0, -2.0}, {1e-12, 1e-12});
  std::mt19937_64 rng(4);
  for (const auto& s : sample_k(g, 5, rng)) {
    EXPECT_NEAR(s.z[0], 1.0, 1e-10);
    EXPECT_NEAR(s.z[1], -2.0, 1e-10);
  }
  std::mt19937_64 r1(9), r2(9);
  const auto a = sample_k(DiagonalGaussian::standard(3), 4, r1);
  const auto b = sample_k(DiagonalGaussian::standard(3), 4, r2);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(a[i].z, b[i].z);
    EXPECT_EQ(a[i].epsilon, b[i].epsilon);
  }
  EXPECT_THROW(sample_k(g, 0, rng), ContractViolation);
}

TEST(SampleKTest, MonteCarloMoments) {
  std::mt19937_64 rng(5);
  const auto s = sample_k(DiagonalGaussian({2.0}, {3.0}), 100000, rng);
  double m = 0.0, m2 = 0.0;
  for (const auto& x : s) {
    m += x.z[0];
    m2 += x.z[0] * x.z[0];
    EXPECT_DOUBLE_EQ(x.z[0], 2.0 + 3.0 * x.epsilon[0]);
  }
  m /= 1e5;
  const double sd = std::sqrt(m2 / 1e5 - m * m);
  EXPECT_NEAR(m, 2.0, 0.05);
  EXPECT_NEAR(sd, 3.0, 0.05);
}

TEST(LogDensityTest, ClosedFormsAndGridOracle) {
  const double z0[] = {0.0};
  EXPECT_NEAR(log_density(DiagonalGaussian::standard(1), z0), -0.5 * std::log(2 * M_PI), 1e-15);
  EXPECT_NEAR(log_density(DiagonalGaussian({0.0}, {2.0}), z0), -0.5 * std::log(2 * M_PI) - std::log(2.0), 1e-15);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n;
  for (int c = 0; c < 20; ++c) {
    const auto g = random_gaussian(3, rng);
    std::vector<double> z(3);
    double grid = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      z[i] = g.mu[i] + g.sigma[i] * n(rng);
      grid += oracle::grid_log_density_1d(z[i], g.mu[i], g.sigma[i]);
    }
    EXPECT_NEAR(log_density(g, z), grid, 1e-8);
  }
}

TEST(KlToPriorTest, ClosedFormsAndMonteCarlo) {
  EXPECT_DOUBLE_EQ(kl_to_prior(DiagonalGaussian::standard(6)), 0.0);
  EXPECT_DOUBLE_EQ(kl_to_prior(DiagonalGaussian({1.0}, {1.0})), 0.5);

  std::mt19937_64 rng(7);
  const DiagonalGaussian g({0.7, -1.1, 0.2}, {0.5, 1.3, 0.9});
  const auto prior = DiagonalGaussian::standard(3);
  const std::size_t n = 1000000;
  const auto s = sample_k(g, n, rng);
  double m = 0.0, m2 = 0.0;
  for (const auto& x : s) {
    const double d = log_density(g, x.z) - log_density(prior, x.z);
    m += d;
    m2 += d * d;
  }
  m /= n;
  const double se = std::sqrt((m2 / n - m * m) / n);
  EXPECT_LT(std::abs(m - kl_to_prior(g)), 3.0 * se);
}

TEST(GaussianRowsTest, MatchValueLevelFunctions) {
  std::mt19937_64 rng(8);
  const auto a = random_gaussian(4, rng), b = random_gaussian(4, rng);
  auto logs = [](const DiagonalGaussian& g) {
    std::vector<double> v;
    for (double s : g.sigma) v.push_back(std::log(s));
    return Tensor::matrix(1, g.dim(), v);
  };
  Graph g;
  std::vector<o::ExpertVars> experts{{g.constant(Tensor::matrix(1, 4, a.mu)), g.constant(logs(a)), Tensor({1, 4}, 1.0)},
                                     {g.constant(Tensor::matrix(1, 4, b.mu)), g.constant(logs(b)), Tensor({1, 4}, 1.0)}};
  const auto fused = o::poe_fuse_rows(experts);
  const auto ref = poe_fuse({a, b}, DiagonalGaussian::standard(4));
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(fused.mu.value()[i], ref.mu[i], 1e-13);
    EXPECT_NEAR(fused.sigma.value()[i], ref.sigma[i], 1e-13);
  }
  // masking the second expert equals fusing the first alone
  experts[1].mask = Tensor({1, 4}, 0.0);
  const auto only_a = o::poe_fuse_rows(experts);
  const auto ref_a = poe_fuse({a}, DiagonalGaussian::standard(4));
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(only_a.mu.value()[i], ref_a.mu[i], 1e-13);
    EXPECT_NEAR(only_a.sigma.value()[i], ref_a.sigma[i], 1e-13);
  }

  const std::vector<double> z{0.3, -0.2, 1.0, 0.5};
  const auto zv = g.constant(Tensor::matrix(1, 4, z));
  EXPECT_NEAR(o::log_normal_rows(zv, g.constant(Tensor::matrix(1, 4, a.mu)), g.constant(logs(a))).value().item(),
              log_density(a, z), 1e-12);
  EXPECT_NEAR(o::log_std_normal_rows(zv).value().item(), log_density(DiagonalGaussian::standard(4), z), 1e-12);
  EXPECT_NEAR(o::kl_to_prior_rows(g.constant(Tensor::matrix(1, 4, a.mu)), g.constant(logs(a))).value().item(),
              kl_to_prior(a), 1e-12);
}

TEST(GaussianRowsTest, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n;
  const Tensor eps = [&] {
    Tensor t({3, 4});
    for (auto& v : t.data()) v = n(rng);
    return t;
  }();
  const Tensor mask = Tensor::matrix(3, 4, {1, 1, 1, 1, 0, 0, 0, 0, 1, 1, 1, 1});
  auto build = [&](Graph&, const std::vector<Var>& v) {
    std::vector<o::ExpertVars> ex{{v[0], v[1], Tensor({3, 4}, 1.0)}, {v[2], v[3], mask}};
    const auto f = o::poe_fuse_rows(ex);
    const auto z = o::reparameterize(f.mu, f.sigma, eps);
    return o::sum(o::add(o::sub(o::log_std_normal_rows(z), o::log_normal_rows(z, f.mu, f.log_sigma)),
                         o::kl_to_prior_rows(f.mu, f.log_sigma)));
  };
  for (int point = 0; point < 10; ++point) {
    std::vector<Tensor> xs(4, Tensor({3, 4}));
    for (auto& t : xs)
      for (auto& v : t.data()) v = 0.8 * n(rng);
    const auto r = oracle::gradcheck(build, xs);
    EXPECT_TRUE(r.ok) << r.worst_rel << " " << r.where;
  }
}
