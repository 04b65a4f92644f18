#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "support/gradcheck.hpp"
#include "vmloc/attention.hpp"

using namespace vmloc;
namespace o = vmloc::ops;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng, double s = 1.0) {
  std::normal_distribution<double> nd(0.0, s);
  std::vector<double> v(n);
  for (auto& x : v) x = nd(rng);
  return v;
}

AttentionBlock random_block(std::size_t d, std::size_t s, std::mt19937_64& rng) {
  AttentionConfig cfg;
  cfg.positions = s;
  AttentionBlock b = make_attention_block(d, cfg, rng);
  for (auto* p : b.parameters())
    for (auto& v : p->value.data()) v = std::normal_distribution<double>(0.0, 0.5)(rng);
  return b;
}

// Scalar re-implementation with explicit loops.
std::vector<double> attend_oracle(const AttentionBlock& b, const std::vector<double>& z) {
  const std::size_t s = b.positions, f = b.features, e = b.embed;
  auto W = [](const Parameter& p, std::size_t r, std::size_t c) { return p.value.at(r, c); };
  std::vector<double> th(s * e, 0), ph(s * e, 0), gg(s * e, 0);
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t k = 0; k < e; ++k)
      for (std::size_t j = 0; j < f; ++j) {
        th[i * e + k] += z[i * f + j] * W(b.w_theta, k, j);
        ph[i * e + k] += z[i * f + j] * W(b.w_phi, k, j);
        gg[i * e + k] += z[i * f + j] * W(b.w_g, k, j);
      }
  std::vector<double> out(z);
  for (std::size_t i = 0; i < s; ++i) {
    std::vector<double> logits(s, 0.0);
    double mx = -1e300;
    for (std::size_t j = 0; j < s; ++j) {
      for (std::size_t k = 0; k < e; ++k) logits[j] += th[i * e + k] * ph[j * e + k];
      mx = std::max(mx, logits[j]);
    }
    double tot = 0.0;
    for (auto& l : logits) tot += (l = std::exp(l - mx));
    std::vector<double> a(e, 0.0);
    for (std::size_t j = 0; j < s; ++j)
      for (std::size_t k = 0; k < e; ++k) a[k] += logits[j] / tot * gg[j * e + k];
    for (std::size_t c = 0; c < f; ++c)
      for (std::size_t k = 0; k < e; ++k) out[i * f + c] += a[k] * W(b.w_alpha, c, k);
  }
  return out;
}

}  // namespace

TEST(AttentionTest, DefaultGeometry) {
  std::mt19937_64 rng(1);
  const auto b = make_attention_block(64, {}, rng);
  EXPECT_EQ(b.positions, 16u);
  EXPECT_EQ(b.features, 4u);
  EXPECT_EQ(b.embed, 2u);
  EXPECT_EQ(b.w_theta.value.shape(), (Shape{2, 4}));
  EXPECT_EQ(b.w_alpha.value.shape(), (Shape{4, 2}));
  AttentionConfig one;
  one.positions = 32;
  EXPECT_EQ(make_attention_block(64, one, rng).embed, 1u);
  AttentionConfig lit;
  lit.literal_scalar = true;
  const auto l = make_attention_block(64, lit, rng);
  EXPECT_EQ(l.positions, 1u);
  EXPECT_EQ(l.features, 64u);
}

TEST(AttentionTest, IndivisibleDimIsConfigError) {
  std::mt19937_64 rng(2);
  AttentionConfig cfg;
  cfg.positions = 7;
  EXPECT_THROW(make_attention_block(64, cfg, rng), ConfigError);
  auto b = make_attention_block(64, {}, rng);
  const std::vector<double> z(60, 0.0);
  EXPECT_THROW(attend(b, z), ConfigError);
}

TEST(AttentionTest, ZeroOutputMapIsIdentity) {
  std::mt19937_64 rng(3);
  auto b = random_block(64, 16, rng);
  b.w_alpha.value = Tensor::zeros_like(b.w_alpha.value);
  for (int t = 0; t < 20; ++t) {
    const auto z = random_vec(64, rng, 3.0);
    EXPECT_EQ(attend(b, z), z);
  }
}

TEST(AttentionTest, SinglePositionIsLinearResidual) {
  std::mt19937_64 rng(4);
  auto b = random_block(12, 1, rng);
  const auto z = random_vec(12, rng);
  const Tensor aff = attention_affinity(b, z);
  EXPECT_EQ(aff.numel(), 1u);
  EXPECT_DOUBLE_EQ(aff[0], 1.0);
  // out = W_alpha W_g z + z
  std::vector<double> expect(z);
  for (std::size_t c = 0; c < 12; ++c)
    for (std::size_t k = 0; k < b.embed; ++k) {
      double gz = 0.0;
      for (std::size_t j = 0; j < 12; ++j) gz += b.w_g.value.at(k, j) * z[j];
      expect[c] += b.w_alpha.value.at(c, k) * gz;
    }
  const auto out = attend(b, z);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(out[i], expect[i], 1e-12);
}

TEST(AttentionTest, AffinityRowsSumToOneAndLoopOracleAgrees) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 50; ++t) {
    auto b = random_block(64, 16, rng);
    const auto z = random_vec(64, rng, 2.0);
    const Tensor aff = attention_affinity(b, z);
    for (std::size_t r = 0; r < 16; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 16; ++c) s += aff.at(r, c);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
    const auto out = attend(b, z);
    const auto ref = attend_oracle(b, z);
    for (std::size_t i = 0; i < 64; ++i) EXPECT_NEAR(out[i], ref[i], 1e-10);
  }
}

TEST(AttentionTest, BatchedRowsMatchPerVector) {
  std::mt19937_64 rng(6);
  auto b = random_block(24, 6, rng);
  Tensor zs({5, 24});
  for (auto& v : zs.data()) v = std::normal_distribution<double>()(rng);
  Graph g;
  const Tensor out = o::attend_rows(g, b, g.constant(zs)).value();
  for (std::size_t r = 0; r < 5; ++r) {
    std::vector<double> z(zs.data().begin() + r * 24, zs.data().begin() + (r + 1) * 24);
    const auto one = attend(b, z);
    for (std::size_t c = 0; c < 24; ++c) EXPECT_NEAR(out.at(r, c), one[c], 1e-13);
  }
}

TEST(AttentionTest, PositionEquivariance) {
  std::mt19937_64 rng(7);
  auto b = random_block(32, 8, rng);
  for (int t = 0; t < 20; ++t) {
    const auto z = random_vec(32, rng);
    std::vector<std::size_t> perm(8);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> zp(32);
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t c = 0; c < 4; ++c) zp[i * 4 + c] = z[perm[i] * 4 + c];
    const auto out = attend(b, z), outp = attend(b, zp);
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(outp[i * 4 + c], out[perm[i] * 4 + c], 1e-12);
  }
}

TEST(AttentionTest, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(8);
  const std::size_t s = 4, f = 3, e = 2, n = 2;
  std::normal_distribution<double> nd;
  const Tensor proj = [&] {
    Tensor t({n, s * f});
    for (auto& v : t.data()) v = nd(rng);
    return t;
  }();
  auto build = [&](Graph& g, const std::vector<Var>& v) {
    const Var out = o::non_local_rows(v[0], {v[1], v[2], v[3], v[4]}, s);
    return o::sum(o::mul_const(out, proj));
  };
  for (int point = 0; point < 10; ++point) {
    std::vector<Tensor> xs{Tensor({n, s * f}), Tensor({e, f}), Tensor({e, f}), Tensor({e, f}), Tensor({f, e})};
    for (auto& t : xs)
      for (auto& v : t.data()) v = nd(rng);
    const auto r = oracle::gradcheck(build, xs);
    EXPECT_TRUE(r.ok) << r.worst_rel << " " << r.where;
  }
}
