#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support/gradcheck.hpp"
#include "vmloc/nn.hpp"
#include "vmloc/optim.hpp"

using namespace vmloc;
namespace o = vmloc::ops;

namespace {

Tensor random_tensor(Shape s, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t(std::move(s));
  std::normal_distribution<double> n(0.0, scale);
  for (auto& v : t.data()) v = n(rng);
  return t;
}

void jitter(const std::vector<Parameter*>& ps, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  for (auto* p : ps)
    for (auto& v : p->value.data()) v += n(rng);
}

}  // namespace

TEST(EncoderTest, ShapesAndGroups) {
  std::mt19937_64 rng(1);
  EncoderConfig cfg;
  cfg.input_dim = 10;
  Encoder enc("encoder1", cfg, rng);
  EXPECT_EQ(enc.input_dim(), 10u);
  EXPECT_EQ(enc.latent_dim(), 64u);
  EXPECT_EQ(enc.parameters().size(), 8u);
  for (auto* p : enc.parameters()) EXPECT_EQ(p->group, ParamGroup::encoder);
  Graph g;
  const auto e = enc(g, g.constant(random_tensor({5, 10}, rng)), Tensor({5, 64}, 1.0));
  EXPECT_EQ(e.mu.shape(), (Shape{5, 64}));
  EXPECT_EQ(e.log_sigma.shape(), (Shape{5, 64}));
  EXPECT_THROW(enc(g, g.constant(random_tensor({5, 9}, rng)), Tensor({5, 64}, 1.0)), DimensionError);
}

TEST(EncoderTest, DropoutOnlyWithRng) {
  std::mt19937_64 rng(2);
  EncoderConfig cfg;
  cfg.input_dim = 6;
  Encoder enc("e", cfg, rng);
  const Tensor x = random_tensor({3, 6}, rng);
  Graph g;
  const Tensor a = enc(g, g.constant(x), Tensor({3, 64}, 1.0)).mu.value();
  const Tensor b = enc(g, g.constant(x), Tensor({3, 64}, 1.0)).mu.value();
  EXPECT_EQ(a, b);
  std::mt19937_64 d1(5), d2(5);
  const Tensor c = enc(g, g.constant(x), Tensor({3, 64}, 1.0), &d1).mu.value();
  const Tensor d = enc(g, g.constant(x), Tensor({3, 64}, 1.0), &d2).mu.value();
  EXPECT_EQ(c, d);
  EXPECT_FALSE(c == a);
}

TEST(EncoderTest, DropoutKeepsExpectation) {
  std::mt19937_64 rng(3);
  Graph g;
  const Var x = g.constant(Tensor({1, 100000}, 2.0));
  const Tensor y = dropout(x, 0.5, &rng).value();
  double m = 0.0, zeros = 0.0;
  for (double v : y.data()) {
    m += v;
    zeros += v == 0.0;
  }
  EXPECT_NEAR(m / 1e5, 2.0, 0.03);
  EXPECT_NEAR(zeros / 1e5, 0.5, 0.01);
}

TEST(EncoderTest, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(4);
  EncoderConfig cfg;
  cfg.input_dim = 5;
  cfg.widths = {6, 4};
  cfg.latent_dim = 3;
  for (int point = 0; point < 10; ++point) {
    Encoder enc("enc", cfg, rng);
    jitter(enc.parameters(), rng, 0.3);
    const Tensor x = random_tensor({4, 5}, rng);
    const Tensor pm = random_tensor({4, 3}, rng), ps = random_tensor({4, 3}, rng);
    const std::uint64_t seed = rng();
    auto build = [&](Graph& g) {
      std::mt19937_64 drop(seed);
      const auto e = enc(g, g.constant(x), Tensor({4, 3}, 1.0), &drop);
      return o::add(o::sum(o::mul_const(e.mu, pm)), o::sum(o::mul_const(o::exp(e.log_sigma), ps)));
    };
    const auto r = oracle::param_gradcheck(build, enc.parameters());
    EXPECT_TRUE(r.ok) << r.worst_rel << " " << r.where;
  }
}

TEST(PoseRegressorTest, UnitCanonicalQuaternionAndIdentityStart) {
  std::mt19937_64 rng(5);
  PoseRegressor reg(8, 16, rng);
  for (auto* p : reg.parameters()) EXPECT_EQ(p->group, ParamGroup::decoder);
  Graph g;
  const auto out = reg(g, g.constant(random_tensor({200, 8}, rng, 3.0)));
  EXPECT_EQ(out.p.shape(), (Shape{200, 3}));
  for (std::size_t r = 0; r < 200; ++r) {
    double n2 = 0.0;
    for (std::size_t c = 0; c < 4; ++c) n2 += out.q.value().at(r, c) * out.q.value().at(r, c);
    EXPECT_NEAR(std::sqrt(n2), 1.0, 1e-9);
    EXPECT_GE(out.q.value().at(r, 0), 0.0);
  }
  Graph g0;
  const auto at0 = reg(g0, g0.constant(Tensor({1, 8}, 0.0)));
  EXPECT_EQ(at0.q.value().vec(), (std::vector<double>{1, 0, 0, 0}));
}

TEST(PoseRegressorTest, DegenerateQuaternionOutputRaises) {
  std::mt19937_64 rng(6);
  PoseRegressor reg(4, 8, rng);
  reg.q_out.b.value = Tensor({1, 4}, 0.0);
  Graph g;
  EXPECT_THROW(reg(g, g.constant(Tensor({1, 4}, 0.0))), DegenerateOutputError);
}

TEST(PoseRegressorTest, GradientsMatchFiniteDifferencesThroughGeometricLoss) {
  std::mt19937_64 rng(7);
  for (int point = 0; point < 10; ++point) {
    PoseRegressor reg(5, 6, rng);
    jitter(reg.parameters(), rng, 0.3);
    const Tensor z = random_tensor({3, 5}, rng);
    std::vector<Pose> targets;
    for (int i = 0; i < 3; ++i)
      targets.push_back(Pose::normalized({rng() % 3 * 0.5, 0.2, -0.1},
                                         {1.0, 0.3 * (i + 1), -0.2, 0.1 * point}));
    Parameter beta("beta", Tensor::scalar(-1.0), ParamGroup::balance);
    Parameter gamma("gamma", Tensor::scalar(0.5), ParamGroup::balance);
    auto build = [&](Graph& g) {
      const auto out = reg(g, g.constant(z));
      return o::sum(o::geometric_loss_rows(out.p, out.q, positions_tensor(targets), quat_log_tensor(targets),
                                           g.param(beta), g.param(gamma)));
    };
    auto params = reg.parameters();
    params.push_back(&beta);
    params.push_back(&gamma);
    const auto r = oracle::param_gradcheck(build, params);
    EXPECT_TRUE(r.ok) << r.worst_rel << " " << r.where;
  }
}

TEST(AdamTest, HandComputedThreeStepTrace) {
  Parameter x("x", Tensor::scalar(1.0), ParamGroup::decoder);
  AdamConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  Adam opt({&x}, cfg);
  // gradients 0.5, -0.2, 0.3, written out by hand
  const double grads[] = {0.5, -0.2, 0.3};
  double m = 0, v = 0, xv = 1.0;
  for (int t = 1; t <= 3; ++t) {
    x.grad[0] = grads[t - 1];
    opt.step();
    m = 0.9 * m + 0.1 * grads[t - 1];
    v = 0.999 * v + 0.001 * grads[t - 1] * grads[t - 1];
    xv -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    EXPECT_NEAR(x.value[0], xv, 1e-15);
    if (t == 1) EXPECT_NEAR(x.value[0], 0.9, 1e-8);  // first step moves by lr * sign(g)
  }
  EXPECT_NEAR(xv, 0.8109953836811553, 1e-12);  // independent float64 evaluation
}

TEST(AdamTest, WeightDecaySkipsBalanceScalars) {
  Parameter w("w", Tensor::scalar(2.0), ParamGroup::encoder);
  Parameter beta("beta", Tensor::scalar(-3.0), ParamGroup::balance);
  AdamConfig cfg;
  cfg.lr = 0.01;
  cfg.weight_decay = 0.1;
  Adam opt({&w, &beta}, cfg);
  opt.step();  // zero loss gradient
  EXPECT_LT(w.value[0], 2.0);
  EXPECT_DOUBLE_EQ(beta.value[0], -3.0);
  EXPECT_EQ(opt.steps(), 1u);
  opt.zero_grad();
  EXPECT_EQ(w.grad[0], 0.0);
}

TEST(AdamTest, DefaultsMatchTrainingDetails) {
  const AdamConfig cfg;
  EXPECT_DOUBLE_EQ(cfg.lr, 5e-5);
  EXPECT_DOUBLE_EQ(cfg.weight_decay, 5e-5);
  EXPECT_DOUBLE_EQ(cfg.beta1, 0.9);
  EXPECT_DOUBLE_EQ(cfg.beta2, 0.999);
  EXPECT_DOUBLE_EQ(cfg.eps, 1e-8);
}
