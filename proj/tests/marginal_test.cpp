#include <gtest/gtest.h>

#include <cmath>

#include "cdgpa/errors.hpp"
#include "cdgpa/marginal.hpp"
#include "cdgpa/model.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace cdgpa;

TEST(Discriminator, InitShapesAndBounds) {
  const DomainDiscriminator d = DomainDiscriminator::init(6, 4, 1);
  EXPECT_EQ(d.w1.shape(), (Shape{6, 4}));
  EXPECT_EQ(d.b1.shape(), (Shape{1, 4}));
  EXPECT_EQ(d.w2.shape(), (Shape{4, 1}));
  EXPECT_EQ(d.b2.shape(), (Shape{1, 1}));
  for (double v : d.w1.data()) EXPECT_LE(std::abs(v), 1.0 / std::sqrt(6.0));
  for (double v : d.b1.data()) EXPECT_EQ(v, 0.0);
  EXPECT_TRUE(d.w1.identical(DomainDiscriminator::init(6, 4, 1).w1));
}

TEST(Discriminator, ProbabilitiesInOpenUnitInterval) {
  std::mt19937_64 rng(3);
  const DomainDiscriminator d = DomainDiscriminator::init(3, 5, 2);
  const Tensor p = discriminate(d, gradcheck::random_tensor(rng, 10, 3, -50, 50));
  EXPECT_EQ(p.shape(), (Shape{10, 1}));
  for (double v : p.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(DomainLoss, UninformativeDiscriminatorGivesTwoLnTwo) {
  const DomainDiscriminator d = DomainDiscriminator::zeros(4, 3);
  std::mt19937_64 rng(1);
  const double l = domain_loss(d, gradcheck::random_tensor(rng, 5, 4), gradcheck::random_tensor(rng, 7, 4)).item();
  EXPECT_EQ(l, 2.0 * std::log(2.0));
}

TEST(DomainLoss, MatchesBruteForce) {
  std::mt19937_64 rng(7);
  for (int s = 0; s < 20; ++s) {
    const std::size_t dim = 1 + rng() % 8, ns = 1 + rng() % 20, nt = 1 + rng() % 20;
    DomainDiscriminator d = DomainDiscriminator::init(dim, 1 + rng() % 6, rng());
    d.b1 = gradcheck::random_tensor(rng, 1, d.hidden_dim());
    d.b2 = gradcheck::random_tensor(rng, 1, 1);
    const Tensor fs = gradcheck::random_tensor(rng, ns, dim, -2, 2);
    const Tensor ft = gradcheck::random_tensor(rng, nt, dim, -2, 2);
    EXPECT_NEAR(domain_loss(d, fs, ft).item(), oracle::domain_loss(d, oracle::to_matrix(fs), oracle::to_matrix(ft)),
                1e-12);
  }
}

TEST(DomainLoss, ConfidentCorrectDiscriminatorApproachesZero) {
  DomainDiscriminator d = DomainDiscriminator::zeros(1, 1);
  d.w1 = Tensor::from_rows({{1.0}});
  d.w2 = Tensor::from_rows({{50.0}});
  d.b2 = Tensor::from_rows({{-25.0}});
  const Tensor fs = Tensor::from_rows({{1.0}, {1.0}});
  const Tensor ft = Tensor::from_rows({{0.0}, {0.0}});
  EXPECT_LT(domain_loss(d, fs, ft).item(), 1e-9);
  EXPECT_DOUBLE_EQ(discriminator_accuracy(d, fs, ft), 1.0);
}

TEST(DomainLoss, EmptyBatchIsPreconditionError) {
  const DomainDiscriminator d = DomainDiscriminator::zeros(2, 2);
  EXPECT_THROW(domain_loss(d, Tensor(0, 2), Tensor(3, 2)), PreconditionError);
}

TEST(DomainLoss, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(9);
  for (int s = 0; s < 10; ++s) {
    const std::size_t dim = 2 + s % 3, h = 3 + s % 2;
    auto fn = [](const std::vector<Tensor>& in) {
      return domain_loss(DomainDiscriminator{in[0], in[1], in[2], in[3]}, in[4], in[5]);
    };
    // Biases keep ReLU inputs away from the kink.
    const double err = gradcheck::max_gradient_error(
        fn, {gradcheck::random_tensor(rng, dim, h), gradcheck::random_tensor(rng, 1, h, 0.5, 1.0),
             gradcheck::random_tensor(rng, h, 1), gradcheck::random_tensor(rng, 1, 1),
             gradcheck::random_tensor(rng, 4, dim, 0.1, 1.0), gradcheck::random_tensor(rng, 5, dim, 0.1, 1.0)});
    EXPECT_LT(err, 1e-6) << "seed " << s;
  }
}

TEST(MalLoss, SameForwardValueAsDomainLoss) {
  std::mt19937_64 rng(4);
  const DomainDiscriminator d = DomainDiscriminator::init(3, 4, 5);
  const Tensor fs = gradcheck::random_tensor(rng, 6, 3), ft = gradcheck::random_tensor(rng, 6, 3);
  EXPECT_EQ(mal_loss(d, fs, ft).item(), domain_loss(d, fs, ft).item());
}

// Element-wise comparison of the two graphs: with and without the reversal.
TEST(MalLoss, ReversesPromptGradientButNotDiscriminatorGradient) {
  ModelConfig mc;
  mc.input_dim = 2;
  mc.feature_dim = 5;
  mc.embed_dim = 4;
  mc.hidden_dim = 7;
  const FrozenEncoders enc = init_frozen(mc);
  std::mt19937_64 rng(21);
  const Tensor xs = gradcheck::random_tensor(rng, 8, 2, -3, 3), xt = gradcheck::random_tensor(rng, 9, 2, -3, 3);
  const Tensor vp = gradcheck::random_tensor(rng, 1, 5);
  const DomainDiscriminator disc = DomainDiscriminator::init(5, 6, 3);

  auto run = [&](bool reversed) {
    Tape tape;
    const PromptParams p{Tensor(mc.context_length, mc.embed_dim), tape.watch(vp)};
    const DomainDiscriminator d{tape.watch(disc.w1), tape.watch(disc.b1), tape.watch(disc.w2), tape.watch(disc.b2)};
    const Tensor is = encode_image(enc, p, xs), it = encode_image(enc, p, xt);
    const Tensor loss = reversed ? mal_loss(d, is, it) : domain_loss(d, is, it);
    const Gradients g = tape.backward(loss);
    return std::vector<Tensor>{loss, g.of(p.visual_prompt), g.of(d.w1), g.of(d.b1), g.of(d.w2), g.of(d.b2)};
  };
  const auto rev = run(true), plain = run(false);
  EXPECT_TRUE(rev[0].identical(plain[0]));
  for (std::size_t i = 0; i < rev[1].size(); ++i) EXPECT_EQ(rev[1].data()[i], -plain[1].data()[i]);
  for (std::size_t k = 2; k < rev.size(); ++k) EXPECT_TRUE(rev[k].identical(plain[k])) << "param " << k;
}

TEST(DiscriminatorAccuracy, IsBalancedAcrossDomains) {
  DomainDiscriminator d = DomainDiscriminator::zeros(1, 1);
  d.w1 = Tensor::from_rows({{1.0}});
  d.w2 = Tensor::from_rows({{1.0}});
  d.b2 = Tensor::from_rows({{-0.5}});
  // Source: 1 of 2 correct; target: 4 of 4 correct.
  const Tensor fs = Tensor::from_rows({{1.0}, {0.0}});
  const Tensor ft = Tensor::from_rows({{0.0}, {0.0}, {0.0}, {0.0}});
  EXPECT_DOUBLE_EQ(discriminator_accuracy(d, fs, ft), 0.75);
}
