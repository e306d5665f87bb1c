#include "cdgpa/tensor.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "cdgpa/errors.hpp"
#include "gradcheck.hpp"

using namespace cdgpa;
using cdgpa::gradcheck::max_gradient_error;
using cdgpa::gradcheck::random_tensor;

namespace {

// Scalar probe u·X·w of a matrix-valued op, with fixed random u and w.
gradcheck::ScalarFn probe(std::function<Tensor(const std::vector<Tensor>&)> op, std::size_t rows, std::size_t cols,
                        std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0xabcdefULL);
  Tensor u = random_tensor(rng, 1, rows);
  Tensor w = random_tensor(rng, cols, 1);
  return [op, u, w](const std::vector<Tensor>& in) { return matmul(matmul(u, op(in)), w); };
}

constexpr double kGradTol = 1e-6;

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Tensor eye = Tensor::from_rows({{1, 0}, {0, 1}});
  const Tensor x = Tensor::from_rows({{0.3, -2.0}, {7.5, 1e-3}});
  EXPECT_TRUE(matmul(eye, x).identical(x));
}

TEST(Matmul, HandArithmetic) {
  const Tensor r = matmul(Tensor::from_rows({{1, 2}}), Tensor::from_rows({{3}, {4}}));
  ASSERT_EQ(r.shape(), (Shape{1, 1}));
  EXPECT_EQ(r.item(), 11.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor(2, 3), Tensor(2, 3));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("(2x3)"), std::string::npos);
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const Tensor a = random_tensor(rng, 3, 4), b = random_tensor(rng, 4, 2);
    auto fn = probe([](auto& in) { return matmul(in[0], in[1]); }, 3, 2, seed);
    EXPECT_LT(max_gradient_error(fn, {a, b}), kGradTol) << "seed " << seed;
  }
}

TEST(Softmax, UniformLogits) {
  const Tensor s = softmax_rows(Tensor::from_rows({{0, 0, 0}}));
  for (double v : s.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, ShiftInvariance) {
  for (double c : {-50.0, 0.0, 3.7, 700.0}) {
    const Tensor s = softmax_rows(Tensor::from_rows({{c, c + std::log(3.0)}}));
    EXPECT_NEAR(s(0, 0), 0.25, 1e-12);
    EXPECT_NEAR(s(0, 1), 0.75, 1e-12);
  }
}

TEST(Softmax, LargeLogitsStayFinite) {
  const Tensor s = softmax_rows(Tensor::from_rows({{1000, 1001}}));
  const double e = std::exp(-1.0);
  EXPECT_NEAR(s(0, 0), e / (1.0 + e), 1e-15);
  EXPECT_NEAR(s(0, 1), 1.0 / (1.0 + e), 1e-15);
}

TEST(Softmax, NaNInputRejected) {
  EXPECT_THROW(softmax_rows(Tensor::from_rows({{0.0, std::nan("")}})), NumericError);
}

TEST(Softmax, RowsSumToOneAndShiftInvariantProperty) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x = random_tensor(rng, 4, 5, -30.0, 30.0);
    const Tensor s = softmax_rows(x);
    std::vector<double> shifted = x.to_vector();
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 5; ++j) shifted[i * 5 + j] += static_cast<double>(i) * 11.0 - 4.0;
    const Tensor s2 = softmax_rows(Tensor(4, 5, shifted));
    for (std::size_t i = 0; i < 4; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < 5; ++j) {
        EXPECT_GE(s(i, j), 0.0);
        total += s(i, j);
        EXPECT_NEAR(s(i, j), s2(i, j), 1e-12);
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(Grl, ForwardIsBitwiseIdentity) {
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor(rng, 3, 4);
  EXPECT_TRUE(grl(x).identical(x));
  Tape tape;
  EXPECT_TRUE(grl(tape.watch(x)).identical(x));
}

TEST(Grl, ScalarDerivativeIsMinusOne) {
  Tape tape;
  const Tensor x = tape.watch(Tensor::scalar(2.5));
  const Gradients g = tape.backward(grl(x));
  EXPECT_EQ(g.of(x).item(), -1.0);
}

TEST(Grl, CoefficientScalesReversal) {
  Tape tape;
  const Tensor x = tape.watch(Tensor::scalar(2.5));
  const Gradients g = tape.backward(grl(x, 0.25));
  EXPECT_EQ(g.of(x).item(), -0.25);
}

TEST(Grl, AnalyticGradientIsNegatedFiniteDifference) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const Tensor x = random_tensor(rng, 3, 4);
    auto fn = probe([](auto& in) { return relu(grl(in[0])); }, 3, 4, seed);
    const auto analytic = gradcheck::analytic_gradients(fn, {x})[0];
    auto numeric = gradcheck::numeric_gradient(fn, {x}, 0);
    for (double& v : numeric) v = -v;
    EXPECT_LT(gradcheck::relative_error(analytic, numeric), kGradTol);
  }
}

TEST(Grl, CompositeGradientIsExactNegation) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const Tensor p = random_tensor(rng, 1, 4);
    const Tensor x = random_tensor(rng, 6, 4);
    const Tensor w = random_tensor(rng, 4, 3);
    const Tensor v = random_tensor(rng, 3, 1);
    auto loss = [&](const Tensor& prompt, bool reverse) {
      Tensor feats = l2_normalize_rows(add_row(x, prompt));
      if (reverse) feats = grl(feats);
      return mean(log_sigmoid(matmul(relu(matmul(feats, w)), v)));
    };
    Tape plain;
    const Tensor p1 = plain.watch(p);
    const Tensor g1 = plain.backward(loss(p1, false)).of(p1);
    Tape reversed;
    const Tensor p2 = reversed.watch(p);
    const Tensor l2 = loss(p2, true);
    const Tensor g2 = reversed.backward(l2).of(p2);
    for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_EQ(g2.data()[i], -g1.data()[i]);
  }
}

TEST(CrossEntropy, UniformLogitsGiveLogK) {
  for (std::size_t k : {2u, 3u, 7u}) {
    const Tensor logits(4, k);
    const std::vector<std::size_t> targets{0, k - 1, 1, 0};
    EXPECT_EQ(cross_entropy_rows(logits, targets).item(), std::log(static_cast<double>(k)));
  }
}

TEST(CrossEntropy, MarginDrivesLossToZero) {
  const std::vector<std::size_t> targets{1};
  double previous = std::log(3.0);
  for (double margin : {0.5, 2.0, 8.0, 40.0}) {
    const double l = cross_entropy_rows(Tensor::from_rows({{0, margin, 0}}), targets).item();
    EXPECT_LT(l, previous);
    EXPECT_GE(l, 0.0);
    previous = l;
  }
  EXPECT_LT(previous, 1e-15);
}

TEST(CrossEntropy, MatchesDirectSummation) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const Tensor logits = random_tensor(rng, 4, 3, -3, 3);
    const std::vector<std::size_t> targets{2, 0, 1, 1};
    double expected = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      double z = 0.0;
      for (std::size_t j = 0; j < 3; ++j) z += std::exp(logits(i, j));
      expected += -std::log(std::exp(logits(i, targets[i])) / z);
    }
    expected /= 4.0;
    EXPECT_NEAR(cross_entropy_rows(logits, targets).item(), expected, 1e-12);
  }
}

TEST(CrossEntropy, TargetOutOfRange) {
  const std::vector<std::size_t> targets{3};
  EXPECT_THROW(cross_entropy_rows(Tensor(1, 3), targets), IndexError);
}

TEST(CrossEntropy, SingleClassRejected) {
  const std::vector<std::size_t> targets{0};
  EXPECT_THROW(cross_entropy_rows(Tensor(1, 1), targets), DimensionError);
}

TEST(CrossEntropy, SoftTargetsEqualHardTargetsOnOneHot) {
  std::mt19937_64 rng(5);
  const Tensor logits = random_tensor(rng, 3, 4);
  const std::vector<std::size_t> targets{3, 1, 0};
  const Tensor onehot = Tensor::from_rows({{0, 0, 0, 1}, {0, 1, 0, 0}, {1, 0, 0, 0}});
  EXPECT_NEAR(cross_entropy_rows(logits, targets).item(), cross_entropy_rows(logits, onehot).item(), 1e-15);
}

TEST(Normalize, ThreeFourFive) {
  const Tensor n = l2_normalize_rows(Tensor::from_rows({{3, 4}}));
  EXPECT_NEAR(n(0, 0), 0.6, 1e-15);
  EXPECT_NEAR(n(0, 1), 0.8, 1e-15);
}

TEST(Normalize, ZeroRowPassesThroughAndIsCounted) {
  const auto before = numeric_counters().zero_norm_rows.load();
  Tape tape;
  const Tensor x = tape.watch(Tensor::from_rows({{0, 0}, {1, 1}}));
  const Tensor y = l2_normalize_rows(x);
  EXPECT_EQ(y(0, 0), 0.0);
  EXPECT_EQ(y(0, 1), 0.0);
  EXPECT_EQ(numeric_counters().zero_norm_rows.load(), before + 1);
  const Tensor g = tape.backward(sum(y)).of(x);
  for (double v : g.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Cosine, RowWithItselfIsOne) {
  std::mt19937_64 rng(11);
  const Tensor a = random_tensor(rng, 5, 7);
  const Tensor c = cosine_similarity_rows(a, a);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(c(i, i), 1.0, 1e-12);
}

TEST(Gradients, EveryDifferentiableOpMatchesFiniteDifferences) {
  struct Case {
    const char* name;
    std::size_t in_rows, in_cols, out_rows, out_cols;
    std::function<Tensor(const std::vector<Tensor>&)> op;
  };
  const std::vector<std::size_t> rows{2, 0, 2};
  const std::vector<Case> cases{
      {"transpose", 3, 4, 4, 3, [](auto& in) { return transpose(in[0]); }},
      {"add", 3, 4, 3, 4, [](auto& in) { return add(in[0], scale(in[0], 0.5)); }},
      {"scale", 3, 4, 3, 4, [](auto& in) { return scale(in[0], -1.7); }},
      {"relu", 3, 4, 3, 4, [](auto& in) { return relu(in[0]); }},
      {"sigmoid", 3, 4, 3, 4, [](auto& in) { return sigmoid(scale(in[0], 3.0)); }},
      {"log_sigmoid", 3, 4, 3, 4, [](auto& in) { return log_sigmoid(scale(in[0], 3.0)); }},
      {"softmax_rows", 3, 4, 3, 4, [](auto& in) { return softmax_rows(scale(in[0], 2.0)); }},
      {"log_softmax_rows", 3, 4, 3, 4, [](auto& in) { return log_softmax_rows(scale(in[0], 2.0)); }},
      {"l2_normalize_rows", 3, 4, 3, 4, [](auto& in) { return l2_normalize_rows(in[0]); }},
      {"cosine_similarity_rows", 3, 4, 3, 3,
       [](auto& in) { return cosine_similarity_rows(in[0], add(in[0], scale(relu(in[0]), 2.0))); }},
      {"mean_rows", 3, 4, 1, 4, [](auto& in) { return mean_rows(in[0]); }},
      {"sum", 3, 4, 1, 1, [](auto& in) { return sum(in[0]); }},
      {"mean", 3, 4, 1, 1, [](auto& in) { return mean(in[0]); }},
      {"gather_rows", 3, 4, 3, 4, [rows](auto& in) { return gather_rows(in[0], rows); }},
      {"add_row", 3, 4, 3, 4, [](auto& in) { return add_row(in[0], mean_rows(in[0])); }},
  };
  for (const auto& c : cases) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      std::mt19937_64 rng(seed * 31 + 1);
      const Tensor x = random_tensor(rng, c.in_rows, c.in_cols);
      auto fn = probe(c.op, c.out_rows, c.out_cols, seed);
      EXPECT_LT(max_gradient_error(fn, {x}), kGradTol) << c.name << " seed " << seed;
    }
  }
}

TEST(Gradients, LinearAndCrossEntropyMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed + 100);
    const std::size_t n = 2 + seed % 4, d = 3 + seed % 3, k = 2 + seed % 3;
    const Tensor x = random_tensor(rng, n, d), w = random_tensor(rng, d, k), b = random_tensor(rng, 1, k);
    std::vector<std::size_t> targets(n);
    for (std::size_t i = 0; i < n; ++i) targets[i] = (i * 7 + seed) % k;
    const Tensor soft = softmax_rows(random_tensor(rng, n, k));
    auto hard = [&](auto& in) { return cross_entropy_rows(linear(in[0], in[1], in[2]), targets); };
    auto soft_fn = [&](auto& in) { return cross_entropy_rows(linear(in[0], in[1], in[2]), soft); };
    EXPECT_LT(max_gradient_error(hard, {x, w, b}), kGradTol) << "seed " << seed;
    EXPECT_LT(max_gradient_error(soft_fn, {x, w, b}), kGradTol) << "seed " << seed;
  }
}

TEST(Tape, SecondBackwardIsAnError) {
  Tape tape;
  const Tensor x = tape.watch(Tensor::scalar(1.0));
  const Tensor y = scale(x, 2.0);
  tape.backward(y);
  EXPECT_TRUE(tape.consumed());
  EXPECT_THROW(tape.backward(y), std::logic_error);
  EXPECT_THROW(scale(x, 3.0), std::logic_error);
}

TEST(Tape, NodesAppearAfterTheirParents) {
  Tape tape;
  const Tensor x = tape.watch(Tensor::from_rows({{1, 2}}));
  const Tensor y = relu(x);
  const Tensor z = sum(add(y, x));
  EXPECT_LT(*x.node_id(), *y.node_id());
  EXPECT_LT(*y.node_id(), *z.node_id());
  EXPECT_EQ(tape.node_count(), 4u);
}

TEST(Tape, ConstantsCarryNoNode) {
  const Tensor c = relu(Tensor::from_rows({{1, -1}}));
  EXPECT_FALSE(c.requires_grad());
  EXPECT_FALSE(c.node_id().has_value());
}

TEST(Tape, GradientShapeMatchesLeafShape) {
  std::mt19937_64 rng(1);
  Tape tape;
  const Tensor w = tape.watch(random_tensor(rng, 4, 3));
  const Tensor unused = tape.watch(random_tensor(rng, 2, 5));
  const Tensor x = random_tensor(rng, 6, 4);
  const Gradients g = tape.backward(mean(matmul(x, w)));
  EXPECT_EQ(g.of(w).shape(), w.shape());
  EXPECT_EQ(g.of(unused).shape(), unused.shape());
  EXPECT_FALSE(g.reached(unused));
}

TEST(Tape, OperandsFromDifferentTapesRejected) {
  Tape t1, t2;
  const Tensor a = t1.watch(Tensor::scalar(1.0));
  const Tensor b = t2.watch(Tensor::scalar(1.0));
  EXPECT_THROW(add(a, b), std::logic_error);
}

TEST(Backward, NoNaNForFiniteForwardValues) {
  std::mt19937_64 rng(19);
  for (int trial = 0; trial < 20; ++trial) {
    Tape tape;
    const Tensor w = tape.watch(random_tensor(rng, 4, 4, -50, 50));
    Tensor x = random_tensor(rng, 5, 4, -50, 50);
    const Tensor h = relu(matmul(l2_normalize_rows(x), w));
    const Tensor logits = scale(h, 100.0);
    const std::vector<std::size_t> t{0, 1, 2, 3, 0};
    const Tensor loss = add(cross_entropy_rows(logits, t), mean(log_sigmoid(scale(h, -200.0))));
    ASSERT_TRUE(std::isfinite(loss.item()));
    for (double v : tape.backward(loss).of(w).data()) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(Sgd, ZeroLearningRateIsBitwiseNoOp) {
  std::mt19937_64 rng(2);
  Tensor p = random_tensor(rng, 3, 3);
  const Tensor before = p;
  sgd_step(p, random_tensor(rng, 3, 3), 0.0);
  EXPECT_TRUE(p.identical(before));
}

TEST(Sgd, StepsAgainstTheGradient) {
  Tensor p = Tensor::from_rows({{1.0, -2.0}});
  sgd_step(p, Tensor::from_rows({{0.5, -1.0}}), 0.1);
  EXPECT_DOUBLE_EQ(p(0, 0), 0.95);
  EXPECT_DOUBLE_EQ(p(0, 1), -1.9);
}
