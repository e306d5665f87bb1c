#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "cdgpa/datagen.hpp"
#include "cdgpa/errors.hpp"

using namespace cdgpa;

namespace {

std::vector<double> class_mean(const Tensor& x, const std::vector<std::size_t>& y, std::size_t k) {
  std::vector<double> m(x.cols(), 0.0);
  std::size_t n = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] != k) continue;
    ++n;
    for (std::size_t j = 0; j < x.cols(); ++j) m[j] += x(i, j);
  }
  for (double& v : m) v /= static_cast<double>(n);
  return m;
}

std::vector<double> pooled_mean(const Tensor& x) {
  std::vector<double> m(x.cols(), 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) m[j] += x(i, j) / static_cast<double>(x.rows());
  return m;
}

SyntheticSpec big_spec() {
  SyntheticSpec s;
  s.n_source = 2000;
  s.n_target = 2000;
  s.seed = 4;
  return s;
}

}  // namespace

TEST(SyntheticSpecTest, RejectsInvalidSpecs) {
  SyntheticSpec s;
  s.noise = 0.0;
  EXPECT_THROW(s.validate(), ParameterError);
  s = {};
  s.n_source = 1;
  EXPECT_THROW(s.validate(), ParameterError);
  s = {};
  s.separation = -1;
  EXPECT_THROW(s.validate(), ParameterError);
  s = {};
  s.translation = {1.0};
  EXPECT_THROW(s.validate(), ParameterError);
}

TEST(GaussianDomains, TargetIsUnlabeledAndLabelsAreHidden) {
  const SyntheticDomains d = gen_gaussian_domains({});
  EXPECT_TRUE(d.source.labeled());
  EXPECT_FALSE(d.target.labeled());
  EXPECT_EQ(d.hidden_target_labels.labels.size(), d.target.size());
  EXPECT_EQ(d.source.domain, Domain::kSource);
  EXPECT_EQ(d.target.domain, Domain::kTarget);
}

TEST(GaussianDomains, DeterministicPerSeed) {
  SyntheticSpec s;
  s.seed = 12;
  EXPECT_TRUE(gen_gaussian_domains(s).target.x.identical(gen_gaussian_domains(s).target.x));
  SyntheticSpec t = s;
  t.seed = 13;
  EXPECT_FALSE(gen_gaussian_domains(s).source.x.identical(gen_gaussian_domains(t).source.x));
}

TEST(GaussianDomains, NullShiftGivesMatchingMeans) {
  const SyntheticSpec s = big_spec();
  const SyntheticDomains d = gen_gaussian_domains(s);
  const auto ms = pooled_mean(d.source.x), mt = pooled_mean(d.target.x);
  const double tol = 3.0 * s.noise * std::sqrt(2.0 / 2000.0) + 3.0 * s.separation * std::sqrt(2.0 / 2000.0);
  for (std::size_t j = 0; j < 2; ++j) EXPECT_LT(std::abs(ms[j] - mt[j]), tol);
}

TEST(GaussianDomains, TranslationMovesClassCenters) {
  SyntheticSpec s = big_spec();
  s.translation = {3.0, -1.0};
  const SyntheticDomains d = gen_gaussian_domains(s);
  for (std::size_t k = 0; k < 2; ++k) {
    const auto cs = class_mean(d.source.x, *d.source.labels, k);
    const auto ct = class_mean(d.target.x, d.hidden_target_labels.labels, k);
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(ct[j] - cs[j], s.translation[j], 3.0 * std::sqrt(2.0 / 1000.0));
  }
}

TEST(GaussianDomains, ConditionalShiftMovesClassesButNotPooledMean) {
  SyntheticSpec s = big_spec();
  s.conditional_shift = 1.5;
  const SyntheticDomains d = gen_gaussian_domains(s);
  for (std::size_t k = 0; k < 2; ++k) {
    const auto cs = class_mean(d.source.x, *d.source.labels, k);
    const auto ct = class_mean(d.target.x, d.hidden_target_labels.labels, k);
    EXPECT_GT(std::hypot(ct[0] - cs[0], ct[1] - cs[1]), 1.0);
  }
  const auto ms = pooled_mean(d.source.x), mt = pooled_mean(d.target.x);
  for (std::size_t j = 0; j < 2; ++j) EXPECT_LT(std::abs(ms[j] - mt[j]), 0.15);
}

TEST(GaussianDomains, ConditionalOffsetsSumToZero) {
  SyntheticSpec s;
  s.num_classes = 4;
  s.conditional_shift = 2.0;
  const Tensor off = conditional_offsets(s);
  for (std::size_t j = 0; j < 2; ++j) {
    double total = 0.0;
    for (std::size_t k = 0; k < 4; ++k) total += off(k, j);
    EXPECT_NEAR(total, 0.0, 1e-12);
  }
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(std::hypot(off(k, 0), off(k, 1)), 2.0, 1e-12);
}

TEST(GaussianDomains, ThreeClassLabelsCoverRange) {
  SyntheticSpec s;
  s.num_classes = 3;
  const SyntheticDomains d = gen_gaussian_domains(s);
  std::vector<int> seen(3, 0);
  for (std::size_t y : *d.source.labels) {
    ASSERT_LT(y, 3u);
    seen[y] = 1;
  }
  EXPECT_EQ(seen, (std::vector<int>{1, 1, 1}));
}

TEST(TwoMoons, ZeroRotationIsNullShift) {
  SyntheticSpec s = big_spec();
  const SyntheticDomains d = gen_two_moons_shift(s);
  const auto ms = pooled_mean(d.source.x), mt = pooled_mean(d.target.x);
  for (std::size_t j = 0; j < 2; ++j) EXPECT_LT(std::abs(ms[j] - mt[j]), 0.2);
}

TEST(TwoMoons, HalfTurnSwapsMoonRegions) {
  SyntheticSpec s = big_spec();
  s.rotation = std::numbers::pi;
  s.noise = 0.05;
  const SyntheticDomains d = gen_two_moons_shift(s);
  const auto s0 = class_mean(d.source.x, *d.source.labels, 0);
  const auto s1 = class_mean(d.source.x, *d.source.labels, 1);
  const auto t0 = class_mean(d.target.x, d.hidden_target_labels.labels, 0);
  const auto t1 = class_mean(d.target.x, d.hidden_target_labels.labels, 1);
  EXPECT_LT(std::hypot(t0[0] - s1[0], t0[1] - s1[1]), 0.1 * s.separation);
  EXPECT_LT(std::hypot(t1[0] - s0[0], t1[1] - s0[1]), 0.1 * s.separation);
  SyntheticSpec k3;
  k3.num_classes = 3;
  EXPECT_THROW(gen_two_moons_shift(k3), ParameterError);
}

TEST(FeatureCsv, HandWrittenFileRoundTrips) {
  const std::string text = "dim=2,domain=s,labeled=1\n0.5,-1.25,0\n3,4,1\n1e-3,2.5e2,1\n";
  const DomainBatch b = parse_feature_csv(text, 2);
  EXPECT_EQ(b.size(), 3u);
  EXPECT_EQ(b.x(2, 0), 1e-3);
  EXPECT_EQ(b.x(2, 1), 250.0);
  EXPECT_EQ((*b.labels)[1], 1u);
  EXPECT_EQ(format_feature_csv(parse_feature_csv(format_feature_csv(b))), format_feature_csv(b));
}

TEST(FeatureCsv, HeaderOnlyIsEmptyBatchError) {
  EXPECT_THROW(parse_feature_csv("dim=2,domain=t,labeled=0\n"), FormatError);
}

TEST(FeatureCsv, MalformedRowReportsLine) {
  try {
    parse_feature_csv("dim=2,domain=t,labeled=0\n1,2\n1,x\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(FeatureCsv, WidthMismatchIsFormatError) {
  EXPECT_THROW(parse_feature_csv("dim=2,domain=t,labeled=0\n1,2,3\n"), FormatError);
}

TEST(FeatureCsv, LabelOutOfRangeAndCrLineEndings) {
  EXPECT_THROW(parse_feature_csv("dim=1,domain=s,labeled=1\n0.5,2\n", 2), IndexError);
  EXPECT_THROW(parse_feature_csv("dim=1,domain=s,labeled=1\r\n0.5,1\r\n", 2), ParseError);
}

TEST(FeatureCsv, GeneratedBatchSaveLoadIsBitIdentical) {
  SyntheticSpec s;
  s.translation = {1.0 / 3.0, std::numbers::pi};
  s.rotation = 0.7;
  const SyntheticDomains d = gen_gaussian_domains(s);
  const auto path = std::filesystem::temp_directory_path() / "cdgpa_datagen_roundtrip.csv";
  save_feature_file(path, d.source);
  const DomainBatch back = load_feature_file(path, 2);
  EXPECT_TRUE(back.x.identical(d.source.x));
  EXPECT_EQ(*back.labels, *d.source.labels);
  std::filesystem::remove(path);
}

TEST(LabeledTarget, AttachesHiddenLabels) {
  const SyntheticDomains d = gen_gaussian_domains({});
  const DomainBatch b = labeled_target(d.target, d.hidden_target_labels);
  EXPECT_TRUE(b.labeled());
  EXPECT_EQ(b.domain, Domain::kTarget);
  EXPECT_THROW(labeled_target(d.target, TargetLabels{{0}}), DimensionError);
}
