#include <gtest/gtest.h>

#include <map>

#include "tcnaa/augment.hpp"

using namespace tcnaa;

namespace {

PreprocessedSample sample(std::size_t label, double base, Shape shape = {2, 4, 3}) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = base + 0.01 * static_cast<double>(i);
  return {t, InteractionLabel(label)};
}

Dataset classes_dataset(std::size_t classes, std::size_t per_class) {
  Dataset d;
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t i = 0; i < per_class; ++i) d.push_back(sample(c, 100.0 * c + i));
  return d;
}

// Sample i is the one-hot vector e_i, so a mix reveals its donors exactly:
// out[j] > 0 for j != a iff sample j was drawn.
Dataset one_hot_dataset(std::size_t classes, std::size_t per_class) {
  const std::size_t n = classes * per_class;
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor t(Shape{n});
    t[i] = 1.0;
    d.push_back({t, InteractionLabel(i / per_class)});
  }
  return d;
}

std::vector<std::size_t> donors_of(const PreprocessedSample& out, std::size_t a) {
  std::vector<std::size_t> js;
  for (std::size_t j = 0; j < out.data.size(); ++j)
    if (j != a && out.data[j] > 0.0) js.push_back(j);
  return js;
}

}  // namespace

TEST(Dropout, LambdaZeroIsIdentityLambdaOneZeroesAll) {
  Rng rng(1);
  const PreprocessedSample s = sample(3, 1.0);
  const PreprocessedSample same = dropout_augment(s, 0.0, rng);
  EXPECT_EQ(same.data, s.data);
  const PreprocessedSample zero = dropout_augment(s, 1.0, rng);
  for (double v : zero.data.values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(zero.label, s.label);
}

TEST(Dropout, ZeroedFractionConcentratesAtLambda) {
  Rng rng(2);
  PreprocessedSample big{Tensor(Shape{1000, 1000}, 1.0), InteractionLabel(0)};
  const PreprocessedSample out = dropout_augment(big, 0.05, rng);
  std::size_t zeros = 0;
  for (double v : out.data.values()) zeros += v == 0.0;
  EXPECT_NEAR(static_cast<double>(zeros) / 1e6, 0.05, 0.002);
}

TEST(Dropout, DrawnLambdaStaysBelowMax) {
  AugmentConfig cfg;
  PreprocessedSample big{Tensor(Shape{100000}, 1.0), InteractionLabel(0)};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const PreprocessedSample out = dropout_augment(big, cfg, rng);
    std::size_t zeros = 0;
    for (double v : out.data.values()) zeros += v == 0.0;
    EXPECT_LT(static_cast<double>(zeros) / 1e5, cfg.dropout_lambda_max + 0.005);
  }
}

TEST(Mix, IdentityCaseIsBitwise) {
  const auto a = sample(2, 1.234), b = sample(5, 9.0), c = sample(7, -3.0);
  const PreprocessedSample d = mix_samples(a, b, c, 0.0, 0.0, 0.0);
  EXPECT_EQ(d.data, a.data);
  EXPECT_EQ(d.label, a.label);
}

TEST(Mix, WorkedVectorExample) {
  const PreprocessedSample a{Tensor::vector({1, 0}), InteractionLabel(0)};
  const PreprocessedSample b{Tensor::vector({0, 1}), InteractionLabel(1)};
  const PreprocessedSample c{Tensor::vector({2, 2}), InteractionLabel(2)};
  const PreprocessedSample d = mix_samples(a, b, c, 0.04, 0.02, 0.02);
  EXPECT_NEAR(d.data[0], 1.00, 1e-12);
  EXPECT_NEAR(d.data[1], 0.06, 1e-12);
  EXPECT_EQ(d.label.id(), 0u);
}

TEST(Mix, EqualInputsScaleByOnePlusEpsilon) {
  const auto x = sample(1, 2.0);
  const PreprocessedSample d = mix_samples(x, x, x, 0.03, 0.03, 0.03);
  for (std::size_t i = 0; i < x.data.size(); ++i) EXPECT_NEAR(d.data[i], x.data[i] * 1.03, 1e-12);
}

TEST(Mix, LinearInEachArgument) {
  const auto a = sample(0, 1.0), b = sample(1, 2.0), c = sample(2, 3.0), b2 = sample(1, -4.0);
  PreprocessedSample bsum = b;
  for (std::size_t i = 0; i < bsum.data.size(); ++i) bsum.data[i] += b2.data[i];
  const auto d1 = mix_samples(a, b, c, 0.01, 0.02, 0.03), d2 = mix_samples(a, b2, c, 0.01, 0.02, 0.03),
             ds = mix_samples(a, bsum, c, 0.01, 0.02, 0.03), d0 = mix_samples(a, b2, c, 0.01, 0.0, 0.03);
  for (std::size_t i = 0; i < a.data.size(); ++i) EXPECT_NEAR(ds.data[i], d1.data[i] + d2.data[i] - d0.data[i], 1e-12);
}

TEST(Mix, ShapeMismatchThrows) {
  EXPECT_THROW(mix_samples(sample(0, 1), sample(1, 1, {2, 4, 4}), sample(2, 1), 0.01, 0.01, 0.01), ShapeError);
}

TEST(MixOther, DonorsAlwaysCarryAnotherLabel) {
  const Dataset d = one_hot_dataset(12, 3);
  AugmentConfig cfg;
  std::size_t coincident = 0;
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    Rng rng(seed);
    const std::size_t a = seed % 3;  // class 0
    const PreprocessedSample out = mix_other(d, a, cfg, rng);
    EXPECT_EQ(out.label.id(), 0u);
    EXPECT_GT(out.data[a], 1.0 - cfg.mix_epsilon_max);
    const auto js = donors_of(out, a);
    ASSERT_GE(js.size(), 1u);
    ASSERT_LE(js.size(), 2u);
    coincident += js.size() == 1;
    for (std::size_t j : js) {
      EXPECT_NE(d[j].label.id(), 0u);
      EXPECT_LT(out.data[j], 2 * cfg.mix_epsilon_max);
    }
  }
  EXPECT_LT(coincident, 30u);
}

TEST(MixSame, DonorsShareTheLabelAreDistinctAndExcludeA) {
  const Dataset d = one_hot_dataset(3, 5);
  AugmentConfig cfg;
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    Rng rng(seed);
    const std::size_t a = 5 + seed % 5;  // class 1
    const PreprocessedSample out = mix_same(d, a, cfg, rng);
    EXPECT_EQ(out.label.id(), 1u);
    const auto js = donors_of(out, a);
    ASSERT_EQ(js.size(), 2u);
    for (std::size_t j : js) EXPECT_EQ(d[j].label.id(), 1u);
  }
}

TEST(MixOther, SingleClassDatasetThrows) {
  const Dataset d = classes_dataset(1, 4);
  Rng rng(1);
  EXPECT_THROW(mix_other(d, 0, AugmentConfig{}, rng), std::invalid_argument);
}

TEST(MixSame, NeedsTwoOtherSameLabelSamples) {
  Dataset d = classes_dataset(2, 2);
  Rng rng(1);
  EXPECT_THROW(mix_same(d, 0, AugmentConfig{}, rng), std::invalid_argument);
}

TEST(MixOther, FixedSeedReproducesSelection) {
  const Dataset d = classes_dataset(4, 5);
  Rng r1(9), r2(9);
  EXPECT_EQ(mix_other(d, 3, AugmentConfig{}, r1).data, mix_other(d, 3, AugmentConfig{}, r2).data);
  Rng r3(9), r4(9);
  EXPECT_EQ(mix_same(d, 3, AugmentConfig{}, r3).data, mix_same(d, 3, AugmentConfig{}, r4).data);
}

TEST(Expand, CountContract) {
  const Dataset d = classes_dataset(3, 400);
  AugmentConfig one;
  one.methods = {AugmentMethod::MixOther};
  std::map<std::size_t, std::size_t> per_class;
  for (const auto& s : expand_dataset(d, one)) ++per_class[s.label.id()];
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(per_class[c], 800u);

  AugmentConfig two;
  two.methods = {AugmentMethod::Dropout, AugmentMethod::MixSame};
  per_class.clear();
  for (const auto& s : expand_dataset(d, two)) ++per_class[s.label.id()];
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(per_class[c], 1200u);

  AugmentConfig none;
  none.methods = {};
  const Dataset same = expand_dataset(d, none);
  ASSERT_EQ(same.size(), d.size());
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(same[i].data, d[i].data);
}

TEST(Expand, KeepsOriginalsFirstAndIsReproducible) {
  const Dataset d = classes_dataset(3, 4);
  AugmentConfig cfg;
  cfg.copies_per_method = 2;
  cfg.seed = 5;
  const Dataset a = expand_dataset(d, cfg), b = expand_dataset(d, cfg);
  ASSERT_EQ(a.size(), 12u + 3 * 2 * 12);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(a[i].data, d[i].data);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].data, b[i].data);
    EXPECT_EQ(a[i].data.shape(), d[0].data.shape());
  }
  // Block layout: method, then sample, then copy; labels follow the source sample.
  for (std::size_t m = 0; m < 3; ++m)
    for (std::size_t i = 0; i < 12; ++i)
      for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(a[12 + (m * 12 + i) * 2 + c].label, d[i].label);
  cfg.seed = 6;
  EXPECT_NE(expand_dataset(d, cfg)[12].data, a[12].data);
}

TEST(Config, RangeValidation) {
  AugmentConfig cfg;
  cfg.dropout_lambda_max = 1.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = AugmentConfig{};
  cfg.mix_epsilon_max = 0.5;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = AugmentConfig{};
  cfg.methods = {AugmentMethod::Dropout, AugmentMethod::Dropout};
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  EXPECT_DOUBLE_EQ(AugmentConfig{}.dropout_lambda_max, 0.07);
  EXPECT_DOUBLE_EQ(AugmentConfig{}.mix_epsilon_max, 0.05);
}
