#include <gtest/gtest.h>

#include <random>
#include <set>

#include "dadkit/synth.hpp"

using namespace dadkit;

namespace {

int count_value(const Grid2d& img, double v) {
  int n = 0;
  for (double x : img) n += x == v;
  return n;
}

SceneConfig plain_scenes() {
  SceneConfig c = SceneConfig::scene_defaults();
  c.rotation_aug = false;
  c.homography = {};
  c.noise_sigma = 0.0;
  return c;
}

}  // namespace

TEST(ToyPair, DefaultsGiveTenLightAndTenDarkDots) {
  std::mt19937_64 rng(40);
  const PairSample s = gen_toy_pair(rng, SceneConfig::toy_defaults());
  EXPECT_TRUE(s.toy);
  for (const Grid2d* img : {&s.image_a, &s.image_b}) {
    EXPECT_EQ(count_value(*img, 1.0), 10);
    EXPECT_EQ(count_value(*img, 0.0), 10);
    EXPECT_EQ(count_value(*img, 0.5), int(img->size()) - 20);
  }
  ASSERT_EQ(s.gt_a.size(), 20u);
  for (std::size_t i = 0; i < 20; ++i) {
    const Polarity p = s.polarity_a[i];
    EXPECT_EQ(s.image_a(int(s.gt_a[i].y), int(s.gt_a[i].x)), p == Polarity::light ? 1.0 : 0.0);
    // Dot i in B carries the same label.
    EXPECT_EQ(s.polarity_b[i], p);
    EXPECT_EQ(s.gt_b_source[i], int(i));
  }
}

TEST(ToyPair, NoDarkGivesAllLight) {
  SceneConfig c;
  c.num_dark = 0;
  std::mt19937_64 rng(41);
  const PairSample s = gen_toy_pair(rng, c);
  EXPECT_EQ(count_value(s.image_a, 0.0), 0);
  EXPECT_EQ(count_value(s.image_a, 1.0), 10);
}

TEST(ToyPair, SeedsGiveDifferentLayoutsSameCounts) {
  const PairSample a = gen_pair_indexed(1, 0, SceneConfig{}), b = gen_pair_indexed(2, 0, SceneConfig{});
  EXPECT_NE(a.gt_a, b.gt_a);
  EXPECT_EQ(a.gt_a.size(), b.gt_a.size());
  const PairSample again = gen_pair_indexed(1, 0, SceneConfig{});
  EXPECT_EQ(a.image_a, again.image_a);
  EXPECT_EQ(a.image_b, again.image_b);
}

TEST(ToyPair, CentresRespectSeparation) {
  const SceneConfig c;
  for (int i = 0; i < 50; ++i) {
    const PairSample s = gen_pair_indexed(3, i, c);
    for (std::size_t p = 0; p < s.gt_a.size(); ++p)
      for (std::size_t q = p + 1; q < s.gt_a.size(); ++q)
        EXPECT_GE(std::hypot(s.gt_a[p].x - s.gt_a[q].x, s.gt_a[p].y - s.gt_a[q].y), c.min_separation());
  }
}

TEST(ToyPair, OvercrowdedLayoutIsPlacementError) {
  SceneConfig c;
  c.size = 12;
  c.num_light = 30;
  std::mt19937_64 rng(42);
  try {
    gen_toy_pair(rng, c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::placement);
  }
}

TEST(ToyPair, LabelTransferCarriesDotsToPartners) {
  const PairSample s = gen_pair_indexed(4, 0, SceneConfig{});
  const LabelTransfer t = s.label_transfer();
  for (std::size_t i = 0; i < s.gt_a.size(); ++i) {
    const auto q = t.apply({s.gt_a[i].x, s.gt_a[i].y});
    ASSERT_TRUE(q);
    EXPECT_EQ(q->x, s.gt_b[i].x);
    EXPECT_EQ(q->y, s.gt_b[i].y);
  }
  // Far from any dot there is no image.
  EXPECT_FALSE(t.apply({-10.0, -10.0}));
}

TEST(ScenePair, IdentityWarpWithoutAugmentationCopiesImage) {
  std::mt19937_64 rng(43);
  const PairSample s = gen_scene_pair(rng, plain_scenes());
  EXPECT_EQ(s.image_a, s.image_b);
  EXPECT_EQ(s.mask_a.count(), s.mask_a.size());
}

TEST(ScenePair, HalfTurnMapsCornerToCorner) {
  SceneConfig c = plain_scenes();
  c.rotation_aug = true;
  bool seen = false;
  for (std::uint64_t seed = 0; seed < 64 && !seen; ++seed) {
    const PairSample s = gen_pair_indexed(seed, 0, c);
    if (s.rotation_k != 2) continue;
    seen = true;
    const auto q = s.transfer.apply({0, 0});
    ASSERT_TRUE(q);
    EXPECT_NEAR(q->x, c.size - 1, 1e-12);
    EXPECT_NEAR(q->y, c.size - 1, 1e-12);
  }
  EXPECT_TRUE(seen);
}

TEST(ScenePair, GroundTruthConsistentUnderTransfer) {
  const SceneConfig c = SceneConfig::scene_defaults();
  for (int i = 0; i < 40; ++i) {
    const PairSample s = gen_pair_indexed(5, i, c);
    for (std::size_t j = 0; j < s.gt_b.size(); ++j) {
      const Keypoint& a = s.gt_a[s.gt_b_source[j]];
      const auto q = s.transfer.apply({a.x, a.y});
      ASSERT_TRUE(q);
      EXPECT_NEAR(q->x, s.gt_b[j].x, 1e-6);
      EXPECT_NEAR(q->y, s.gt_b[j].y, 1e-6);
      EXPECT_EQ(s.polarity_b[j], s.polarity_a[s.gt_b_source[j]]);
    }
    EXPECT_EQ(s.mask_a, covisibility_mask(s.transfer, s.image_a.shape(), s.image_b.shape()));
    for (double v : s.image_b) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(ScenePair, NegationFlipsIntensityAndLabelsOnly) {
  SceneConfig c = SceneConfig::scene_defaults();
  const PairSample plain = gen_pair_indexed(6, 0, c);
  c.negation_aug = NegationAug::rgb;
  const PairSample neg = gen_pair_indexed(6, 0, c);
  EXPECT_TRUE(neg.negated_b);
  EXPECT_EQ(neg.image_a, plain.image_a);
  EXPECT_EQ(neg.transfer.matrix(), plain.transfer.matrix());
  EXPECT_EQ(neg.gt_b, plain.gt_b);
  for (std::size_t i = 0; i < plain.image_b.size(); ++i) EXPECT_EQ(neg.image_b[i], 1.0 - plain.image_b[i]);
  for (std::size_t j = 0; j < plain.polarity_b.size(); ++j) EXPECT_EQ(neg.polarity_b[j], flipped(plain.polarity_b[j]));
}

TEST(SampleHomography, ZeroMagnitudeIsIdentity) {
  std::mt19937_64 rng(44);
  const HomographyTransfer h = sample_homography(rng, {});
  const Mat3 id{1, 0, 0, 0, 1, 0, 0, 0, 1};
  for (int i = 0; i < 9; ++i) EXPECT_NEAR(h.matrix()[i], id[i], 1e-15);
}

TEST(SampleHomography, TranslationOnlyIsPureTranslation) {
  std::mt19937_64 rng(45);
  HomographyMagnitude m;
  m.max_translation = 0.1;
  const HomographyTransfer h = sample_homography(rng, m);
  const Mat3& a = h.matrix();
  EXPECT_NEAR(a[0], 1, 1e-15);
  EXPECT_NEAR(a[1], 0, 1e-15);
  EXPECT_NEAR(a[3], 0, 1e-15);
  EXPECT_NEAR(a[4], 1, 1e-15);
  EXPECT_NEAR(a[6], 0, 1e-15);
  EXPECT_NEAR(a[7], 0, 1e-15);
  EXPECT_LE(std::abs(a[2]), 0.1);
  EXPECT_LE(std::abs(a[5]), 0.1);
}

TEST(SampleHomography, MonteCarloInvertibleAndCovisible) {
  std::mt19937_64 rng(46);
  HomographyMagnitude m{0.3, 0.3, 0.5, 1.0};  // harsher than the scene defaults
  const int size = 41;
  for (int i = 0; i < 1000; ++i) {
    const HomographyTransfer h = to_pixel_frame(sample_homography(rng, m), size);
    EXPECT_NO_THROW(h.inverse());
    const Mask cov = covisibility_mask(h, {size, size}, {size, size});
    EXPECT_GE(double(cov.count()) / cov.size(), 0.4) << i;
  }
}

TEST(StrategyReward, PolarityOnlyStrategiesScoreTen) {
  const SceneConfig c;
  EXPECT_EQ(expected_strategy_reward(ToyStrategy::light_only, c, 200), 10.0);
  EXPECT_EQ(expected_strategy_reward(ToyStrategy::dark_only, c, 200), 10.0);
}

TEST(StrategyReward, MixedStrategyScoresFive) {
  // Overlap of two independent 5-of-10 subsets is hypergeometric: mean 2.5, var 25/36.
  const double se = std::sqrt(2 * 25.0 / 36.0 / 20000);
  EXPECT_NEAR(expected_strategy_reward(ToyStrategy::mixed_5_5, SceneConfig{}, 20000), 5.0, 5 * se);
}

TEST(SceneConfig, RejectsInvalid) {
  SceneConfig c;
  c.num_light = c.num_dark = 0;
  EXPECT_THROW(c.validate(), Error);
  c = SceneConfig{};
  c.background_gray = 0.9;
  EXPECT_THROW(c.validate(), Error);
  c = SceneConfig{};
  c.nms_window = 4;
  EXPECT_THROW(c.validate(), Error);
}
