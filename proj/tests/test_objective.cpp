#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dadkit/objective.hpp"
#include "test_util.hpp"

using namespace dadkit;
using dadkit::test_util::random_grid;

namespace {

struct RlCase {
  Grid2d sa, sb;
  Mask ma, mb;
  KeypointSet ka, kb;
  MatchSet mab, mba;
};

// Left half of A and right half of B are valid; 8 matches per direction with
// distances spread around tau_r = 1.
RlCase random_case(std::mt19937_64& rng, int n = 12) {
  RlCase c;
  c.sa = random_grid(rng, n, n, -2.0, 2.0);
  c.sb = random_grid(rng, n, n, -2.0, 2.0);
  c.ma = Mask(n, n);
  c.mb = Mask(n, n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      c.ma.set(y, x, x < n / 2);
      c.mb.set(y, x, x >= n / 2);
    }
  std::uniform_int_distribution<int> row(0, n - 1), half(0, n / 2 - 1);
  std::uniform_real_distribution<double> dist(0.0, 2.0);
  c.ka.source_shape = c.kb.source_shape = {n, n};
  for (int i = 0; i < 8; ++i) {
    c.ka.keypoints.push_back({double(half(rng)), double(row(rng)), 1.0});
    c.kb.keypoints.push_back({double(half(rng) + n / 2), double(row(rng)), 1.0});
  }
  c.mab.direction = MatchDirection::a_to_b;
  c.mba.direction = MatchDirection::b_to_a;
  for (int i = 0; i < 8; ++i) {
    c.mab.pairs.push_back({i, 7 - i, dist(rng)});
    c.mba.pairs.push_back({(i + 3) % 8, i, dist(rng)});
  }
  return c;
}

double rel_err(double a, double n) {
  const double d = std::abs(a - n);
  return d <= 1e-8 ? 0.0 : d / std::max(std::abs(a), std::abs(n));
}

// Central differences of `loss` w.r.t. every entry of `s`, compared to `grad`.
template <typename Loss>
double max_fd_error(Grid2d s, const Grid2d& grad, Loss loss, double h = 1e-4) {
  double worst = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double v = s[i];
    s[i] = v + h;
    const double up = loss(s);
    s[i] = v - h;
    const double down = loss(s);
    s[i] = v;
    worst = std::max(worst, rel_err(grad[i], (up - down) / (2 * h)));
  }
  return worst;
}

}  // namespace

TEST(Reward, ThresholdIsStrict) {
  EXPECT_EQ(reward_threshold(0.0, 1.0), 1.0);
  EXPECT_EQ(reward_threshold(1.0, 1.0), 0.0);
  EXPECT_EQ(reward_threshold(std::nextafter(1.0, 0.0), 1.0), 1.0);
}

TEST(Reward, TauFromImageHeight) {
  const double tau = reward_tau_from_height(400);
  EXPECT_DOUBLE_EQ(tau, 1.0);
  EXPECT_EQ(reward_threshold(0.9, tau), 1.0);
}

TEST(Reward, LinearVariantDecays) {
  EXPECT_DOUBLE_EQ(reward_linear(0.0, 2.0), 1.0);
  EXPECT_DOUBLE_EQ(reward_linear(1.0, 2.0), 0.5);
  EXPECT_DOUBLE_EQ(reward_linear(3.0, 2.0), 0.0);
}

TEST(NormalizeRewards, Examples) {
  const auto a = normalize_rewards({1, 1, 0, 0}, 0.01);
  EXPECT_NEAR(a[0], 1.0 / 0.51, 1e-12);
  EXPECT_NEAR(a[1], 1.96078, 1e-5);
  EXPECT_EQ(a[2], 0.0);
  for (double v : normalize_rewards({0, 0, 0}, 0.01)) EXPECT_EQ(v, 0.0);
  for (double v : normalize_rewards({1, 1, 1}, 0.01)) EXPECT_NEAR(v, 0.990099, 1e-6);
  EXPECT_TRUE(normalize_rewards({}, 0.01).empty());
}

TEST(NormalizeRewards, ScaleInvariantUpToEps) {
  std::mt19937_64 rng(20);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> r(10);
  for (double& v : r) v = u(rng);
  const auto a = normalize_rewards(r, 1e-12);
  for (double& v : r) v *= 7.0;
  const auto b = normalize_rewards(r, 1e-12);
  for (std::size_t i = 0; i < r.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-9);
}

TEST(RlLoss, NoMatchesIsZero) {
  const Grid2d s(6, 6, 0.3);
  const Mask m(6, 6, true);
  const RlResult r = rl_loss_and_grad(ScoreMap(s), ScoreMap(s), {}, {}, m, m, {}, {}, {});
  EXPECT_EQ(r.loss, 0.0);
  for (double v : r.grad_a) EXPECT_EQ(v, 0.0);
  for (double v : r.grad_b) EXPECT_EQ(v, 0.0);
}

TEST(RlLoss, SingleMatchUniformLogitsClosedForm) {
  const int n = 5, N = n * n;
  const Grid2d s(n, n, 0.0);
  const Mask m(n, n, true);
  const KeypointSet ka{{{2, 3, 1}}, {n, n}}, kb{{{1, 1, 1}}, {n, n}};
  MatchSet mab;
  mab.pairs = {{0, 0, 0.2}};
  const RlResult r = rl_loss_and_grad(ScoreMap(s), ScoreMap(s), ka, kb, m, m, mab, {}, {});
  const double rhat = 1.0 / 1.01;
  EXPECT_NEAR(r.loss, -rhat * std::log(1.0 / N), 1e-12);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      EXPECT_NEAR(r.grad_a(y, x), (y == 3 && x == 2) ? -rhat * (1 - 1.0 / N) : rhat / N, 1e-12);
  // A->B matches never reach B.
  for (double v : r.grad_b) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(r.pair_reward, 1.0);
}

TEST(RlLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const RlCase c = random_case(rng);
    const RewardConfig cfg;
    const RlResult r = rl_loss_and_grad(ScoreMap(c.sa), ScoreMap(c.sb), c.ka, c.kb, c.ma, c.mb, c.mab, c.mba, cfg);
    auto la = [&](const Grid2d& s) {
      return rl_loss_and_grad(ScoreMap(s), ScoreMap(c.sb), c.ka, c.kb, c.ma, c.mb, c.mab, c.mba, cfg).loss;
    };
    auto lb = [&](const Grid2d& s) {
      return rl_loss_and_grad(ScoreMap(c.sa), ScoreMap(s), c.ka, c.kb, c.ma, c.mb, c.mab, c.mba, cfg).loss;
    };
    EXPECT_LT(max_fd_error(c.sa, r.grad_a, la), 1e-4);
    EXPECT_LT(max_fd_error(c.sb, r.grad_b, lb), 1e-4);
  }
}

TEST(RlLoss, GradientVanishesOutsideMaskAndSumsToZero) {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 20; ++trial) {
    const RlCase c = random_case(rng);
    const RlResult r =
        rl_loss_and_grad(ScoreMap(c.sa), ScoreMap(c.sb), c.ka, c.kb, c.ma, c.mb, c.mab, c.mba, RewardConfig{});
    double sa = 0, sb = 0;
    for (std::size_t i = 0; i < r.grad_a.size(); ++i) {
      if (!c.ma[i]) EXPECT_EQ(r.grad_a[i], 0.0);
      if (!c.mb[i]) EXPECT_EQ(r.grad_b[i], 0.0);
      sa += r.grad_a[i];
      sb += r.grad_b[i];
    }
    EXPECT_NEAR(sa, 0.0, 1e-12);
    EXPECT_NEAR(sb, 0.0, 1e-12);
  }
}

TEST(RlLoss, DetachRuleSeparatesDirections) {
  std::mt19937_64 rng(23);
  const RlCase c = random_case(rng);
  const RlResult only_ab =
      rl_loss_and_grad(ScoreMap(c.sa), ScoreMap(c.sb), c.ka, c.kb, c.ma, c.mb, c.mab, {}, RewardConfig{});
  for (double v : only_ab.grad_b) EXPECT_EQ(v, 0.0);
  const RlResult only_ba =
      rl_loss_and_grad(ScoreMap(c.sa), ScoreMap(c.sb), c.ka, c.kb, c.ma, c.mb, {}, c.mba, RewardConfig{});
  for (double v : only_ba.grad_a) EXPECT_EQ(v, 0.0);
}

TEST(RlLoss, OutOfBoundsIndexIsInvalidInput) {
  std::mt19937_64 rng(24);
  RlCase c = random_case(rng);
  c.mab.pairs[0].index_b = 99;
  try {
    rl_loss_and_grad(ScoreMap(c.sa), ScoreMap(c.sb), c.ka, c.kb, c.ma, c.mb, c.mab, c.mba, RewardConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_input);
  }
}

TEST(RegLoss, ZeroAtExactFit) {
  const int n = 12;
  Mask ind(n, n);
  Grid2d s(n, n, -1000.0);
  for (int y = 3; y < 9; ++y)
    for (int x = 2; x < 7; ++x) {
      ind.set(y, x, true);
      s(y, x) = 0.5;
    }
  const RegResult r = reg_loss_and_grad(ScoreMap(s), ind, 2.0);
  EXPECT_NEAR(r.loss, 0.0, 1e-12);
  for (double v : r.grad) EXPECT_NEAR(v, 0.0, 1e-9);
}

TEST(RegLoss, UniformIndicatorUniformLogits) {
  const RegResult r = reg_loss_and_grad(ScoreMap(Grid2d(10, 10, 3.0)), Mask(10, 10, true), 12.5);
  EXPECT_NEAR(r.loss, 0.0, 1e-12);
}

TEST(RegLoss, GradientMatchesFiniteDifferencesAndIsNonNegative) {
  std::mt19937_64 rng(25);
  std::bernoulli_distribution coin(0.4);
  for (int trial = 0; trial < 10; ++trial) {
    const Grid2d s = random_grid(rng, 12, 12, -3.0, 3.0);
    Mask ind(12, 12);
    for (std::size_t i = 0; i < ind.size(); ++i) ind.set(i, coin(rng));
    ind.set(0, true);
    const double sigma = 0.8 + 0.5 * trial;
    const RegResult r = reg_loss_and_grad(ScoreMap(s), ind, sigma);
    EXPECT_GE(r.loss, 0.0);
    EXPECT_LT(max_fd_error(s, r.grad, [&](const Grid2d& g) { return reg_loss_and_grad(ScoreMap(g), ind, sigma).loss; }),
              1e-4);
  }
}

TEST(RegLoss, EmptyIndicatorIsDegenerate) {
  try {
    reg_loss_and_grad(ScoreMap(Grid2d(4, 4, 0.0)), Mask(4, 4), 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::degenerate_mask);
  }
}

TEST(TotalLoss, ZeroWeightEqualsRl) {
  std::mt19937_64 rng(26);
  const RlCase c = random_case(rng);
  ObjectiveConfig cfg;
  cfg.reg_weight = 0.0;
  const MatchPair mp{c.mab, c.mba};
  const TotalResult t = total_loss_and_grad(ScoreMap(c.sa), ScoreMap(c.sb), c.ka, c.kb, c.ma, c.mb, mp, cfg);
  const RlResult r = rl_loss_and_grad(ScoreMap(c.sa), ScoreMap(c.sb), c.ka, c.kb, c.ma, c.mb, c.mab, c.mba, cfg.reward);
  EXPECT_EQ(t.report.total, r.loss);
  EXPECT_EQ(t.grad_a, r.grad_a);
  EXPECT_EQ(t.grad_b, r.grad_b);
}

TEST(TotalLoss, NoMatchesAndPerfectFitIsZero) {
  const Grid2d s(8, 8, 1.0);
  const Mask m(8, 8, true);
  const TotalResult t = total_loss_and_grad(ScoreMap(s), ScoreMap(s), {}, {}, m, m, {}, ObjectiveConfig{});
  EXPECT_NEAR(t.report.total, 0.0, 1e-12);
}

TEST(TotalLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(27);
  for (int trial = 0; trial < 5; ++trial) {
    const RlCase c = random_case(rng);
    ObjectiveConfig cfg;
    cfg.reg_sigma = 2.0;
    cfg.reg_weight = 0.7;
    const MatchPair mp{c.mab, c.mba};
    const TotalResult t = total_loss_and_grad(ScoreMap(c.sa), ScoreMap(c.sb), c.ka, c.kb, c.ma, c.mb, mp, cfg);
    EXPECT_NEAR(t.report.total, t.report.rl_loss + t.report.reg_loss, 1e-12);
    auto la = [&](const Grid2d& s) {
      return total_loss_and_grad(ScoreMap(s), ScoreMap(c.sb), c.ka, c.kb, c.ma, c.mb, mp, cfg).report.total;
    };
    auto lb = [&](const Grid2d& s) {
      return total_loss_and_grad(ScoreMap(c.sa), ScoreMap(s), c.ka, c.kb, c.ma, c.mb, mp, cfg).report.total;
    };
    EXPECT_LT(max_fd_error(c.sa, t.grad_a, la), 1e-4);
    EXPECT_LT(max_fd_error(c.sb, t.grad_b, lb), 1e-4);
  }
}

TEST(TotalLoss, NegativeWeightRejected) {
  ObjectiveConfig cfg;
  cfg.reg_weight = -1.0;
  const Mask m(4, 4, true);
  const Grid2d s(4, 4, 0.0);
  EXPECT_THROW(total_loss_and_grad(ScoreMap(s), ScoreMap(s), {}, {}, m, m, {}, cfg), Error);
}
