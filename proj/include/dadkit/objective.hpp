#pragma once

// Repeatability reward, the off-policy policy-gradient loss with closed-form
// scoremap gradients, the blurred-KL regularizer and their sum.

#include <cmath>
#include <vector>

#include "dadkit/geometry.hpp"

namespace dadkit {

struct RewardConfig {
  double tau_r = 1.0;  // pixels
  double eps = 0.01;
  bool linear_decay = false;

  void validate() const {
    DADKIT_CHECK(tau_r > 0.0, ErrorKind::invalid_parameter, "reward threshold tau_r must be positive");
    DADKIT_CHECK(eps > 0.0, ErrorKind::invalid_parameter, "reward eps must be positive");
  }
};

// tau_r as a fraction of the image height (0.25% by default).
inline double reward_tau_from_height(int image_height, double fraction = 0.0025) { return fraction * image_height; }

inline double reward_threshold(double distance, double tau_r) { return distance < tau_r ? 1.0 : 0.0; }

inline double reward_linear(double distance, double tau_r) { return std::max(0.0, 1.0 - distance / tau_r); }

inline double raw_reward(double distance, const RewardConfig& cfg) {
  return cfg.linear_decay ? reward_linear(distance, cfg.tau_r) : reward_threshold(distance, cfg.tau_r);
}

// r / (mean(r) + eps) over one image pair.
inline std::vector<double> normalize_rewards(const std::vector<double>& rewards, double eps) {
  if (rewards.empty()) return {};
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(rewards.size());
  std::vector<double> out(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = rewards[i] / (mean + eps);
  return out;
}

struct LossReport {
  double rl_loss = 0.0;
  double reg_loss = 0.0;
  double total = 0.0;
  double mean_raw_reward = 0.0;
  int num_matches = 0;
  // Sum of raw rewards over the A->B matches: the number of repeated keypoints.
  double pair_reward = 0.0;
};

struct RlResult {
  double loss = 0.0;
  Grid2d grad_a;
  Grid2d grad_b;
  double mean_raw_reward = 0.0;
  double pair_reward = 0.0;
  int num_matches = 0;
};

namespace detail {

inline std::size_t pixel_of(const Keypoint& kp, Shape shape) {
  const int x = static_cast<int>(std::lround(kp.x));
  const int y = static_cast<int>(std::lround(kp.y));
  DADKIT_CHECK(shape.contains(y, x), ErrorKind::invalid_input, "matched keypoint outside the scoremap");
  return static_cast<std::size_t>(y) * shape.width + x;
}

// Adds -sum_m w_m (e_{x_m} - p) restricted to the mask; `p` is the masked softmax.
inline void accumulate_policy_grad(Grid2d& grad, const LogProbMap& lp, const std::vector<std::size_t>& pixels,
                                   const std::vector<double>& weights) {
  double total_weight = 0.0;
  for (std::size_t m = 0; m < pixels.size(); ++m) {
    grad[pixels[m]] -= weights[m];
    total_weight += weights[m];
  }
  if (total_weight == 0.0) return;
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (lp.mask[i]) grad[i] += total_weight * std::exp(lp.logprobs[i]);
}

}  // namespace detail

// loss = -sum_{A->B} r_m log p_A(x_m^A) - sum_{B->A} r_m log p_B(x_m^B).
// A->B matches only reach grad_a and B->A matches only reach grad_b.
inline RlResult rl_loss_and_grad(const ScoreMap& sa, const ScoreMap& sb, const KeypointSet& ka,
                                 const KeypointSet& kb, const Mask& mask_a, const Mask& mask_b,
                                 const MatchSet& mab, const MatchSet& mba, const RewardConfig& cfg) {
  cfg.validate();
  require_same_shape(sa.shape(), mask_a.shape(), "rl_loss_and_grad (A)");
  require_same_shape(sb.shape(), mask_b.shape(), "rl_loss_and_grad (B)");
  RlResult out;
  out.grad_a = Grid2d(sa.shape(), 0.0);
  out.grad_b = Grid2d(sb.shape(), 0.0);
  out.num_matches = static_cast<int>(mab.size() + mba.size());
  if (out.num_matches == 0) return out;

  auto check_index = [](int i, std::size_t n) {
    DADKIT_CHECK(i >= 0 && static_cast<std::size_t>(i) < n, ErrorKind::invalid_input, "match index out of bounds");
  };
  std::vector<double> raw;
  std::vector<std::size_t> pix_a, pix_b;
  for (const Match& m : mab.pairs) {
    check_index(m.index_a, ka.size());
    check_index(m.index_b, kb.size());
    pix_a.push_back(detail::pixel_of(ka[m.index_a], sa.shape()));
    raw.push_back(raw_reward(m.transfer_distance, cfg));
    out.pair_reward += raw.back();
  }
  for (const Match& m : mba.pairs) {
    check_index(m.index_a, ka.size());
    check_index(m.index_b, kb.size());
    pix_b.push_back(detail::pixel_of(kb[m.index_b], sb.shape()));
    raw.push_back(raw_reward(m.transfer_distance, cfg));
  }
  for (double r : raw) out.mean_raw_reward += r;
  out.mean_raw_reward /= static_cast<double>(raw.size());

  const std::vector<double> norm = normalize_rewards(raw, cfg.eps);
  const std::vector<double> w_a(norm.begin(), norm.begin() + static_cast<std::ptrdiff_t>(pix_a.size()));
  const std::vector<double> w_b(norm.begin() + static_cast<std::ptrdiff_t>(pix_a.size()), norm.end());

  if (!pix_a.empty()) {
    const LogProbMap lp = masked_log_softmax(sa, mask_a);
    for (std::size_t m = 0; m < pix_a.size(); ++m) {
      DADKIT_CHECK(lp.mask[pix_a[m]], ErrorKind::invalid_input, "matched keypoint outside mask A");
      if (w_a[m] != 0.0) out.loss -= w_a[m] * lp.logprobs[pix_a[m]];
    }
    detail::accumulate_policy_grad(out.grad_a, lp, pix_a, w_a);
  }
  if (!pix_b.empty()) {
    const LogProbMap lp = masked_log_softmax(sb, mask_b);
    for (std::size_t m = 0; m < pix_b.size(); ++m) {
      DADKIT_CHECK(lp.mask[pix_b[m]], ErrorKind::invalid_input, "matched keypoint outside mask B");
      if (w_b[m] != 0.0) out.loss -= w_b[m] * lp.logprobs[pix_b[m]];
    }
    detail::accumulate_policy_grad(out.grad_b, lp, pix_b, w_b);
  }
  return out;
}

struct RegResult {
  double loss = 0.0;
  Grid2d grad;
};

// KL(blur(indicator / |indicator|) || blur(softmax(S))) and its gradient w.r.t. S.
inline RegResult reg_loss_and_grad(const ScoreMap& s, const Mask& indicator, double sigma) {
  require_same_shape(s.shape(), indicator.shape(), "reg_loss_and_grad");
  DADKIT_CHECK(indicator.any(), ErrorKind::degenerate_mask, "regularization indicator is empty");
  Grid2d target(s.shape(), 0.0);
  const double inv_count = 1.0 / static_cast<double>(indicator.count());
  for (std::size_t i = 0; i < target.size(); ++i)
    if (indicator[i]) target[i] = inv_count;
  target = gaussian_blur(target, sigma);

  const ProbMap q = softmax_2d(s);
  const Grid2d blurred = gaussian_blur(q.probs(), sigma);

  RegResult out;
  out.loss = kl_divergence(target, blurred, kKlFloor);

  // KL backward, then blur backward (the blur is self-adjoint), then softmax Jacobian.
  Grid2d d_blurred(s.shape(), 0.0);
  for (std::size_t i = 0; i < d_blurred.size(); ++i)
    if (target[i] > 0.0 && blurred[i] > kKlFloor) d_blurred[i] = -target[i] / blurred[i];
  const Grid2d d_q = gaussian_blur(d_blurred, sigma);
  const double mean = dot(q.probs(), d_q);
  out.grad = Grid2d(s.shape());
  for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] = q.probs()[i] * (d_q[i] - mean);
  return out;
}

struct ObjectiveConfig {
  RewardConfig reward;
  double reg_sigma = 12.5;  // pixels
  double reg_weight = 1.0;
};

struct TotalResult {
  LossReport report;
  Grid2d grad_a;
  Grid2d grad_b;
};

// rl + reg_weight * (reg_A + reg_B); the covisibility masks double as the
// regularizer's valid-region indicators.
inline TotalResult total_loss_and_grad(const ScoreMap& sa, const ScoreMap& sb, const KeypointSet& ka,
                                       const KeypointSet& kb, const Mask& mask_a, const Mask& mask_b,
                                       const MatchPair& matches, const ObjectiveConfig& cfg) {
  DADKIT_CHECK(cfg.reg_weight >= 0.0, ErrorKind::invalid_parameter, "reg_weight must be nonnegative");
  RlResult rl = rl_loss_and_grad(sa, sb, ka, kb, mask_a, mask_b, matches.a_to_b, matches.b_to_a, cfg.reward);
  TotalResult out;
  out.report.rl_loss = rl.loss;
  out.report.mean_raw_reward = rl.mean_raw_reward;
  out.report.pair_reward = rl.pair_reward;
  out.report.num_matches = rl.num_matches;
  out.grad_a = std::move(rl.grad_a);
  out.grad_b = std::move(rl.grad_b);
  if (cfg.reg_weight > 0.0) {
    const RegResult ra = reg_loss_and_grad(sa, mask_a, cfg.reg_sigma);
    const RegResult rb = reg_loss_and_grad(sb, mask_b, cfg.reg_sigma);
    out.report.reg_loss = cfg.reg_weight * (ra.loss + rb.loss);
    for (std::size_t i = 0; i < out.grad_a.size(); ++i) out.grad_a[i] += cfg.reg_weight * ra.grad[i];
    for (std::size_t i = 0; i < out.grad_b.size(); ++i) out.grad_b[i] += cfg.reg_weight * rb.grad[i];
  }
  out.report.total = out.report.rl_loss + out.report.reg_loss;
  return out;
}

}  // namespace dadkit
