#pragma once

// Training drivers: the reinforcement-learning loop over synthetic pairs,
// pointwise-maximum distillation of two teachers into a student, and the
// polarity statistics used to characterise trained detectors.

#include <cstdint>
#include <functional>
#include <future>
#include <limits>
#include <vector>

#include "dadkit/distill.hpp"
#include "dadkit/model.hpp"
#include "dadkit/objective.hpp"
#include "dadkit/synth.hpp"

namespace dadkit {

struct OptimizerConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;

  OptState make_state() const {
    OptState s;
    s.lr = lr;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.eps_opt = eps;
    s.weight_decay = weight_decay;
    s.validate();
    return s;
  }
};

struct TrainConfig {
  ArchConfig arch;
  SceneConfig scene = SceneConfig::toy_defaults();
  SamplerConfig sampler = toy_sampler();
  ObjectiveConfig objective;
  OptimizerConfig optimizer;
  double match_threshold = std::numeric_limits<double>::infinity();
  int steps = 2000;
  int batch_size = 1;
  int threads = 1;
  std::uint64_t seed = 0;

  static SamplerConfig toy_sampler() {
    SamplerConfig s;
    s.k = 10;
    s.subpixel = false;
    return s;
  }

  void validate() const {
    arch.validate();
    scene.validate();
    sampler.validate();
    objective.reward.validate();
    optimizer.make_state();
    DADKIT_CHECK(steps >= 0, ErrorKind::invalid_parameter, "steps must be nonnegative");
    DADKIT_CHECK(batch_size >= 1, ErrorKind::invalid_parameter, "batch_size must be >= 1");
    DADKIT_CHECK(threads >= 1, ErrorKind::invalid_parameter, "threads must be >= 1");
    DADKIT_CHECK(match_threshold > 0.0, ErrorKind::invalid_parameter, "match_threshold must be positive");
    DADKIT_CHECK(objective.reg_sigma > 0.0 && objective.reg_weight >= 0.0, ErrorKind::invalid_parameter,
                 "reg_sigma must be positive and reg_weight nonnegative");
  }
};

struct PairGradient {
  LossReport report;
  DetectorParams grads;
};

// Loss and parameter gradient for one pair. Keypoint selection is treated as a
// fixed sample: gradients reach the weights only through the log-probabilities
// at the matched keypoints and through the regularizer.
// Keypoints whose pixel lies inside `mask`; the rest take no part in matching.
inline KeypointSet restrict_to_mask(const KeypointSet& kps, const Mask& mask) {
  KeypointSet out{{}, kps.source_shape};
  for (const Keypoint& k : kps.keypoints) {
    const int x = static_cast<int>(std::lround(k.x)), y = static_cast<int>(std::lround(k.y));
    if (mask.shape().contains(y, x) && mask(y, x)) out.keypoints.push_back(k);
  }
  return out;
}

inline PairGradient pair_gradient(const DetectorParams& params, const PairSample& pair, const TrainConfig& cfg) {
  const ForwardResult fa = forward(params, pair.image_a);
  const ForwardResult fb = forward(params, pair.image_b);
  const KeypointSet ka = restrict_to_mask(sample_keypoints(fa.scoremap, cfg.sampler, SampleMode::train), pair.mask_a);
  const KeypointSet kb = restrict_to_mask(sample_keypoints(fb.scoremap, cfg.sampler, SampleMode::train), pair.mask_b);
  const MatchPair matches =
      pair.with_transfer([&](const auto& t) { return match_mutual_nn(ka, kb, t, cfg.match_threshold); });
  const TotalResult loss =
      total_loss_and_grad(fa.scoremap, fb.scoremap, ka, kb, pair.mask_a, pair.mask_b, matches, cfg.objective);
  PairGradient out;
  out.report = loss.report;
  out.grads = backward(params, fa.cache, loss.grad_a);
  add_scaled(out.grads, backward(params, fb.cache, loss.grad_b));
  return out;
}

struct TrainResult {
  DetectorParams params;
  std::vector<LossReport> log;  // one entry per optimizer step
};

using PairSource = std::function<PairSample(std::uint64_t index)>;
using StepCallback = std::function<void(int step, const LossReport&)>;

inline PairSource synthetic_source(const TrainConfig& cfg) {
  return [scene = cfg.scene, seed = cfg.seed](std::uint64_t i) { return gen_pair_indexed(seed, i, scene); };
}

// Per step: a batch of pairs, per-pair gradients (concurrently when threads > 1),
// summed in pair order, then one AdamW update.
inline TrainResult train_loop(const PairSource& data, const TrainConfig& cfg, const StepCallback& on_step = {}) {
  cfg.validate();
  TrainResult out;
  ArchConfig arch = cfg.arch;
  arch.seed = cfg.seed;
  out.params = init_params(arch);
  OptState state = cfg.optimizer.make_state();
  std::uint64_t next_pair = 0;
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<PairGradient> parts(cfg.batch_size);
    if (cfg.threads > 1 && cfg.batch_size > 1) {
      std::vector<std::future<PairGradient>> jobs;
      for (int b = 0; b < cfg.batch_size; ++b) {
        const std::uint64_t idx = next_pair + b;
        jobs.push_back(std::async(std::launch::async, [&, idx] { return pair_gradient(out.params, data(idx), cfg); }));
      }
      for (int b = 0; b < cfg.batch_size; ++b) parts[b] = jobs[b].get();
    } else {
      for (int b = 0; b < cfg.batch_size; ++b) parts[b] = pair_gradient(out.params, data(next_pair + b), cfg);
    }
    next_pair += cfg.batch_size;

    DetectorParams grads = out.params.zeros_like();
    LossReport report;
    for (const PairGradient& part : parts) {
      add_scaled(grads, part.grads);
      report.rl_loss += part.report.rl_loss;
      report.reg_loss += part.report.reg_loss;
      report.total += part.report.total;
      report.mean_raw_reward += part.report.mean_raw_reward / cfg.batch_size;
      report.pair_reward += part.report.pair_reward / cfg.batch_size;
      report.num_matches += part.report.num_matches;
    }
    optimizer_step(out.params, grads, state);
    out.log.push_back(report);
    if (on_step) on_step(step, report);
  }
  return out;
}

inline TrainResult train_loop(const TrainConfig& cfg, const StepCallback& on_step = {}) {
  return train_loop(synthetic_source(cfg), cfg, on_step);
}

struct DistillConfig {
  ArchConfig arch;
  SceneConfig scene = SceneConfig::toy_defaults();
  MergeConfig merge;
  OptimizerConfig optimizer;
  int steps = 600;
  std::uint64_t seed = 0;

  void validate() const {
    arch.validate();
    scene.validate();
    merge.validate();
    optimizer.make_state();
    DADKIT_CHECK(steps >= 0, ErrorKind::invalid_parameter, "steps must be nonnegative");
  }
};

inline ProbMap detector_distribution(const DetectorParams& params, const Grid2d& image) {
  return softmax_2d(forward(params, image).scoremap);
}

struct DistillStep {
  double loss = 0.0;
};

// Trains a fresh student on KL(p_r || p_student), with p_r the generalized mean
// of the two teachers' distributions rendered on the fly. Each synthetic pair
// contributes both of its images as one step each.
inline DetectorParams distill_train(const DetectorParams& light, const DetectorParams& dark, const DistillConfig& cfg,
                                    const std::function<void(int, double)>& on_step = {}) {
  cfg.validate();
  ArchConfig arch = cfg.arch;
  arch.seed = cfg.seed;
  DetectorParams student = init_params(arch);
  OptState state = cfg.optimizer.make_state();
  for (int step = 0; step < cfg.steps; ++step) {
    const PairSample pair = gen_pair_indexed(cfg.seed, static_cast<std::uint64_t>(step / 2), cfg.scene);
    const Grid2d& image = step % 2 == 0 ? pair.image_a : pair.image_b;
    const ProbMap target =
        distill_target(detector_distribution(light, image), detector_distribution(dark, image), cfg.merge.r);
    const ForwardResult fs = forward(student, image);
    const DistillResult d = distill_loss_and_grad(target, fs.scoremap);
    optimizer_step(student, backward(student, fs.cache, d.grad), state);
    if (on_step) on_step(step, d.loss);
  }
  return student;
}

struct PolarityStats {
  double light_recall = 0.0;  // fraction of light ground-truth keypoints detected
  double dark_recall = 0.0;
  double single_polarity = 0.0;  // mean over images of max(#light, #dark) / #keypoints
  double light_share = 0.0;      // fraction of detections that land on light structures
  int images = 0;
};

// Runs inference-mode top-`budget` detection on image A of held-out pairs and
// assigns each detection to the nearest ground-truth keypoint within `radius`.
inline PolarityStats polarity_stats(const DetectorParams& params, const SceneConfig& scene, std::uint64_t seed,
                                    int images, int budget, double radius = kToyAssignRadius) {
  SamplerConfig sc;
  sc.k = budget;
  sc.subpixel = false;
  PolarityStats st;
  double light_hit = 0, light_total = 0, dark_hit = 0, dark_total = 0, detections = 0, light_detections = 0;
  for (int i = 0; i < images; ++i) {
    const PairSample pair = gen_pair_indexed(seed, static_cast<std::uint64_t>(i), scene);
    const KeypointSet kps = sample_keypoints(forward(params, pair.image_a).scoremap, sc, SampleMode::inference);
    std::vector<char> hit(pair.gt_a.size(), 0);
    int n_light = 0, n_dark = 0;
    for (const Keypoint& kp : kps.keypoints) {
      int best = -1;
      double best_d = radius;
      for (std::size_t g = 0; g < pair.gt_a.size(); ++g) {
        const double d = distance({kp.x, kp.y}, {pair.gt_a[g].x, pair.gt_a[g].y});
        if (d <= best_d && (best < 0 || d < best_d)) {
          best = static_cast<int>(g);
          best_d = d;
        }
      }
      if (best < 0) continue;
      hit[best] = 1;
      (pair.polarity_a[best] == Polarity::light ? n_light : n_dark)++;
    }
    for (std::size_t g = 0; g < pair.gt_a.size(); ++g) {
      if (pair.polarity_a[g] == Polarity::light) {
        light_total += 1;
        light_hit += hit[g];
      } else {
        dark_total += 1;
        dark_hit += hit[g];
      }
    }
    if (!kps.empty()) st.single_polarity += static_cast<double>(std::max(n_light, n_dark)) / kps.size();
    detections += kps.size();
    light_detections += n_light;
    ++st.images;
  }
  st.light_recall = light_total > 0 ? light_hit / light_total : 0.0;
  st.dark_recall = dark_total > 0 ? dark_hit / dark_total : 0.0;
  st.single_polarity = images > 0 ? st.single_polarity / images : 0.0;
  st.light_share = detections > 0 ? light_detections / detections : 0.0;
  return st;
}

}  // namespace dadkit
