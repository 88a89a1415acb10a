#pragma once

// Randomized finite-difference check of the analytic parameter gradients of the
// RL loss, the regularizer, the distillation loss and the full objective.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dadkit/distill.hpp"
#include "dadkit/io.hpp"
#include "dadkit/geometry.hpp"
#include "dadkit/model.hpp"
#include "dadkit/objective.hpp"
#include "dadkit/sampler.hpp"

namespace dadkit {

struct GradcheckConfig {
  int instances = 50;
  double step = 1e-4;
  double tolerance = 1e-3;
  double abs_floor = 1e-8;
  int min_size = 12;
  int max_size = 16;
  std::uint64_t seed = 0;

  void validate() const {
    DADKIT_CHECK(instances >= 1 && step > 0.0 && tolerance > 0.0 && abs_floor > 0.0, ErrorKind::invalid_parameter,
                 "gradcheck instances, step, tolerance and floor must be positive");
    DADKIT_CHECK(min_size >= 8 && max_size >= min_size, ErrorKind::invalid_parameter, "gradcheck sizes are invalid");
  }
};

enum class LossTerm { rl, reg, distill, full };

inline const char* to_string(LossTerm t) {
  switch (t) {
    case LossTerm::rl: return "rl";
    case LossTerm::reg: return "reg";
    case LossTerm::distill: return "distill";
    case LossTerm::full: return "full";
  }
  return "?";
}

inline constexpr LossTerm kLossTerms[] = {LossTerm::rl, LossTerm::reg, LossTerm::distill, LossTerm::full};

// One randomized problem. Keypoints and matches are sampled once from the
// unperturbed detector and then held fixed, as in training.
struct GradcheckInstance {
  DetectorParams params;
  Grid2d image_a, image_b;
  Mask mask_a, mask_b;
  KeypointSet ka, kb;
  MatchPair matches;
  ProbMap distill_target;
  ObjectiveConfig objective;
};

// Differences at or below the absolute floor count as agreement; above it the
// error is relative to the larger magnitude.
inline double relative_error(double analytic, double numeric, double floor) {
  const double diff = std::abs(analytic - numeric);
  if (diff <= floor) return 0.0;
  return diff / std::max(std::abs(analytic), std::abs(numeric));
}

// The stricter convention that divides by max(|a|, |n|, floor). For gradients
// that vanish analytically it measures central-difference round-off, about
// ulp(loss) / (2 step).
inline double floored_denominator_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

namespace detail {

inline Mask random_mask(std::mt19937_64& rng, Shape s) {
  // An axis-aligned window covering at least half of each side.
  std::uniform_int_distribution<int> y0(0, s.height / 4), x0(0, s.width / 4);
  const int top = y0(rng), left = x0(rng);
  const int bottom = s.height - std::uniform_int_distribution<int>(0, s.height / 4)(rng);
  const int right = s.width - std::uniform_int_distribution<int>(0, s.width / 4)(rng);
  Mask m(s);
  for (int y = top; y < bottom; ++y)
    for (int x = left; x < right; ++x) m.set(y, x, true);
  return m;
}

}  // namespace detail

inline GradcheckInstance make_gradcheck_instance(std::mt19937_64& rng, const GradcheckConfig& cfg) {
  GradcheckInstance inst;
  const int size = std::uniform_int_distribution<int>(cfg.min_size, cfg.max_size)(rng);
  const int layers = std::uniform_int_distribution<int>(2, 3)(rng);
  ArchConfig arch;
  arch.kernel_size = 3;
  arch.channel_widths.clear();
  for (int i = 0; i + 1 < layers; ++i) arch.channel_widths.push_back(std::uniform_int_distribution<int>(2, 4)(rng));
  arch.seed = rng();
  inst.params = init_params(arch);
  // Nonzero biases so their gradients are exercised away from zero.
  std::uniform_real_distribution<double> bias(-0.1, 0.1);
  for (Layer& l : inst.params.layers)
    for (double& b : l.bias) b = bias(rng);

  std::uniform_real_distribution<double> pixel(0.0, 1.0);
  inst.image_a = Grid2d(size, size);
  inst.image_b = Grid2d(size, size);
  for (double& v : inst.image_a) v = pixel(rng);
  for (double& v : inst.image_b) v = pixel(rng);
  inst.mask_a = detail::random_mask(rng, inst.image_a.shape());
  inst.mask_b = detail::random_mask(rng, inst.image_b.shape());

  SamplerConfig sc;
  sc.k = 8;
  sc.subpixel = false;
  const ScoreMap sa = forward(inst.params, inst.image_a).scoremap;
  const ScoreMap sb = forward(inst.params, inst.image_b).scoremap;
  auto inside_mask = [](KeypointSet k, const Mask& m) {
    std::erase_if(k.keypoints, [&](const Keypoint& kp) { return !m(int(kp.y), int(kp.x)); });
    return k;
  };
  inst.ka = inside_mask(sample_keypoints(sa, sc, SampleMode::train), inst.mask_a);
  inst.kb = inside_mask(sample_keypoints(sb, sc, SampleMode::train), inst.mask_b);
  // A random translation gives a mix of rewarded and unrewarded matches.
  std::uniform_real_distribution<double> shift(-2.0, 2.0);
  const auto t = HomographyTransfer::translation(shift(rng), shift(rng));
  inst.matches = match_mutual_nn(inst.ka, inst.kb, t, std::numeric_limits<double>::infinity());
  inst.objective.reward.tau_r = 2.0;
  inst.objective.reg_sigma = std::uniform_real_distribution<double>(1.0, 3.0)(rng);
  inst.objective.reg_weight = std::uniform_real_distribution<double>(0.5, 2.0)(rng);

  Grid2d target(size, size);
  for (double& v : target) v = std::exp(3.0 * pixel(rng));
  inst.distill_target = ProbMap::normalize(std::move(target));
  return inst;
}

struct TermValue {
  double value = 0.0;
  DetectorParams grads;
};

// Loss and analytic gradient of one term for the instance's fixed sample.
inline TermValue evaluate_term(const GradcheckInstance& inst, const DetectorParams& params, LossTerm term,
                               bool with_grad) {
  const ForwardResult fa = forward(params, inst.image_a);
  const ForwardResult fb = forward(params, inst.image_b);
  TermValue out;
  Grid2d ga(fa.scoremap.shape(), 0.0), gb(fb.scoremap.shape(), 0.0);
  switch (term) {
    case LossTerm::rl: {
      const RlResult r = rl_loss_and_grad(fa.scoremap, fb.scoremap, inst.ka, inst.kb, inst.mask_a, inst.mask_b,
                                          inst.matches.a_to_b, inst.matches.b_to_a, inst.objective.reward);
      out.value = r.loss;
      ga = r.grad_a;
      gb = r.grad_b;
      break;
    }
    case LossTerm::reg: {
      const RegResult ra = reg_loss_and_grad(fa.scoremap, inst.mask_a, inst.objective.reg_sigma);
      const RegResult rb = reg_loss_and_grad(fb.scoremap, inst.mask_b, inst.objective.reg_sigma);
      out.value = ra.loss + rb.loss;
      ga = ra.grad;
      gb = rb.grad;
      break;
    }
    case LossTerm::distill: {
      const DistillResult da = distill_loss_and_grad(inst.distill_target, fa.scoremap);
      out.value = da.loss;
      ga = da.grad;
      break;
    }
    case LossTerm::full: {
      const TotalResult t = total_loss_and_grad(fa.scoremap, fb.scoremap, inst.ka, inst.kb, inst.mask_a, inst.mask_b,
                                                inst.matches, inst.objective);
      out.value = t.report.total;
      ga = t.grad_a;
      gb = t.grad_b;
      break;
    }
  }
  if (with_grad) {
    out.grads = backward(params, fa.cache, ga);
    add_scaled(out.grads, backward(params, fb.cache, gb));
  }
  return out;
}

struct GradcheckReport {
  double max_rel_error[4] = {0, 0, 0, 0};  // indexed by LossTerm
  double max_rel_error_all = 0.0;
  double max_floored_denominator_error = 0.0;
  double max_abs_error = 0.0;
  double max_rel_error_large = 0.0;  // over entries with max(|a|, |n|) >= 1e-5
  std::size_t parameters_checked = 0;
  std::size_t parameters_skipped = 0;  // a ReLU changed state within +-step
  int instances = 0;
  std::string worst;                   // description of the worst entry

  bool passed(double tolerance) const { return max_rel_error_all < tolerance; }
};

namespace detail {

inline bool same_relu_pattern(const ActivationCache& a, const ActivationCache& b) {
  for (std::size_t l = 0; l < a.pre_activations.size(); ++l)
    for (std::size_t j = 0; j < a.pre_activations[l].data.size(); ++j)
      if ((a.pre_activations[l].data[j] > 0.0) != (b.pre_activations[l].data[j] > 0.0)) return false;
  return true;
}

}  // namespace detail

// Central differences for every parameter of every instance and loss term.
// Parameters whose perturbation flips a ReLU are skipped: the loss has a kink
// inside the difference interval there and the quotient is not a derivative.
inline GradcheckReport run_gradcheck(const GradcheckConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  GradcheckReport rep;
  for (int n = 0; n < cfg.instances; ++n) {
    const GradcheckInstance inst = make_gradcheck_instance(rng, cfg);
    const ActivationCache base_a = forward(inst.params, inst.image_a).cache;
    const ActivationCache base_b = forward(inst.params, inst.image_b).cache;
    TermValue analytic[4];
    for (LossTerm t : kLossTerms) analytic[int(t)] = evaluate_term(inst, inst.params, t, true);

    DetectorParams probe = inst.params;
    for (std::size_t li = 0; li < probe.layers.size(); ++li) {
      for (int which = 0; which < 2; ++which) {
        std::vector<double>& tensor = which == 0 ? probe.layers[li].kernel : probe.layers[li].bias;
        for (std::size_t j = 0; j < tensor.size(); ++j) {
          const double saved = tensor[j];
          tensor[j] = saved + cfg.step;
          const bool ok_plus = detail::same_relu_pattern(base_a, forward(probe, inst.image_a).cache) &&
                               detail::same_relu_pattern(base_b, forward(probe, inst.image_b).cache);
          double plus[4], minus[4];
          for (LossTerm t : kLossTerms) plus[int(t)] = evaluate_term(inst, probe, t, false).value;
          tensor[j] = saved - cfg.step;
          const bool ok_minus = detail::same_relu_pattern(base_a, forward(probe, inst.image_a).cache) &&
                                detail::same_relu_pattern(base_b, forward(probe, inst.image_b).cache);
          for (LossTerm t : kLossTerms) minus[int(t)] = evaluate_term(inst, probe, t, false).value;
          tensor[j] = saved;
          if (!ok_plus || !ok_minus) {
            ++rep.parameters_skipped;
            continue;
          }
          ++rep.parameters_checked;
          for (LossTerm t : kLossTerms) {
            const Layer& gl = analytic[int(t)].grads.layers[li];
            const double a = (which == 0 ? gl.kernel : gl.bias)[j];
            const double num = (plus[int(t)] - minus[int(t)]) / (2.0 * cfg.step);
            const double rel = relative_error(a, num, cfg.abs_floor);
            rep.max_abs_error = std::max(rep.max_abs_error, std::abs(a - num));
            if (std::max(std::abs(a), std::abs(num)) >= 1e-5)
              rep.max_rel_error_large =
                  std::max(rep.max_rel_error_large, std::abs(a - num) / std::max(std::abs(a), std::abs(num)));
            rep.max_floored_denominator_error =
                std::max(rep.max_floored_denominator_error, floored_denominator_error(a, num, cfg.abs_floor));
            rep.max_rel_error[int(t)] = std::max(rep.max_rel_error[int(t)], rel);
            if (rel > rep.max_rel_error_all) {
              rep.max_rel_error_all = rel;
              rep.worst = std::string(to_string(t)) + " instance " + std::to_string(n) + " layer " +
                          std::to_string(li) + (which == 0 ? " kernel[" : " bias[") + std::to_string(j) +
                          "] analytic " + detail::exact(a) + " numeric " + detail::exact(num);
            }
          }
        }
      }
    }
    ++rep.instances;
  }
  return rep;
}

}  // namespace dadkit
