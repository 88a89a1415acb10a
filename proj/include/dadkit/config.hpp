#pragma once

// Flat key=value run configuration shared by every command. Values come from an
// optional file and are overridden by flags; unknown keys are rejected and every
// value is parsed and validated against the owning module's constraints.

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "dadkit/distill.hpp"
#include "dadkit/eval.hpp"
#include "dadkit/io.hpp"
#include "dadkit/train.hpp"

namespace dadkit {

struct KeySpec {
  const char* name;
  const char* help;
};

inline const std::vector<KeySpec>& config_keys() {
  static const std::vector<KeySpec> keys = {
      {"seed", "base random seed"},
      {"threads", "worker threads for per-pair parallelism"},
      {"mode", "scene generator: toy or scenes"},
      {"size", "image side in pixels"},
      {"num_light", "light keypoints per image"},
      {"num_dark", "dark keypoints per image"},
      {"shapes", "comma list from dot,cross,blob,corner"},
      {"background_gray", "background level"},
      {"light_value", "light structure level"},
      {"dark_value", "dark structure level"},
      {"rotation_aug", "random quarter turn of image B (0/1)"},
      {"negation_aug", "off or rgb"},
      {"perspective_jitter", "homography corner jitter (unit square)"},
      {"max_translation", "homography translation (fraction of side)"},
      {"scale_range", "homography log-scale half range"},
      {"max_rotation", "homography rotation in radians"},
      {"noise_sigma", "additive Gaussian noise"},
      {"nms_window", "NMS window side"},
      {"margin", "keypoint distance from the border"},
      {"num_pairs", "number of pairs to generate or train on"},
      {"topk", "keypoint budget"},
      {"sample_mode", "train or inference"},
      {"kde", "KDE balancing in train mode (0/1)"},
      {"kde_sigma_frac", "KDE sigma as a fraction of min(H, W)"},
      {"subpixel", "subpixel refinement in inference mode (0/1)"},
      {"subpixel_temp", "softmax temperature for refinement"},
      {"subpixel_window", "refinement window side"},
      {"tau_r", "reward distance threshold in pixels"},
      {"reward_eps", "reward normalization epsilon"},
      {"linear_reward", "linear reward decay instead of a step (0/1)"},
      {"reg_sigma", "regularizer blur sigma in pixels"},
      {"reg_weight", "regularizer weight"},
      {"match_threshold", "mutual nearest-neighbour gate in pixels (inf for none)"},
      {"widths", "comma list of hidden channel widths"},
      {"kernel", "convolution kernel side"},
      {"lr", "learning rate"},
      {"beta1", "first-moment decay"},
      {"beta2", "second-moment decay"},
      {"eps_opt", "optimizer epsilon"},
      {"weight_decay", "decoupled weight decay"},
      {"batch_size", "pairs per optimizer step"},
      {"merge_r", "generalized-mean exponent: 1, 2 or inf"},
      {"distill_steps", "student optimizer steps"},
      {"eval_threshold", "repeatability and matching distance in pixels"},
      {"ransac_threshold", "RANSAC inlier threshold in pixels"},
      {"ransac_iterations", "RANSAC iterations"},
      {"gradcheck_instances", "randomized gradient-check instances"},
      {"gradcheck_step", "finite-difference step"},
      {"gradcheck_tol", "maximum accepted relative error"},
  };
  return keys;
}

inline bool is_config_key(const std::string& key) {
  for (const KeySpec& k : config_keys())
    if (key == k.name) return true;
  return false;
}

class RunConfig {
 public:
  void set(const std::string& key, const std::string& value) {
    DADKIT_CHECK(is_config_key(key), ErrorKind::invalid_parameter, "unknown config key '" + key + "'");
    values_[key] = value;
  }

  void merge_file(const fs::path& path) {
    KeyValues kv;
    try {
      kv = read_key_values(path);
    } catch (const Error& e) {
      throw Error(e.kind() == ErrorKind::io ? ErrorKind::invalid_input : e.kind(), e.message());
    }
    for (const auto& [k, v] : kv) set(k, v);
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const KeyValues& values() const { return values_; }

  std::string str(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double real(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    const std::string& v = values_.at(key);
    if (v == "inf" || v == "infinity") return std::numeric_limits<double>::infinity();
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used == v.size() && !std::isnan(d)) return d;
    } catch (const std::exception&) {
    }
    throw Error(ErrorKind::invalid_parameter, "config key '" + key + "': not a number: '" + v + "'");
  }

  long long integer(const std::string& key, long long fallback) const {
    if (!has(key)) return fallback;
    const std::string& v = values_.at(key);
    try {
      std::size_t used = 0;
      const long long i = std::stoll(v, &used);
      if (used == v.size()) return i;
    } catch (const std::exception&) {
    }
    throw Error(ErrorKind::invalid_parameter, "config key '" + key + "': not an integer: '" + v + "'");
  }

  std::uint64_t unsigned_integer(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const std::string& v = values_.at(key);
    try {
      std::size_t used = 0;
      if (!v.empty() && v[0] != '-') {
        const unsigned long long i = std::stoull(v, &used);
        if (used == v.size()) return i;
      }
    } catch (const std::exception&) {
    }
    throw Error(ErrorKind::invalid_parameter, "config key '" + key + "': not a nonnegative integer: '" + v + "'");
  }

  bool flag(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string& v = values_.at(key);
    if (v == "1" || v == "true" || v == "on") return true;
    if (v == "0" || v == "false" || v == "off") return false;
    throw Error(ErrorKind::invalid_parameter, "config key '" + key + "': expected 0 or 1, got '" + v + "'");
  }

  int small_int(const std::string& key, int fallback) const {
    const long long v = integer(key, fallback);
    DADKIT_CHECK(v >= std::numeric_limits<int>::min() && v <= std::numeric_limits<int>::max(),
                 ErrorKind::invalid_parameter, "config key '" + key + "': out of range");
    return static_cast<int>(v);
  }

  std::uint64_t seed() const { return unsigned_integer("seed", 0); }

  int threads() const {
    const int t = small_int("threads", 1);
    DADKIT_CHECK(t >= 1, ErrorKind::invalid_parameter, "config key 'threads' must be >= 1");
    return t;
  }

  SceneConfig scene() const {
    const std::string mode = str("mode", "toy");
    DADKIT_CHECK(mode == "toy" || mode == "scenes", ErrorKind::invalid_parameter,
                 "config key 'mode' must be toy or scenes");
    SceneConfig c = mode == "toy" ? SceneConfig::toy_defaults() : SceneConfig::scene_defaults();
    c.size = small_int("size", c.size);
    c.num_light = small_int("num_light", c.num_light);
    c.num_dark = small_int("num_dark", c.num_dark);
    if (has("shapes")) {
      c.shape_palette.clear();
      for (const std::string& s : detail::split(str("shapes", ""), ',')) {
        if (s == "dot") c.shape_palette.push_back(ShapeKind::dot);
        else if (s == "cross") c.shape_palette.push_back(ShapeKind::cross);
        else if (s == "blob") c.shape_palette.push_back(ShapeKind::blob);
        else if (s == "corner") c.shape_palette.push_back(ShapeKind::corner);
        else throw Error(ErrorKind::invalid_parameter, "config key 'shapes': unknown shape '" + s + "'");
      }
    }
    c.background_gray = real("background_gray", c.background_gray);
    c.light_value = real("light_value", c.light_value);
    c.dark_value = real("dark_value", c.dark_value);
    c.rotation_aug = flag("rotation_aug", c.rotation_aug);
    const std::string neg = str("negation_aug", "off");
    DADKIT_CHECK(neg == "off" || neg == "rgb", ErrorKind::invalid_parameter,
                 "config key 'negation_aug' must be off or rgb");
    c.negation_aug = neg == "rgb" ? NegationAug::rgb : NegationAug::off;
    c.homography.perspective_jitter = real("perspective_jitter", c.homography.perspective_jitter);
    c.homography.max_translation = real("max_translation", c.homography.max_translation);
    c.homography.scale_range = real("scale_range", c.homography.scale_range);
    c.homography.max_rotation = real("max_rotation", c.homography.max_rotation);
    c.noise_sigma = real("noise_sigma", c.noise_sigma);
    c.nms_window = small_int("nms_window", c.nms_window);
    c.margin = small_int("margin", c.margin);
    with_key_context([&] { c.validate(); });
    return c;
  }

  int num_pairs(int fallback) const {
    const int n = small_int("num_pairs", fallback);
    DADKIT_CHECK(n >= 0, ErrorKind::invalid_parameter, "config key 'num_pairs' must be >= 0");
    return n;
  }

  SampleMode sample_mode(SampleMode fallback) const {
    const std::string m = str("sample_mode", fallback == SampleMode::train ? "train" : "inference");
    DADKIT_CHECK(m == "train" || m == "inference", ErrorKind::invalid_parameter,
                 "config key 'sample_mode' must be train or inference");
    return m == "train" ? SampleMode::train : SampleMode::inference;
  }

  SamplerConfig sampler(SamplerConfig c) const {
    c.k = small_int("topk", c.k);
    c.nms_window = small_int("nms_window", c.nms_window);
    c.use_kde = flag("kde", c.use_kde);
    c.kde_sigma_frac = real("kde_sigma_frac", c.kde_sigma_frac);
    c.subpixel = flag("subpixel", c.subpixel);
    c.subpixel_temp = real("subpixel_temp", c.subpixel_temp);
    c.subpixel_window = small_int("subpixel_window", c.subpixel_window);
    with_key_context([&] { c.validate(); });
    return c;
  }

  ArchConfig arch() const {
    ArchConfig a;
    if (has("widths")) {
      a.channel_widths.clear();
      for (const std::string& w : detail::split(str("widths", ""), ',')) {
        RunConfig tmp;
        tmp.values_["widths"] = w;
        a.channel_widths.push_back(tmp.small_int("widths", 0));
      }
    }
    a.kernel_size = small_int("kernel", a.kernel_size);
    a.seed = seed();
    with_key_context([&] { a.validate(); });
    return a;
  }

  OptimizerConfig optimizer() const {
    OptimizerConfig o;
    o.lr = real("lr", o.lr);
    o.beta1 = real("beta1", o.beta1);
    o.beta2 = real("beta2", o.beta2);
    o.eps = real("eps_opt", o.eps);
    o.weight_decay = real("weight_decay", o.weight_decay);
    with_key_context([&] { o.make_state(); });
    return o;
  }

  TrainConfig train() const {
    TrainConfig t;
    t.scene = scene();
    SamplerConfig base = TrainConfig::toy_sampler();
    if (t.scene.mode == SceneMode::scenes) base.k = 64;
    t.sampler = sampler(base);
    t.arch = arch();
    t.optimizer = optimizer();
    t.objective.reward.tau_r = real("tau_r", t.objective.reward.tau_r);
    t.objective.reward.eps = real("reward_eps", t.objective.reward.eps);
    t.objective.reward.linear_decay = flag("linear_reward", t.objective.reward.linear_decay);
    t.objective.reg_sigma = real("reg_sigma", t.objective.reg_sigma);
    t.objective.reg_weight = real("reg_weight", t.objective.reg_weight);
    t.match_threshold = real("match_threshold", t.match_threshold);
    t.steps = num_pairs(t.steps);
    t.batch_size = small_int("batch_size", t.batch_size);
    t.steps = (t.steps + t.batch_size - 1) / std::max(1, t.batch_size);
    t.threads = threads();
    t.seed = seed();
    with_key_context([&] { t.validate(); });
    return t;
  }

  DistillConfig distill() const {
    DistillConfig d;
    d.scene = scene();
    d.arch = arch();
    d.optimizer = optimizer();
    d.merge.r = real("merge_r", d.merge.r);
    d.steps = small_int("distill_steps", d.steps);
    d.seed = seed();
    with_key_context([&] { d.validate(); });
    return d;
  }

  double eval_threshold() const {
    const double t = real("eval_threshold", 1.0);
    DADKIT_CHECK(t > 0.0, ErrorKind::invalid_parameter, "config key 'eval_threshold' must be positive");
    return t;
  }

  RansacConfig ransac() const {
    RansacConfig r;
    r.inlier_threshold = real("ransac_threshold", r.inlier_threshold);
    r.iterations = small_int("ransac_iterations", r.iterations);
    r.seed = seed();
    DADKIT_CHECK(r.inlier_threshold > 0.0 && r.iterations >= 1, ErrorKind::invalid_parameter,
                 "config keys 'ransac_threshold' and 'ransac_iterations' must be positive");
    return r;
  }

 private:
  // Validation failures from module configs become parameter errors that list
  // the keys set explicitly, so the offending one is visible.
  template <class F>
  void with_key_context(F&& f) const {
    try {
      f();
    } catch (const Error& e) {
      std::string keys;
      for (const auto& [k, v] : values_) keys += (keys.empty() ? "" : ", ") + k + "=" + v;
      throw Error(ErrorKind::invalid_parameter,
                  e.message() + (keys.empty() ? "" : " (explicit keys: " + keys + ")"));
    }
  }

  KeyValues values_;
};

inline std::string format_real(double v) { return detail::exact(v); }

// Effective values of the scene generator, for meta.txt.
inline KeyValues describe(const SceneConfig& c) {
  std::string shapes;
  for (ShapeKind s : c.shape_palette) shapes += (shapes.empty() ? "" : ",") + std::string(to_string(s));
  return {
      {"mode", c.mode == SceneMode::toy ? "toy" : "scenes"},
      {"size", std::to_string(c.size)},
      {"num_light", std::to_string(c.num_light)},
      {"num_dark", std::to_string(c.num_dark)},
      {"shapes", shapes},
      {"background_gray", format_real(c.background_gray)},
      {"light_value", format_real(c.light_value)},
      {"dark_value", format_real(c.dark_value)},
      {"rotation_aug", c.rotation_aug ? "1" : "0"},
      {"negation_aug", c.negation_aug == NegationAug::rgb ? "rgb" : "off"},
      {"perspective_jitter", format_real(c.homography.perspective_jitter)},
      {"max_translation", format_real(c.homography.max_translation)},
      {"scale_range", format_real(c.homography.scale_range)},
      {"max_rotation", format_real(c.homography.max_rotation)},
      {"noise_sigma", format_real(c.noise_sigma)},
      {"nms_window", std::to_string(c.nms_window)},
      {"margin", std::to_string(c.margin)},
  };
}

inline KeyValues describe(const SamplerConfig& c) {
  return {
      {"topk", std::to_string(c.k)},
      {"nms_window", std::to_string(c.nms_window)},
      {"kde", c.use_kde ? "1" : "0"},
      {"kde_sigma_frac", format_real(c.kde_sigma_frac)},
      {"subpixel", c.subpixel ? "1" : "0"},
      {"subpixel_temp", format_real(c.subpixel_temp)},
      {"subpixel_window", std::to_string(c.subpixel_window)},
  };
}

inline KeyValues describe(const ArchConfig& a) {
  std::string widths;
  for (int w : a.channel_widths) widths += (widths.empty() ? "" : ",") + std::to_string(w);
  return {{"widths", widths}, {"kernel", std::to_string(a.kernel_size)}};
}

inline KeyValues describe(const OptimizerConfig& o) {
  return {{"lr", format_real(o.lr)},
          {"beta1", format_real(o.beta1)},
          {"beta2", format_real(o.beta2)},
          {"eps_opt", format_real(o.eps)},
          {"weight_decay", format_real(o.weight_decay)}};
}

inline KeyValues describe(const TrainConfig& t) {
  KeyValues kv = describe(t.scene);
  kv.merge(describe(t.sampler));
  kv.merge(describe(t.arch));
  kv.merge(describe(t.optimizer));
  kv["tau_r"] = format_real(t.objective.reward.tau_r);
  kv["reward_eps"] = format_real(t.objective.reward.eps);
  kv["linear_reward"] = t.objective.reward.linear_decay ? "1" : "0";
  kv["reg_sigma"] = format_real(t.objective.reg_sigma);
  kv["reg_weight"] = format_real(t.objective.reg_weight);
  kv["match_threshold"] = format_real(t.match_threshold);
  kv["num_pairs"] = std::to_string(t.steps * t.batch_size);
  kv["batch_size"] = std::to_string(t.batch_size);
  kv["seed"] = std::to_string(t.seed);
  return kv;
}

inline KeyValues describe(const DistillConfig& d) {
  KeyValues kv = describe(d.scene);
  kv.merge(describe(d.arch));
  kv.merge(describe(d.optimizer));
  kv["merge_r"] = format_real(d.merge.r);
  kv["distill_steps"] = std::to_string(d.steps);
  kv["seed"] = std::to_string(d.seed);
  return kv;
}

}  // namespace dadkit
