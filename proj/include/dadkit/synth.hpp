#pragma once

// Synthetic image pairs with exact ground truth: the light/dark dot toy model
// and rendered planar scenes warped by random homographies, with optional
// quarter-turn rotation and negation augmentation.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dadkit/geometry.hpp"

namespace dadkit {

enum class Polarity : std::uint8_t { light, dark };

inline const char* to_string(Polarity p) { return p == Polarity::light ? "light" : "dark"; }
inline Polarity flipped(Polarity p) { return p == Polarity::light ? Polarity::dark : Polarity::light; }

enum class ShapeKind : std::uint8_t { dot, cross, blob, corner };

inline const char* to_string(ShapeKind s) {
  switch (s) {
    case ShapeKind::dot: return "dot";
    case ShapeKind::cross: return "cross";
    case ShapeKind::blob: return "blob";
    case ShapeKind::corner: return "corner";
  }
  return "dot";
}

enum class SceneMode { toy, scenes };
enum class NegationAug { off, rgb };

// Parameters of a random homography, expressed on the unit square.
struct HomographyMagnitude {
  double perspective_jitter = 0.0;
  double max_translation = 0.0;  // fraction of the image side
  double scale_range = 0.0;      // log-scale half range
  double max_rotation = 0.0;     // radians

  void validate() const {
    DADKIT_CHECK(perspective_jitter >= 0.0 && max_translation >= 0.0 && scale_range >= 0.0 && max_rotation >= 0.0,
                 ErrorKind::invalid_parameter, "homography magnitudes must be nonnegative");
  }
};

struct SceneConfig {
  SceneMode mode = SceneMode::toy;
  int size = 48;
  int num_light = 10;
  int num_dark = 10;
  std::vector<ShapeKind> shape_palette{ShapeKind::dot};
  double background_gray = 0.5;
  double light_value = 1.0;
  double dark_value = 0.0;
  bool rotation_aug = false;
  NegationAug negation_aug = NegationAug::off;
  HomographyMagnitude homography{};
  double noise_sigma = 0.0;
  int nms_window = 3;
  int margin = 3;

  // Centres are kept at least this far apart.
  double min_separation() const {
    const double extent = mode == SceneMode::toy ? 0.0 : 2.0 * structure_radius() + 2.0;
    return std::max(2.0 * nms_window, extent);
  }
  double structure_radius() const { return mode == SceneMode::toy ? 0.5 : 4.0; }

  void validate() const {
    DADKIT_CHECK(num_light >= 0 && num_dark >= 0 && num_light + num_dark >= 1, ErrorKind::invalid_parameter,
                 "scene needs at least one keypoint");
    DADKIT_CHECK(size >= 8, ErrorKind::invalid_parameter, "scene size must be >= 8");
    DADKIT_CHECK(!shape_palette.empty(), ErrorKind::invalid_parameter, "shape palette is empty");
    DADKIT_CHECK(background_gray > 0.15 && background_gray < 0.85, ErrorKind::invalid_parameter,
                 "background gray must lie strictly between the dark and light levels");
    DADKIT_CHECK(light_value >= 0.85 && light_value <= 1.0 && dark_value >= 0.0 && dark_value <= 0.15,
                 ErrorKind::invalid_parameter, "light level must be >= 0.85 and dark level <= 0.15");
    DADKIT_CHECK(noise_sigma >= 0.0, ErrorKind::invalid_parameter, "noise sigma must be nonnegative");
    DADKIT_CHECK(nms_window >= 3 && nms_window % 2 == 1, ErrorKind::invalid_parameter, "nms_window must be odd >= 3");
    DADKIT_CHECK(margin >= 0 && 2 * margin < size, ErrorKind::invalid_parameter, "margin too large for scene size");
    homography.validate();
  }

  static SceneConfig toy_defaults() { return SceneConfig{}; }

  static SceneConfig scene_defaults() {
    SceneConfig c;
    c.mode = SceneMode::scenes;
    c.size = 64;
    c.num_light = 8;
    c.num_dark = 8;
    c.shape_palette = {ShapeKind::dot, ShapeKind::cross, ShapeKind::blob, ShapeKind::corner};
    c.rotation_aug = true;
    c.homography = {0.1, 0.08, 0.15, 0.3};
    c.noise_sigma = 0.01;
    c.margin = 6;
    return c;
  }
};

// Piecewise translation that carries the neighbourhood of each source anchor onto
// its destination anchor. Stands in for geometric transfer in the toy model,
// where correspondence is by identity label only.
class LabelTransfer {
 public:
  LabelTransfer() = default;
  LabelTransfer(std::vector<Point> src, std::vector<Point> dst, double radius)
      : src_(std::move(src)), dst_(std::move(dst)), radius_(radius) {
    DADKIT_CHECK(src_.size() == dst_.size(), ErrorKind::invalid_input, "label transfer anchor count mismatch");
  }

  std::optional<Point> apply(Point p) const {
    int best = -1;
    double best_d = radius_;
    for (std::size_t i = 0; i < src_.size(); ++i) {
      const double d = distance(p, src_[i]);
      if (d <= best_d && (best < 0 || d < best_d)) {
        best_d = d;
        best = static_cast<int>(i);
      }
    }
    if (best < 0) return std::nullopt;
    return Point{p.x + dst_[best].x - src_[best].x, p.y + dst_[best].y - src_[best].y};
  }

  LabelTransfer inverse() const { return LabelTransfer(dst_, src_, radius_); }

  // Index of the anchor that claims `p`, or -1.
  int anchor_of(Point p) const {
    int best = -1;
    double best_d = radius_;
    for (std::size_t i = 0; i < src_.size(); ++i) {
      const double d = distance(p, src_[i]);
      if (d <= best_d && (best < 0 || d < best_d)) {
        best_d = d;
        best = static_cast<int>(i);
      }
    }
    return best;
  }

 private:
  std::vector<Point> src_;
  std::vector<Point> dst_;
  double radius_ = 2.0;
};

inline constexpr double kToyAssignRadius = 2.0;

struct PairSample {
  Grid2d image_a;
  Grid2d image_b;
  bool toy = false;
  HomographyTransfer transfer;  // A -> B (identity for the toy model)
  Mask mask_a;
  Mask mask_b;
  KeypointSet gt_a;
  KeypointSet gt_b;
  std::vector<Polarity> polarity_a;
  std::vector<Polarity> polarity_b;
  std::vector<int> gt_b_source;  // index into gt_a for each gt_b entry
  std::uint64_t seed = 0;
  int rotation_k = 0;
  bool negated_b = false;

  LabelTransfer label_transfer(double radius = kToyAssignRadius) const {
    std::vector<Point> src, dst;
    for (std::size_t j = 0; j < gt_b.size(); ++j) {
      const Keypoint& a = gt_a[gt_b_source[j]];
      src.push_back({a.x, a.y});
      dst.push_back({gt_b[j].x, gt_b[j].y});
    }
    return LabelTransfer(std::move(src), std::move(dst), radius);
  }

  // Calls f with the A->B transfer appropriate for this pair.
  template <typename F>
  decltype(auto) with_transfer(F&& f) const {
    if (toy) return f(label_transfer());
    return f(transfer);
  }
};

namespace detail {

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Rejection-sampled centres, pairwise at least `sep` apart.
inline std::vector<Point> place_points(std::mt19937_64& rng, int count, int size, int margin, double sep) {
  std::vector<Point> pts;
  std::uniform_int_distribution<int> coord(margin, size - 1 - margin);
  for (int n = 0; n < count; ++n) {
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      const Point p{double(coord(rng)), double(coord(rng))};
      bool ok = true;
      for (const Point& q : pts) ok = ok && distance(p, q) >= sep;
      if (ok) {
        pts.push_back(p);
        placed = true;
      }
    }
    DADKIT_CHECK(placed, ErrorKind::placement,
                 "could not place keypoint " + std::to_string(n) + " without overlap after 1000 tries");
  }
  return pts;
}

inline void add_noise(Grid2d& img, std::mt19937_64& rng, double sigma) {
  if (sigma <= 0.0) return;
  std::normal_distribution<double> noise(0.0, sigma);
  for (double& v : img) v = std::clamp(v + noise(rng), 0.0, 1.0);
}

inline Mat3 quarter_turn_matrix(int k, int size) {
  const double s = size - 1;
  switch (((k % 4) + 4) % 4) {
    case 1: return {0, 1, 0, -1, 0, s, 0, 0, 1};
    case 2: return {-1, 0, s, 0, -1, s, 0, 0, 1};
    case 3: return {0, -1, s, 1, 0, 0, 0, 0, 1};
  }
  return {1, 0, 0, 0, 1, 0, 0, 0, 1};
}

}  // namespace detail

// Dot positions for one toy image: light labels first, then dark.
struct ToyLayout {
  std::vector<Point> centres;
  std::vector<Polarity> polarity;
};

inline ToyLayout gen_toy_layout(std::mt19937_64& rng, const SceneConfig& cfg) {
  ToyLayout layout;
  layout.centres =
      detail::place_points(rng, cfg.num_light + cfg.num_dark, cfg.size, cfg.margin, cfg.min_separation());
  layout.polarity.assign(cfg.num_light, Polarity::light);
  layout.polarity.insert(layout.polarity.end(), cfg.num_dark, Polarity::dark);
  return layout;
}

// Light and dark single-pixel dots on gray; image B is an independent layout whose
// dot i corresponds to dot i of image A.
inline PairSample gen_toy_pair(std::mt19937_64& rng, const SceneConfig& cfg) {
  cfg.validate();
  PairSample s;
  s.toy = true;
  const ToyLayout la = gen_toy_layout(rng, cfg);
  const ToyLayout lb = gen_toy_layout(rng, cfg);
  auto render = [&](const ToyLayout& l) {
    Grid2d img(cfg.size, cfg.size, cfg.background_gray);
    for (std::size_t i = 0; i < l.centres.size(); ++i)
      img(int(l.centres[i].y), int(l.centres[i].x)) =
          l.polarity[i] == Polarity::light ? cfg.light_value : cfg.dark_value;
    return img;
  };
  s.image_a = render(la);
  s.image_b = render(lb);
  detail::add_noise(s.image_a, rng, cfg.noise_sigma);
  detail::add_noise(s.image_b, rng, cfg.noise_sigma);
  s.gt_a.source_shape = s.gt_b.source_shape = s.image_a.shape();
  for (std::size_t i = 0; i < la.centres.size(); ++i) {
    s.gt_a.keypoints.push_back({la.centres[i].x, la.centres[i].y, 1.0});
    s.gt_b.keypoints.push_back({lb.centres[i].x, lb.centres[i].y, 1.0});
    s.gt_b_source.push_back(static_cast<int>(i));
  }
  s.polarity_a = la.polarity;
  s.polarity_b = lb.polarity;
  if (cfg.negation_aug == NegationAug::rgb) {
    for (double& v : s.image_b) v = 1.0 - v;
    for (Polarity& p : s.polarity_b) p = flipped(p);
    s.negated_b = true;
  }
  s.mask_a = Mask(s.image_a.shape(), true);
  s.mask_b = Mask(s.image_b.shape(), true);
  return s;
}

// Random homography on the unit square: translate . rotate . scale . perspective,
// about the centre. Rejects draws that keep less than 40% of the square covisible.
inline HomographyTransfer sample_homography(std::mt19937_64& rng, const HomographyMagnitude& m) {
  m.validate();
  auto draw = [&](double half) { return half > 0.0 ? detail::uniform(rng, -half, half) : 0.0; };
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const double scale = std::exp(draw(m.scale_range));
    const double theta = draw(m.max_rotation);
    const double tx = draw(m.max_translation), ty = draw(m.max_translation);
    const double px = draw(m.perspective_jitter), py = draw(m.perspective_jitter);
    const double c = std::cos(theta) * scale, s = std::sin(theta) * scale;
    const Mat3 centre_out{1, 0, 0.5 + tx, 0, 1, 0.5 + ty, 0, 0, 1};
    const Mat3 rot_scale{c, -s, 0, s, c, 0, 0, 0, 1};
    const Mat3 persp{1, 0, 0, 0, 1, 0, px, py, 1};
    const Mat3 centre_in{1, 0, -0.5, 0, 1, -0.5, 0, 0, 1};
    const Mat3 h = mat3_multiply(centre_out, mat3_multiply(rot_scale, mat3_multiply(persp, centre_in)));
    if (std::abs(mat3_determinant(h)) < 1e-9) continue;
    const HomographyTransfer t(h);

    int inside_count = 0, total = 0;
    bool finite = true;
    for (int i = 0; i <= 20; ++i) {
      for (int j = 0; j <= 20; ++j) {
        const Point p{i / 20.0, j / 20.0};
        const double w = t(2, 0) * p.x + t(2, 1) * p.y + t(2, 2);
        if (w <= 1e-6) finite = false;
        const auto q = t.apply(p);
        ++total;
        if (q && q->x >= 0.0 && q->x <= 1.0 && q->y >= 0.0 && q->y <= 1.0) ++inside_count;
      }
    }
    if (finite && inside_count >= 0.4 * total) return t;
  }
  throw Error(ErrorKind::degenerate_transfer, "homography sampler exceeded its rejection cap");
}

// Conjugates a unit-square homography into pixel coordinates of a size x size image.
inline HomographyTransfer to_pixel_frame(const HomographyTransfer& unit, int size) {
  const double s = size - 1;
  const Mat3 d{s, 0, 0, 0, s, 0, 0, 0, 1};
  const Mat3 d_inv{1 / s, 0, 0, 0, 1 / s, 0, 0, 0, 1};
  return HomographyTransfer(mat3_multiply(d, mat3_multiply(unit.matrix(), d_inv)));
}

// Analytic planar scene, evaluated at continuous coordinates of image A.
class PlanarScene {
 public:
  struct Structure {
    Point centre;
    Polarity polarity = Polarity::light;
    ShapeKind kind = ShapeKind::dot;
    double angle = 0.0;
  };

  PlanarScene(std::mt19937_64& rng, const SceneConfig& cfg) : cfg_(cfg) {
    const std::vector<Point> centres =
        detail::place_points(rng, cfg.num_light + cfg.num_dark, cfg.size, cfg.margin, cfg.min_separation());
    std::uniform_int_distribution<std::size_t> pick(0, cfg.shape_palette.size() - 1);
    for (std::size_t i = 0; i < centres.size(); ++i) {
      Structure st;
      st.centre = centres[i];
      st.polarity = static_cast<int>(i) < cfg.num_light ? Polarity::light : Polarity::dark;
      st.kind = cfg.shape_palette[pick(rng)];
      st.angle = detail::uniform(rng, 0.0, 2.0 * std::numbers::pi);
      structures_.push_back(st);
    }
    for (auto& wave : texture_) {
      wave = {detail::uniform(rng, -0.25, 0.25), detail::uniform(rng, -0.25, 0.25),
              detail::uniform(rng, 0.0, 2.0 * std::numbers::pi)};
    }
  }

  const std::vector<Structure>& structures() const { return structures_; }

  double operator()(Point p) const {
    double v = cfg_.background_gray;
    for (const auto& w : texture_) v += 0.02 * std::sin(w[0] * p.x + w[1] * p.y + w[2]);
    const double r = cfg_.structure_radius();
    for (const Structure& st : structures_) {
      const double dx = p.x - st.centre.x, dy = p.y - st.centre.y;
      if (std::abs(dx) > r + 1.0 || std::abs(dy) > r + 1.0) continue;
      const double level = st.polarity == Polarity::light ? cfg_.light_value : cfg_.dark_value;
      const double cov = coverage(st, dx, dy, r);
      v = v * (1.0 - cov) + level * cov;
    }
    return v;
  }

 private:
  static double coverage(const Structure& st, double dx, double dy, double r) {
    const double c = std::cos(st.angle), s = std::sin(st.angle);
    const double u = c * dx + s * dy, w = -s * dx + c * dy;
    switch (st.kind) {
      case ShapeKind::dot: return std::hypot(dx, dy) <= 1.6 ? 1.0 : 0.0;
      case ShapeKind::blob: {
        const double d2 = dx * dx + dy * dy;
        return d2 <= r * r ? std::exp(-d2 / (2.0 * 1.6 * 1.6)) : 0.0;
      }
      case ShapeKind::cross:
        return ((std::abs(u) <= 0.8 && std::abs(w) <= r) || (std::abs(w) <= 0.8 && std::abs(u) <= r)) ? 1.0 : 0.0;
      case ShapeKind::corner: return (u >= 0.0 && w >= 0.0 && u <= r && w <= r) ? 1.0 : 0.0;
    }
    return 0.0;
  }

  SceneConfig cfg_;
  std::vector<Structure> structures_;
  std::array<std::array<double, 3>, 4> texture_{};
};

namespace detail {

// Box-filtered rendering with 4x4 supersampling; `to_scene` maps image pixels to scene coordinates.
inline Grid2d render(const PlanarScene& scene, int size, const HomographyTransfer& to_scene, double background) {
  Grid2d img(size, size);
  constexpr int kSub = 4;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double acc = 0.0;
      for (int sy = 0; sy < kSub; ++sy) {
        for (int sx = 0; sx < kSub; ++sx) {
          const Point p{x - 0.5 + (sx + 0.5) / kSub, y - 0.5 + (sy + 0.5) / kSub};
          const auto q = to_scene.apply(p);
          acc += q ? scene(*q) : background;
        }
      }
      img(y, x) = acc / (kSub * kSub);
    }
  }
  return img;
}

}  // namespace detail

inline PairSample gen_scene_pair(std::mt19937_64& rng, const SceneConfig& cfg) {
  cfg.validate();
  PairSample s;
  s.toy = false;
  const PlanarScene scene(rng, cfg);
  const HomographyTransfer warp = to_pixel_frame(sample_homography(rng, cfg.homography), cfg.size);
  s.rotation_k = cfg.rotation_aug ? std::uniform_int_distribution<int>(0, 3)(rng) : 0;
  s.transfer = HomographyTransfer(detail::quarter_turn_matrix(s.rotation_k, cfg.size)).then_after(warp);

  s.image_a = detail::render(scene, cfg.size, HomographyTransfer::identity(), cfg.background_gray);
  s.image_b = detail::render(scene, cfg.size, s.transfer.inverse(), cfg.background_gray);
  detail::add_noise(s.image_a, rng, cfg.noise_sigma);
  detail::add_noise(s.image_b, rng, cfg.noise_sigma);

  const Shape shape{cfg.size, cfg.size};
  s.gt_a.source_shape = s.gt_b.source_shape = shape;
  for (std::size_t i = 0; i < scene.structures().size(); ++i) {
    const auto& st = scene.structures()[i];
    s.gt_a.keypoints.push_back({st.centre.x, st.centre.y, 1.0});
    s.polarity_a.push_back(st.polarity);
    const auto q = s.transfer.apply(st.centre);
    if (q && inside(*q, shape)) {
      s.gt_b.keypoints.push_back({q->x, q->y, 1.0});
      s.polarity_b.push_back(st.polarity);
      s.gt_b_source.push_back(static_cast<int>(i));
    }
  }
  if (cfg.negation_aug == NegationAug::rgb) {
    for (double& v : s.image_b) v = 1.0 - v;
    for (Polarity& p : s.polarity_b) p = flipped(p);
    s.negated_b = true;
  }
  s.mask_a = covisibility_mask(s.transfer, shape, shape);
  s.mask_b = covisibility_mask(s.transfer.inverse(), shape, shape);
  return s;
}

inline PairSample gen_pair(std::mt19937_64& rng, const SceneConfig& cfg) {
  return cfg.mode == SceneMode::toy ? gen_toy_pair(rng, cfg) : gen_scene_pair(rng, cfg);
}

// Seed of pair `index` in a dataset generated from `base_seed` (splitmix64 mix).
inline std::uint64_t pair_seed(std::uint64_t base_seed, std::uint64_t index) {
  std::uint64_t z = base_seed + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline PairSample gen_pair_indexed(std::uint64_t base_seed, std::uint64_t index, const SceneConfig& cfg) {
  const std::uint64_t seed = pair_seed(base_seed, index);
  std::mt19937_64 rng(seed);
  PairSample s = gen_pair(rng, cfg);
  s.seed = seed;
  return s;
}

enum class ToyStrategy { mixed_5_5, light_only, dark_only };

// Monte Carlo reward of a fixed selection rule on toy layouts: each image picks
// `budget` dots (half of each polarity for the mixed rule, in raster order) and
// every label picked in both images scores 1.
inline double expected_strategy_reward(ToyStrategy strategy, const SceneConfig& cfg, int trials,
                                       std::uint64_t seed = 0, int budget = 10) {
  DADKIT_CHECK(trials >= 1, ErrorKind::invalid_parameter, "need at least one trial");
  std::mt19937_64 rng(seed);
  auto select = [&](const ToyLayout& l) {
    std::vector<int> order(l.centres.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      const Point pa = l.centres[a], pb = l.centres[b];
      return pa.y != pb.y ? pa.y < pb.y : pa.x < pb.x;
    });
    std::vector<char> chosen(l.centres.size(), 0);
    int light_quota = 0, dark_quota = 0;
    switch (strategy) {
      case ToyStrategy::mixed_5_5: light_quota = budget / 2; dark_quota = budget - budget / 2; break;
      case ToyStrategy::light_only: light_quota = budget; break;
      case ToyStrategy::dark_only: dark_quota = budget; break;
    }
    for (int i : order) {
      int& quota = l.polarity[i] == Polarity::light ? light_quota : dark_quota;
      if (quota > 0) {
        chosen[i] = 1;
        --quota;
      }
    }
    return chosen;
  };
  double total = 0.0;
  for (int t = 0; t < trials; ++t) {
    const ToyLayout la = gen_toy_layout(rng, cfg);
    const ToyLayout lb = gen_toy_layout(rng, cfg);
    const auto ca = select(la), cb = select(lb);
    for (std::size_t i = 0; i < ca.size(); ++i) total += (ca[i] && cb[i]) ? 1.0 : 0.0;
  }
  return total / trials;
}

}  // namespace dadkit
