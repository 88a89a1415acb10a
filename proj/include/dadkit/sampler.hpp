#pragma once

// Balanced top-K keypoint sampling: KDE balancing, non-maximum suppression,
// deterministic top-K selection and softmax-expectation subpixel refinement.

#include <algorithm>
#include <cmath>
#include <vector>

#include "dadkit/core.hpp"

namespace dadkit {

struct Keypoint {
  double x = 0.0;  // column
  double y = 0.0;  // row
  double score = 0.0;

  friend bool operator==(const Keypoint&, const Keypoint&) = default;
};

struct KeypointSet {
  std::vector<Keypoint> keypoints;
  Shape source_shape;

  std::size_t size() const { return keypoints.size(); }
  bool empty() const { return keypoints.empty(); }
  const Keypoint& operator[](std::size_t i) const { return keypoints[i]; }

  friend bool operator==(const KeypointSet&, const KeypointSet&) = default;
};

enum class SampleMode { train, inference };

struct SamplerConfig {
  int k = 512;
  int nms_window = 3;
  double kde_sigma_frac = 0.02;  // of min(height, width)
  bool use_kde = true;
  bool subpixel = true;
  double subpixel_temp = 0.5;
  int subpixel_window = 3;

  void validate() const {
    DADKIT_CHECK(k >= 1, ErrorKind::invalid_parameter, "sampler k must be >= 1");
    DADKIT_CHECK(nms_window >= 3 && nms_window % 2 == 1, ErrorKind::invalid_parameter,
                 "nms_window must be odd and >= 3");
    DADKIT_CHECK(subpixel_window >= 3 && subpixel_window % 2 == 1, ErrorKind::invalid_parameter,
                 "subpixel_window must be odd and >= 3");
    DADKIT_CHECK(subpixel_temp > 0.0, ErrorKind::invalid_parameter, "subpixel_temp must be positive");
    DADKIT_CHECK(kde_sigma_frac > 0.0, ErrorKind::invalid_parameter, "kde_sigma_frac must be positive");
  }
};

inline constexpr double kDensityFloor = 1e-12;

// Unnormalized balanced scores p / sqrt(p * g). Also accepts unnormalized
// nonnegative weights, for which the map is positively homogeneous of degree 1/2.
inline Grid2d kde_balance(const Grid2d& p, double sigma) {
  const Grid2d density = gaussian_blur(p, sigma);
  Grid2d q(p.shape());
  for (std::size_t i = 0; i < q.size(); ++i) q[i] = p[i] / std::sqrt(std::max(density[i], kDensityFloor));
  return q;
}

inline Grid2d kde_balance(const ProbMap& p, double sigma) { return kde_balance(p.probs(), sigma); }

// Keeps pixels that beat every other pixel in their window; among exact ties the
// raster-first pixel wins.
inline Grid2d nms(const Grid2d& scores, int window) {
  DADKIT_CHECK(window >= 3 && window % 2 == 1, ErrorKind::invalid_parameter, "nms window must be odd and >= 3");
  const int h = scores.height(), w = scores.width(), r = window / 2;
  Grid2d out(scores.shape(), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double v = scores(y, x);
      bool keep = true;
      for (int yy = std::max(0, y - r); keep && yy <= std::min(h - 1, y + r); ++yy) {
        for (int xx = std::max(0, x - r); xx <= std::min(w - 1, x + r); ++xx) {
          if (yy == y && xx == x) continue;
          const double u = scores(yy, xx);
          const bool earlier = yy < y || (yy == y && xx < x);
          if (u > v || (u == v && earlier)) {
            keep = false;
            break;
          }
        }
      }
      if (keep) out(y, x) = v;
    }
  }
  return out;
}

// Orders by descending score, then raster position.
inline bool keypoint_before(const Keypoint& a, const Keypoint& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.y != b.y) return a.y < b.y;
  return a.x < b.x;
}

inline KeypointSet top_k(const Grid2d& scores, int k) {
  DADKIT_CHECK(k >= 1, ErrorKind::invalid_parameter, "top_k needs k >= 1");
  KeypointSet out;
  out.source_shape = scores.shape();
  for (int y = 0; y < scores.height(); ++y)
    for (int x = 0; x < scores.width(); ++x)
      if (scores(y, x) != 0.0) out.keypoints.push_back({double(x), double(y), scores(y, x)});
  const std::size_t n = std::min<std::size_t>(k, out.keypoints.size());
  std::partial_sort(out.keypoints.begin(), out.keypoints.begin() + n, out.keypoints.end(), keypoint_before);
  out.keypoints.resize(n);
  return out;
}

// Moves each keypoint to the expectation of softmax(logits / temp) over its
// border-clipped window.
inline KeypointSet subpixel_refine(const ScoreMap& scoremap, const KeypointSet& kps, double temp, int window) {
  DADKIT_CHECK(temp > 0.0, ErrorKind::invalid_parameter, "subpixel temperature must be positive");
  DADKIT_CHECK(window >= 3 && window % 2 == 1, ErrorKind::invalid_parameter, "subpixel window must be odd and >= 3");
  const Grid2d& s = scoremap.logits();
  const int r = window / 2;
  KeypointSet out = kps;
  for (Keypoint& kp : out.keypoints) {
    const int cx = static_cast<int>(std::lround(kp.x));
    const int cy = static_cast<int>(std::lround(kp.y));
    const int y0 = std::max(0, cy - r), y1 = std::min(s.height() - 1, cy + r);
    const int x0 = std::max(0, cx - r), x1 = std::min(s.width() - 1, cx + r);
    double m = -std::numeric_limits<double>::infinity();
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) m = std::max(m, s(y, x));
    double z = 0.0, ex = 0.0, ey = 0.0;
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double wgt = std::exp((s(y, x) - m) / temp);
        z += wgt;
        ex += wgt * (x - cx);
        ey += wgt * (y - cy);
      }
    }
    kp.x = cx + ex / z;
    kp.y = cy + ey / z;
  }
  return out;
}

inline double kde_sigma_pixels(const SamplerConfig& cfg, Shape shape) {
  return cfg.kde_sigma_frac * std::min(shape.height, shape.width);
}

// Train mode: softmax -> KDE balance -> NMS -> top-K. Inference mode skips the
// balancing and optionally refines to subpixel positions. Reported scores are the
// raw probabilities at the selected pixels.
inline KeypointSet sample_keypoints(const ScoreMap& scoremap, const SamplerConfig& cfg, SampleMode mode) {
  cfg.validate();
  const ProbMap p = softmax_2d(scoremap);
  const bool balance = mode == SampleMode::train && cfg.use_kde;
  const Grid2d ranked = balance ? kde_balance(p, kde_sigma_pixels(cfg, p.shape())) : p.probs();
  KeypointSet kps = top_k(nms(ranked, cfg.nms_window), cfg.k);
  for (Keypoint& kp : kps.keypoints) kp.score = p(static_cast<int>(kp.y), static_cast<int>(kp.x));
  if (balance) std::sort(kps.keypoints.begin(), kps.keypoints.end(), keypoint_before);
  if (mode == SampleMode::inference && cfg.subpixel)
    kps = subpixel_refine(scoremap, kps, cfg.subpixel_temp, cfg.subpixel_window);
  return kps;
}

}  // namespace dadkit
