#pragma once

// Probability machinery over image grids: softmax, masked log-softmax,
// Gaussian smoothing and KL divergence. All arithmetic is 64-bit.

#include <cmath>
#include <limits>
#include <vector>

#include "dadkit/grid.hpp"

namespace dadkit {

// Per-pixel detection logits for one image.
class ScoreMap {
 public:
  ScoreMap() = default;
  explicit ScoreMap(Grid2d logits) : logits_(std::move(logits)) {
    DADKIT_CHECK(all_finite(logits_), ErrorKind::invalid_input, "scoremap contains non-finite logits");
  }

  const Grid2d& logits() const { return logits_; }
  Shape shape() const { return logits_.shape(); }
  int height() const { return logits_.height(); }
  int width() const { return logits_.width(); }
  double operator()(int r, int c) const { return logits_(r, c); }

 private:
  Grid2d logits_;
};

// Nonnegative distribution over the pixel grid.
class ProbMap {
 public:
  ProbMap() = default;

  // Wraps `probs` without renormalizing; entries must be nonnegative and sum to 1.
  static ProbMap from_normalized(Grid2d probs, double tol = 1e-9) {
    DADKIT_CHECK(std::all_of(probs.begin(), probs.end(), [](double v) { return v >= 0.0 && std::isfinite(v); }),
                 ErrorKind::invalid_input, "probability map has negative or non-finite entries");
    DADKIT_CHECK(std::abs(sum(probs) - 1.0) <= tol, ErrorKind::invalid_input, "probability map is not normalized");
    ProbMap p;
    p.probs_ = std::move(probs);
    return p;
  }

  // Divides a nonnegative grid by its total.
  static ProbMap normalize(Grid2d weights) {
    DADKIT_CHECK(std::all_of(weights.begin(), weights.end(), [](double v) { return v >= 0.0 && std::isfinite(v); }),
                 ErrorKind::invalid_input, "weights have negative or non-finite entries");
    const double total = sum(weights);
    DADKIT_CHECK(total > 0.0, ErrorKind::degenerate_input, "cannot normalize an all-zero grid");
    for (double& v : weights) v /= total;
    ProbMap p;
    p.probs_ = std::move(weights);
    return p;
  }

  const Grid2d& probs() const { return probs_; }
  Shape shape() const { return probs_.shape(); }
  int height() const { return probs_.height(); }
  int width() const { return probs_.width(); }
  double operator()(int r, int c) const { return probs_(r, c); }

 private:
  Grid2d probs_;
};

// Log-probabilities normalized over the true pixels of `mask`; false pixels hold -inf.
struct LogProbMap {
  Grid2d logprobs;
  Mask mask;

  static constexpr double sentinel = -std::numeric_limits<double>::infinity();
};

inline ProbMap softmax_2d(const ScoreMap& scoremap) {
  const Grid2d& s = scoremap.logits();
  DADKIT_CHECK(!s.empty(), ErrorKind::invalid_input, "empty scoremap");
  DADKIT_CHECK(all_finite(s), ErrorKind::invalid_input, "scoremap contains non-finite logits");
  const double m = max_value(s);
  Grid2d p(s.shape());
  for (std::size_t i = 0; i < s.size(); ++i) p[i] = std::exp(s[i] - m);
  const double z = sum(p);
  for (double& v : p) v /= z;
  return ProbMap::from_normalized(std::move(p), 1e-9);
}

inline LogProbMap masked_log_softmax(const ScoreMap& scoremap, const Mask& mask) {
  const Grid2d& s = scoremap.logits();
  require_same_shape(s.shape(), mask.shape(), "masked_log_softmax");
  DADKIT_CHECK(mask.any(), ErrorKind::degenerate_mask, "mask has no true pixels");

  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < s.size(); ++i)
    if (mask[i]) m = std::max(m, s[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (mask[i]) z += std::exp(s[i] - m);
  // (s - m) - log z rather than s - (m + log z): a uniform shift of the logits
  // then cancels up to the rounding of s - m alone.
  const double log_z = std::log(z);

  LogProbMap out{Grid2d(s.shape(), LogProbMap::sentinel), mask};
  for (std::size_t i = 0; i < s.size(); ++i)
    if (mask[i]) out.logprobs[i] = (s[i] - m) - log_z;
  return out;
}

inline LogProbMap log_softmax_2d(const ScoreMap& scoremap) {
  return masked_log_softmax(scoremap, Mask(scoremap.shape(), true));
}

// Normalized, 3-sigma truncated 1-D Gaussian taps, index 0 at offset -radius.
inline std::vector<double> gaussian_kernel(double sigma) {
  DADKIT_CHECK(sigma > 0.0 && std::isfinite(sigma), ErrorKind::invalid_parameter, "blur sigma must be positive");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> taps(2 * radius + 1);
  double total = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    taps[k + radius] = std::exp(-0.5 * (k * k) / (sigma * sigma));
    total += taps[k + radius];
  }
  for (double& t : taps) t /= total;
  return taps;
}

// Separable Gaussian convolution with half-sample symmetric reflection at the borders.
// With this border rule the operator is symmetric, so it is its own adjoint and
// conserves total mass.
inline Grid2d gaussian_blur(const Grid2d& map, double sigma) {
  const std::vector<double> taps = gaussian_kernel(sigma);
  const int radius = static_cast<int>(taps.size() / 2);
  const int h = map.height(), w = map.width();
  if (map.empty()) return map;

  Grid2d tmp(h, w);
  std::vector<double> line(w + 2 * radius);
  for (int r = 0; r < h; ++r) {
    for (int c = -radius; c < w + radius; ++c) line[c + radius] = map(r, reflect_index(c, w));
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (std::size_t k = 0; k < taps.size(); ++k) acc += taps[k] * line[c + k];
      tmp(r, c) = acc;
    }
  }

  Grid2d out(h, w);
  std::vector<double> column(h + 2 * radius);
  for (int c = 0; c < w; ++c) {
    for (int r = -radius; r < h + radius; ++r) column[r + radius] = tmp(reflect_index(r, h), c);
    for (int r = 0; r < h; ++r) {
      double acc = 0.0;
      for (std::size_t k = 0; k < taps.size(); ++k) acc += taps[k] * column[r + k];
      out(r, c) = acc;
    }
  }
  return out;
}

inline constexpr double kKlFloor = 1e-12;

// KL(t || p) with p floored at `eps_floor` inside the logarithm.
inline double kl_divergence(const Grid2d& t, const Grid2d& p, double eps_floor = kKlFloor) {
  require_same_shape(t.shape(), p.shape(), "kl_divergence");
  double total = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] <= 0.0) continue;
    total += t[i] * (std::log(t[i]) - std::log(std::max(p[i], eps_floor)));
  }
  return total;
}

inline double kl_divergence(const ProbMap& t, const ProbMap& p, double eps_floor = kKlFloor) {
  return kl_divergence(t.probs(), p.probs(), eps_floor);
}

}  // namespace dadkit
