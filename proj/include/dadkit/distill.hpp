#pragma once

// Generalized-mean merging of two keypoint distributions, the distillation
// loss, and discrete checks for the pointwise-maximum theory: local maxima,
// subsumed/partner classification and maxima preservation.

#include <cmath>
#include <limits>
#include <set>
#include <utility>
#include <vector>

#include "dadkit/core.hpp"

namespace dadkit {

struct MergeConfig {
  double r = std::numeric_limits<double>::infinity();

  void validate() const {
    DADKIT_CHECK(r == 1.0 || r == 2.0 || (std::isinf(r) && r > 0.0), ErrorKind::invalid_parameter,
                 "merge exponent r must be 1, 2 or infinity");
  }
};

// Pointwise (0.5 (a^r + b^r))^(1/r); r = infinity is the pointwise maximum.
inline Grid2d generalized_mean(const Grid2d& a, const Grid2d& b, double r) {
  MergeConfig{r}.validate();
  require_same_shape(a.shape(), b.shape(), "generalized_mean");
  Grid2d out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    DADKIT_CHECK(a[i] >= 0.0 && b[i] >= 0.0, ErrorKind::invalid_input, "generalized mean needs nonnegative inputs");
    if (std::isinf(r)) {
      out[i] = std::max(a[i], b[i]);
    } else if (r == 1.0) {
      out[i] = 0.5 * (a[i] + b[i]);
    } else {
      out[i] = std::sqrt(0.5 * (a[i] * a[i] + b[i] * b[i]));
    }
  }
  return out;
}

inline ProbMap distill_target(const ProbMap& p_light, const ProbMap& p_dark, double r) {
  Grid2d merged = generalized_mean(p_dark.probs(), p_light.probs(), r);
  DADKIT_CHECK(sum(merged) > 0.0, ErrorKind::internal, "merged distribution has no mass");
  return ProbMap::normalize(std::move(merged));
}

struct DistillResult {
  double loss = 0.0;
  Grid2d grad;
};

// KL(target || softmax(S)); the gradient w.r.t. S is softmax(S) - target.
inline DistillResult distill_loss_and_grad(const ProbMap& target, const ScoreMap& s) {
  require_same_shape(target.shape(), s.shape(), "distill_loss_and_grad");
  const LogProbMap lp = log_softmax_2d(s);
  DistillResult out;
  out.grad = Grid2d(s.shape());
  for (std::size_t i = 0; i < out.grad.size(); ++i) {
    const double t = target.probs()[i];
    if (t > 0.0) out.loss += t * (std::log(t) - lp.logprobs[i]);
    out.grad[i] = std::exp(lp.logprobs[i]) - t;
  }
  return out;
}

struct Pixel {
  int row = 0;
  int col = 0;

  friend auto operator<=>(const Pixel&, const Pixel&) = default;
};

// Pixels that are >= all 8-neighbours and > at least one of them. A plateau of
// equal values counts once, through its raster-first pixel, and only when no
// plateau pixel has a larger neighbour.
inline std::set<Pixel> local_maxima(const Grid2d& map) {
  const int h = map.height(), w = map.width();
  std::set<Pixel> out;
  Grid<int> plateau_id(h, w, -1);
  int next_id = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (plateau_id(y, x) >= 0) continue;
      const double v = map(y, x);
      // Flood the 8-connected component of pixels equal to v.
      std::vector<Pixel> stack{{y, x}}, members;
      plateau_id(y, x) = next_id;
      bool dominated = false, dominates = false;
      while (!stack.empty()) {
        const Pixel p = stack.back();
        stack.pop_back();
        members.push_back(p);
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            if (dy == 0 && dx == 0) continue;
            const int ny = p.row + dy, nx = p.col + dx;
            if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
            const double u = map(ny, nx);
            if (u > v) dominated = true;
            if (u < v) dominates = true;
            if (u == v && plateau_id(ny, nx) < 0) {
              plateau_id(ny, nx) = next_id;
              stack.push_back({ny, nx});
            }
          }
        }
      }
      ++next_id;
      if (!dominated && dominates) out.insert(*std::min_element(members.begin(), members.end()));
    }
  }
  return out;
}

// Discrete keypoint: nonnegative, compactly supported, with a single maximum.
struct KeypointFunction {
  Grid2d values;

  Pixel mode() const {
    const auto it = std::max_element(values.begin(), values.end());
    const auto i = static_cast<int>(it - values.begin());
    return {i / values.width(), i % values.width()};
  }

  // Smooth C2 bump a * (1 - (d/R)^2)^3 centred at (cy, cx).
  static KeypointFunction bump(Shape shape, double cy, double cx, double radius, double amplitude) {
    KeypointFunction f{Grid2d(shape, 0.0)};
    for (int y = 0; y < shape.height; ++y)
      for (int x = 0; x < shape.width; ++x) {
        const double d2 = ((y - cy) * (y - cy) + (x - cx) * (x - cx)) / (radius * radius);
        if (d2 < 1.0) f.values(y, x) = amplitude * std::pow(1.0 - d2, 3);
      }
    return f;
  }

  void validate() const {
    DADKIT_CHECK(!values.empty(), ErrorKind::invalid_input, "keypoint function is empty");
    DADKIT_CHECK(std::all_of(values.begin(), values.end(), [](double v) { return v >= 0.0 && std::isfinite(v); }),
                 ErrorKind::invalid_input, "keypoint function must be nonnegative and finite");
    DADKIT_CHECK(max_value(values) > 0.0, ErrorKind::invalid_input, "keypoint function has no support");
    DADKIT_CHECK(local_maxima(values).size() == 1, ErrorKind::invalid_input, "keypoint function is not unimodal");
  }
};

enum class MergeVerdict { partners, f_subsumed, g_subsumed, both_subsumed };

struct MergeCheck {
  MergeVerdict verdict = MergeVerdict::partners;
  std::set<Pixel> merged_maxima;
  bool union_violation = false;    // a maximum of max(f, g) is a maximum of neither input
  bool partner_violation = false;  // partners whose merged maxima differ from both modes
};

namespace detail {

// Whether `a` is >= `b` on the 3x3 neighbourhood of `at`.
inline bool dominates_near(const Grid2d& a, const Grid2d& b, Pixel at) {
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      const int y = at.row + dy, x = at.col + dx;
      if (y < 0 || y >= a.height() || x < 0 || x >= a.width()) continue;
      if (a(y, x) < b(y, x)) return false;
    }
  return true;
}

}  // namespace detail

inline MergeCheck check_partner_merge(const KeypointFunction& f, const KeypointFunction& g) {
  f.validate();
  g.validate();
  require_same_shape(f.values.shape(), g.values.shape(), "check_partner_merge");
  const Pixel mf = f.mode(), mg = g.mode();
  const bool f_kept = detail::dominates_near(f.values, g.values, mf);
  const bool g_kept = detail::dominates_near(g.values, f.values, mg);

  MergeCheck out;
  if (f_kept && g_kept) out.verdict = MergeVerdict::partners;
  else if (!f_kept && g_kept) out.verdict = MergeVerdict::f_subsumed;
  else if (f_kept) out.verdict = MergeVerdict::g_subsumed;
  else out.verdict = MergeVerdict::both_subsumed;

  out.merged_maxima = local_maxima(generalized_mean(f.values, g.values, std::numeric_limits<double>::infinity()));
  const std::set<Pixel> fm = local_maxima(f.values), gm = local_maxima(g.values);
  for (const Pixel& p : out.merged_maxima)
    if (!fm.count(p) && !gm.count(p)) out.union_violation = true;
  if (out.verdict == MergeVerdict::partners) out.partner_violation = out.merged_maxima != std::set<Pixel>{mf, mg};
  return out;
}

}  // namespace dadkit
