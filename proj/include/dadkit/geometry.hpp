#pragma once

// Point transfer between views, covisibility masks and mutual nearest-neighbour
// matching of keypoint sets.

#include <array>
#include <cmath>
#include <concepts>
#include <limits>
#include <optional>
#include <vector>

#include "dadkit/sampler.hpp"

namespace dadkit {

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

inline double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

inline bool inside(Point p, Shape shape) {
  return p.x >= 0.0 && p.y >= 0.0 && p.x <= shape.width - 1 && p.y <= shape.height - 1;
}

using Mat3 = std::array<double, 9>;

inline Mat3 mat3_multiply(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[3 * i + j] += a[3 * i + k] * b[3 * k + j];
  return c;
}

inline double mat3_determinant(const Mat3& m) {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

// Projective map of the plane, stored row-major with h[2][2] scaled to 1 when nonzero.
class HomographyTransfer {
 public:
  HomographyTransfer() : h_{1, 0, 0, 0, 1, 0, 0, 0, 1} {}
  explicit HomographyTransfer(const Mat3& h) : h_(h) {
    if (std::abs(h_[8]) > 1e-300)
      for (double& v : h_) v /= h[8];
    // Invertibility is judged on the scale-free determinant.
    double scale = 0.0;
    for (double v : h_) scale = std::max(scale, std::abs(v));
    DADKIT_CHECK(scale > 0.0 && std::isfinite(scale), ErrorKind::degenerate_transfer, "homography is zero or non-finite");
    DADKIT_CHECK(std::abs(mat3_determinant(h_)) / (scale * scale * scale) > 1e-12, ErrorKind::degenerate_transfer,
                 "homography is singular");
  }

  static HomographyTransfer identity() { return HomographyTransfer(); }
  static HomographyTransfer translation(double tx, double ty) {
    return HomographyTransfer(Mat3{1, 0, tx, 0, 1, ty, 0, 0, 1});
  }

  const Mat3& matrix() const { return h_; }
  double operator()(int r, int c) const { return h_[3 * r + c]; }

  std::optional<Point> apply(Point p) const {
    const double xp = h_[0] * p.x + h_[1] * p.y + h_[2];
    const double yp = h_[3] * p.x + h_[4] * p.y + h_[5];
    const double wp = h_[6] * p.x + h_[7] * p.y + h_[8];
    if (std::abs(wp) < 1e-9) return std::nullopt;
    const Point out{xp / wp, yp / wp};
    if (!std::isfinite(out.x) || !std::isfinite(out.y)) return std::nullopt;
    return out;
  }

  HomographyTransfer inverse() const {
    const Mat3& m = h_;
    const double det = mat3_determinant(m);
    Mat3 inv{(m[4] * m[8] - m[5] * m[7]) / det, (m[2] * m[7] - m[1] * m[8]) / det, (m[1] * m[5] - m[2] * m[4]) / det,
             (m[5] * m[6] - m[3] * m[8]) / det, (m[0] * m[8] - m[2] * m[6]) / det, (m[2] * m[3] - m[0] * m[5]) / det,
             (m[3] * m[7] - m[4] * m[6]) / det, (m[1] * m[6] - m[0] * m[7]) / det, (m[0] * m[4] - m[1] * m[3]) / det};
    return HomographyTransfer(inv);
  }

  // (this * other): applies `other` first.
  HomographyTransfer then_after(const HomographyTransfer& other) const {
    return HomographyTransfer(mat3_multiply(h_, other.h_));
  }

 private:
  Mat3 h_;
};

template <typename T>
concept PointTransfer = requires(const T& t, Point p) {
  { t.apply(p) } -> std::same_as<std::optional<Point>>;
  { t.inverse() } -> std::convertible_to<T>;
};

template <PointTransfer Transfer>
Mask covisibility_mask(const Transfer& t, Shape src, Shape dst) {
  Mask mask(src);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x) {
      const auto q = t.apply({double(x), double(y)});
      mask.set(y, x, q && inside(*q, dst));
    }
  return mask;
}

enum class MatchDirection { a_to_b, b_to_a };

struct Match {
  int index_a = 0;
  int index_b = 0;
  double transfer_distance = 0.0;

  friend bool operator==(const Match&, const Match&) = default;
};

struct MatchSet {
  std::vector<Match> pairs;
  MatchDirection direction = MatchDirection::a_to_b;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

namespace detail {

inline Point as_point(const Keypoint& k) { return {k.x, k.y}; }

// Index of the keypoint nearest to `p`, lowest index on ties; -1 when `set` is empty.
inline int nearest(const KeypointSet& set, Point p, double* dist) {
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < set.size(); ++i) {
    const double d = distance(p, as_point(set[i]));
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  if (dist) *dist = best_d;
  return best;
}

// One direction of mutual matching: every `from` keypoint with a valid transfer
// looks up its nearest `to` keypoint, which must look back at it.
template <PointTransfer Transfer>
std::vector<Match> mutual_pass(const KeypointSet& from, const KeypointSet& to, const Transfer& fwd,
                               const Transfer& bwd, double threshold, bool from_is_a) {
  std::vector<std::optional<Point>> back(to.size());
  for (std::size_t j = 0; j < to.size(); ++j) back[j] = bwd.apply(as_point(to[j]));
  std::vector<Match> out;
  for (std::size_t i = 0; i < from.size(); ++i) {
    const auto moved = fwd.apply(as_point(from[i]));
    if (!moved) continue;
    double d = 0.0;
    const int j = nearest(to, *moved, &d);
    if (j < 0 || !(d <= threshold) || !back[j]) continue;
    if (nearest(from, *back[j], nullptr) != static_cast<int>(i)) continue;
    out.push_back(from_is_a ? Match{int(i), j, d} : Match{j, int(i), d});
  }
  return out;
}

}  // namespace detail

struct MatchPair {
  MatchSet a_to_b;
  MatchSet b_to_a;
};

template <PointTransfer Transfer>
MatchPair match_mutual_nn(const KeypointSet& ka, const KeypointSet& kb, const Transfer& t, double threshold) {
  DADKIT_CHECK(threshold > 0.0, ErrorKind::invalid_parameter, "match threshold must be positive");
  const Transfer inv = t.inverse();
  MatchPair out;
  out.a_to_b.direction = MatchDirection::a_to_b;
  out.b_to_a.direction = MatchDirection::b_to_a;
  out.a_to_b.pairs = detail::mutual_pass(ka, kb, t, inv, threshold, true);
  out.b_to_a.pairs = detail::mutual_pass(kb, ka, inv, t, threshold, false);
  return out;
}

}  // namespace dadkit
