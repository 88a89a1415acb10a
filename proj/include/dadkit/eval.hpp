#pragma once

// Evaluation harness: repeatability, normalized DLT and RANSAC homography
// fitting, corner end-point error, two-view pose error and AUC.

#include <Eigen/Core>
#include <Eigen/LU>
#include <Eigen/SVD>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <tuple>
#include <vector>

#include "dadkit/geometry.hpp"

namespace dadkit {

struct Correspondence {
  Point src;
  Point dst;
};

struct RepeatabilityResult {
  double value = std::numeric_limits<double>::quiet_NaN();
  int covisible = 0;
  int repeated = 0;
};

// Fraction of covisible A keypoints whose transfer lands within `threshold` of a
// B keypoint, using a greedy one-to-one assignment in increasing distance order.
template <PointTransfer Transfer>
RepeatabilityResult repeatability(const KeypointSet& ka, const KeypointSet& kb, const Transfer& t,
                                  double threshold) {
  DADKIT_CHECK(threshold > 0.0, ErrorKind::invalid_parameter, "repeatability threshold must be positive");
  const Shape dst_shape = kb.source_shape.size() > 0 ? kb.source_shape : ka.source_shape;
  std::vector<std::tuple<double, int, int>> candidates;
  RepeatabilityResult out;
  for (std::size_t i = 0; i < ka.size(); ++i) {
    const auto q = t.apply({ka[i].x, ka[i].y});
    if (!q || !inside(*q, dst_shape)) continue;
    ++out.covisible;
    for (std::size_t j = 0; j < kb.size(); ++j) {
      const double d = distance(*q, {kb[j].x, kb[j].y});
      if (d <= threshold) candidates.emplace_back(d, int(i), int(j));
    }
  }
  if (out.covisible == 0) return out;
  std::sort(candidates.begin(), candidates.end());
  std::vector<char> used_a(ka.size(), 0), used_b(kb.size(), 0);
  for (const auto& [d, i, j] : candidates) {
    if (used_a[i] || used_b[j]) continue;
    used_a[i] = used_b[j] = 1;
    ++out.repeated;
  }
  out.value = static_cast<double>(out.repeated) / out.covisible;
  return out;
}

namespace detail {

// Similarity taking the points' centroid to the origin and their mean norm to sqrt(2).
inline Eigen::Matrix3d hartley_normalizer(const std::vector<Point>& pts) {
  double cx = 0.0, cy = 0.0;
  for (const Point& p : pts) {
    cx += p.x;
    cy += p.y;
  }
  cx /= pts.size();
  cy /= pts.size();
  double mean_norm = 0.0;
  for (const Point& p : pts) mean_norm += std::hypot(p.x - cx, p.y - cy);
  mean_norm /= pts.size();
  DADKIT_CHECK(mean_norm > 1e-12, ErrorKind::degenerate_input, "correspondences collapse to a single point");
  const double s = std::sqrt(2.0) / mean_norm;
  Eigen::Matrix3d t;
  t << s, 0, -s * cx, 0, s, -s * cy, 0, 0, 1;
  return t;
}

inline bool collinear(Point a, Point b, Point c, double scale) {
  const double cross = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
  return std::abs(cross) <= 1e-9 * scale * scale;
}

inline bool has_collinear_triple(const std::vector<Point>& pts) {
  double scale = 1.0;
  for (const Point& p : pts) scale = std::max({scale, std::abs(p.x), std::abs(p.y)});
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j)
      for (std::size_t k = j + 1; k < pts.size(); ++k)
        if (collinear(pts[i], pts[j], pts[k], scale)) return true;
  return false;
}

}  // namespace detail

// Least-squares projective fit with Hartley normalization.
inline HomographyTransfer dlt_homography(const std::vector<Correspondence>& corr) {
  DADKIT_CHECK(corr.size() >= 4, ErrorKind::insufficient_data, "DLT needs at least 4 correspondences");
  std::vector<Point> src, dst;
  for (const Correspondence& c : corr) {
    src.push_back(c.src);
    dst.push_back(c.dst);
  }
  if (corr.size() == 4) {
    DADKIT_CHECK(!detail::has_collinear_triple(src) && !detail::has_collinear_triple(dst), ErrorKind::degenerate_input,
                 "three of four correspondences are collinear");
  }
  const Eigen::Matrix3d ts = detail::hartley_normalizer(src);
  const Eigen::Matrix3d td = detail::hartley_normalizer(dst);

  Eigen::MatrixXd a(2 * corr.size(), 9);
  for (std::size_t i = 0; i < corr.size(); ++i) {
    const Eigen::Vector3d p = ts * Eigen::Vector3d(src[i].x, src[i].y, 1.0);
    const Eigen::Vector3d q = td * Eigen::Vector3d(dst[i].x, dst[i].y, 1.0);
    const double x = p.x(), y = p.y(), u = q.x(), v = q.y();
    a.row(2 * i) << -x, -y, -1, 0, 0, 0, u * x, u * y, u;
    a.row(2 * i + 1) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
  }
  // Pad the minimal case so the SVD exposes a full 9-dimensional right basis.
  if (a.rows() < 9) {
    a.conservativeResize(9, Eigen::NoChange);
    a.row(8).setZero();
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd sv = svd.singularValues();
  DADKIT_CHECK(sv(7) > 1e-10 * sv(0), ErrorKind::degenerate_input, "correspondences do not determine a homography");
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  const Eigen::Matrix3d hm = td.inverse() * hn * ts;
  DADKIT_CHECK(std::abs(hm(2, 2)) > 1e-12 * hm.cwiseAbs().maxCoeff(), ErrorKind::degenerate_input,
               "fitted homography sends the origin to infinity");
  Mat3 out;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out[3 * r + c] = hm(r, c);
  try {
    return HomographyTransfer(out);
  } catch (const Error&) {
    throw Error(ErrorKind::degenerate_input, "fitted homography is singular");
  }
}

// sqrt of the mean of squared forward and backward transfer errors; infinite when undefined.
inline double symmetric_transfer_error(const HomographyTransfer& h, const HomographyTransfer& h_inv,
                                       const Correspondence& c) {
  const auto fwd = h.apply(c.src);
  const auto bwd = h_inv.apply(c.dst);
  if (!fwd || !bwd) return std::numeric_limits<double>::infinity();
  const double df = distance(*fwd, c.dst), db = distance(*bwd, c.src);
  return std::sqrt(0.5 * (df * df + db * db));
}

struct RansacResult {
  HomographyTransfer h;
  std::vector<char> inliers;
  int num_inliers = 0;
};

struct RansacConfig {
  double inlier_threshold = 2.0;
  int iterations = 200;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::pair<int, double> score_model(const HomographyTransfer& h, const std::vector<Correspondence>& corr,
                                          double threshold, std::vector<char>* flags) {
  const HomographyTransfer inv = h.inverse();
  int count = 0;
  double err_sum = 0.0;
  if (flags) flags->assign(corr.size(), 0);
  for (std::size_t i = 0; i < corr.size(); ++i) {
    const double e = symmetric_transfer_error(h, inv, corr[i]);
    if (e <= threshold) {
      ++count;
      err_sum += e;
      if (flags) (*flags)[i] = 1;
    }
  }
  return {count, err_sum};
}

}  // namespace detail

// 4-point RANSAC on symmetric transfer error with a final DLT refit on the inliers.
inline RansacResult ransac_homography(const std::vector<Correspondence>& corr, const RansacConfig& cfg) {
  DADKIT_CHECK(corr.size() >= 4, ErrorKind::insufficient_data, "RANSAC needs at least 4 matches");
  DADKIT_CHECK(cfg.inlier_threshold > 0.0 && cfg.iterations >= 1, ErrorKind::invalid_parameter,
               "RANSAC threshold and iteration count must be positive");
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, corr.size() - 1);

  std::optional<HomographyTransfer> best;
  int best_count = -1;
  double best_err = std::numeric_limits<double>::infinity();
  for (int it = 0; it < cfg.iterations; ++it) {
    std::array<std::size_t, 4> idx{};
    for (std::size_t k = 0; k < 4; ++k) {
      bool fresh;
      do {
        idx[k] = pick(rng);
        fresh = std::find(idx.begin(), idx.begin() + k, idx[k]) == idx.begin() + k;
      } while (!fresh);
    }
    std::vector<Correspondence> sample;
    for (std::size_t i : idx) sample.push_back(corr[i]);
    try {
      const HomographyTransfer h = dlt_homography(sample);
      const auto [count, err] = detail::score_model(h, corr, cfg.inlier_threshold, nullptr);
      if (count > best_count || (count == best_count && err < best_err)) {
        best = h;
        best_count = count;
        best_err = err;
      }
    } catch (const Error&) {
      // Degenerate minimal sample.
    }
  }
  DADKIT_CHECK(best.has_value(), ErrorKind::degenerate_input, "every RANSAC sample was degenerate");

  RansacResult out;
  out.h = *best;
  detail::score_model(out.h, corr, cfg.inlier_threshold, &out.inliers);
  out.num_inliers = best_count;
  if (best_count >= 4) {
    std::vector<Correspondence> inl;
    for (std::size_t i = 0; i < corr.size(); ++i)
      if (out.inliers[i]) inl.push_back(corr[i]);
    try {
      const HomographyTransfer refit = dlt_homography(inl);
      std::vector<char> flags;
      const auto [count, err] = detail::score_model(refit, corr, cfg.inlier_threshold, &flags);
      if (count >= best_count) {
        out.h = refit;
        out.inliers = std::move(flags);
        out.num_inliers = count;
      }
    } catch (const Error&) {
      // Keep the best minimal model.
    }
  }
  return out;
}

// Mean corner displacement between two homographies, scaled by 480 / min(H, W).
inline double corner_epe(const HomographyTransfer& h_hat, const HomographyTransfer& h_gt, Shape shape) {
  const double w = shape.width - 1, h = shape.height - 1;
  const std::array<Point, 4> corners{Point{0, 0}, Point{w, 0}, Point{w, h}, Point{0, h}};
  double total = 0.0;
  for (const Point& c : corners) {
    const auto a = h_hat.apply(c), b = h_gt.apply(c);
    if (!a || !b) return std::numeric_limits<double>::infinity();
    total += distance(*a, *b);
  }
  return 0.25 * total * 480.0 / std::min(shape.height, shape.width);
}

using Quaternion = std::array<double, 4>;  // w, x, y, z
using Vec3 = std::array<double, 3>;

inline double rad_to_deg(double r) { return r * 180.0 / std::numbers::pi; }

// max(rotation angle, translation direction angle) in degrees; translations are
// compared up to sign, so the translation angle lies in [0, 90].
inline double pose_error(const Quaternion& q_hat, const Vec3& t_hat, const Quaternion& q_gt, const Vec3& t_gt) {
  auto norm3 = [](const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); };
  DADKIT_CHECK(norm3(t_hat) > 0.0 && norm3(t_gt) > 0.0, ErrorKind::invalid_input,
               "translation direction undefined for a zero translation");
  auto qnorm = [](const Quaternion& q) { return std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]); };
  const double na = qnorm(q_hat), nb = qnorm(q_gt);
  DADKIT_CHECK(na > 0.0 && nb > 0.0, ErrorKind::invalid_input, "zero quaternion");
  // Relative rotation conj(q_hat) * q_gt; its angle is 2 atan2(|v|, |w|).
  const Quaternion a{q_hat[0] / na, -q_hat[1] / na, -q_hat[2] / na, -q_hat[3] / na};
  const Quaternion b{q_gt[0] / nb, q_gt[1] / nb, q_gt[2] / nb, q_gt[3] / nb};
  const double rw = a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3];
  const double rx = a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2];
  const double ry = a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1];
  const double rz = a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0];
  const double rot = rad_to_deg(2.0 * std::atan2(std::sqrt(rx * rx + ry * ry + rz * rz), std::abs(rw)));

  const Vec3 cross{t_hat[1] * t_gt[2] - t_hat[2] * t_gt[1], t_hat[2] * t_gt[0] - t_hat[0] * t_gt[2],
                   t_hat[0] * t_gt[1] - t_hat[1] * t_gt[0]};
  const double dotp = t_hat[0] * t_gt[0] + t_hat[1] * t_gt[1] + t_hat[2] * t_gt[2];
  const double trans = rad_to_deg(std::atan2(norm3(cross), std::abs(dotp)));
  return std::max(rot, trans);
}

struct ErrorCurve {
  std::vector<double> errors;
  double threshold = 0.0;
};

// Area under the empirical accuracy curve on [0, threshold], normalized by the
// threshold. Integrating the step-function CDF exactly, each error e contributes
// max(0, 1 - e / threshold) / n, so no sorting or threshold grid is needed.
inline double auc(const ErrorCurve& curve) {
  DADKIT_CHECK(curve.threshold > 0.0, ErrorKind::invalid_parameter, "AUC threshold must be positive");
  DADKIT_CHECK(!curve.errors.empty(), ErrorKind::insufficient_data, "AUC of an empty error list is undefined");
  double total = 0.0;
  for (double e : curve.errors) {
    DADKIT_CHECK(!(e < 0.0), ErrorKind::invalid_input, "errors must be nonnegative");
    // NaN and infinite errors count as failures.
    if (e < curve.threshold) total += 1.0 - e / curve.threshold;
  }
  return total / static_cast<double>(curve.errors.size());
}

}  // namespace dadkit
