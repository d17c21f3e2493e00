#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "sceneglue/rng.hpp"
#include "sceneglue/types.hpp"

namespace sceneglue::geom {

// 3x3 projective transform, normalized so h[2][2] == 1.
struct Homography {
  std::array<double, 9> h{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Homography identity() { return {}; }

  static Homography from_matrix(const std::array<double, 9>& m) {
    Homography out;
    const double w = m[8];
    if (std::abs(w) < 1e-12)
      throw DegenerateConfigError("homography: h[2][2] is ~0, cannot normalize");
    for (int i = 0; i < 9; ++i) out.h[i] = m[i] / w;
    return out;
  }

  double det() const {
    return h[0] * (h[4] * h[8] - h[5] * h[7]) -
           h[1] * (h[3] * h[8] - h[5] * h[6]) +
           h[2] * (h[3] * h[7] - h[4] * h[6]);
  }

  Homography inverse() const {
    const double d = det();
    if (std::abs(d) < 1e-12)
      throw DegenerateConfigError("homography: not invertible");
    std::array<double, 9> inv;
    inv[0] = (h[4] * h[8] - h[5] * h[7]) / d;
    inv[1] = (h[2] * h[7] - h[1] * h[8]) / d;
    inv[2] = (h[1] * h[5] - h[2] * h[4]) / d;
    inv[3] = (h[5] * h[6] - h[3] * h[8]) / d;
    inv[4] = (h[0] * h[8] - h[2] * h[6]) / d;
    inv[5] = (h[2] * h[3] - h[0] * h[5]) / d;
    inv[6] = (h[3] * h[7] - h[4] * h[6]) / d;
    inv[7] = (h[1] * h[6] - h[0] * h[7]) / d;
    inv[8] = (h[0] * h[4] - h[1] * h[3]) / d;
    return from_matrix(inv);
  }

  // Projective transform of one point; throws on points mapped to infinity.
  Vec2 apply(const Vec2& p) const {
    const double x = h[0] * p.u + h[1] * p.v + h[2];
    const double y = h[3] * p.u + h[4] * p.v + h[5];
    const double w = h[6] * p.u + h[7] * p.v + h[8];
    if (std::abs(w) < 1e-12)
      throw DegeneratePointError("apply_homography: point maps to infinity");
    return {x / w, y / w};
  }
};

inline std::vector<Vec2> apply_homography(const Homography& h,
                                          const std::vector<Vec2>& pts) {
  std::vector<Vec2> out;
  out.reserve(pts.size());
  for (const auto& p : pts) out.push_back(h.apply(p));
  return out;
}

namespace detail {

// Finite warp or "very far away"; keeps groundtruth labeling total.
inline Vec2 warp_or_far(const Homography& h, const Vec2& p) {
  const double x = h.h[0] * p.u + h.h[1] * p.v + h.h[2];
  const double y = h.h[3] * p.u + h.h[4] * p.v + h.h[5];
  const double w = h.h[6] * p.u + h.h[7] * p.v + h.h[8];
  if (std::abs(w) < 1e-12) return {1e30, 1e30};
  return {x / w, y / w};
}

inline double dist(const Vec2& a, const Vec2& b) {
  return std::hypot(a.u - b.u, a.v - b.v);
}

}  // namespace detail

// Matches = mutual nearest neighbors of warped source keypoints with the
// reprojection distance below threshold in both directions. Visibility =
// the warped coordinate falls inside the other image's bounds. Visible
// keypoints without a partner land in the unmatched sets.
inline GroundTruth compute_groundtruth(const KeypointSet& src,
                                       const KeypointSet& tgt,
                                       const Homography& h,
                                       double reproj_threshold_px) {
  if (reproj_threshold_px <= 0.0)
    throw ConfigError("compute_groundtruth: threshold must be > 0");
  const std::size_t m = src.size(), n = tgt.size();
  const Homography hinv = h.inverse();

  std::vector<Vec2> warped_s(m), warped_t(n);
  GroundTruth gt;
  gt.visible_s.assign(m, 0);
  gt.visible_t.assign(n, 0);
  for (std::size_t i = 0; i < m; ++i) {
    warped_s[i] = detail::warp_or_far(h, src.point(i));
    gt.visible_s[i] = tgt.image_size.contains(warped_s[i]) ? 1 : 0;
  }
  for (std::size_t j = 0; j < n; ++j) {
    warped_t[j] = detail::warp_or_far(hinv, tgt.point(j));
    gt.visible_t[j] = src.image_size.contains(warped_t[j]) ? 1 : 0;
  }

  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<std::size_t> nn_of_src(m, kNone), nn_of_tgt(n, kNone);
  std::vector<double> best_src(m, std::numeric_limits<double>::infinity());
  std::vector<double> best_tgt(n, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double d = detail::dist(warped_s[i], tgt.point(j));
      if (d < best_src[i]) {
        best_src[i] = d;
        nn_of_src[i] = j;
      }
      if (d < best_tgt[j]) {
        best_tgt[j] = d;
        nn_of_tgt[j] = i;
      }
    }

  std::vector<char> matched_s(m, 0), matched_t(n, 0);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = nn_of_src[i];
    if (j == kNone || nn_of_tgt[j] != i) continue;
    const double d_fwd = detail::dist(warped_s[i], tgt.point(j));
    const double d_bwd = detail::dist(warped_t[j], src.point(i));
    if (d_fwd < reproj_threshold_px && d_bwd < reproj_threshold_px) {
      gt.matches.emplace_back(i, j);
      matched_s[i] = matched_t[j] = 1;
    }
  }
  for (std::size_t i = 0; i < m; ++i)
    if (gt.visible_s[i] && !matched_s[i]) gt.unmatched_src.push_back(i);
  for (std::size_t j = 0; j < n; ++j)
    if (gt.visible_t[j] && !matched_t[j]) gt.unmatched_tgt.push_back(j);
  return gt;
}

// Least-squares DLT with Hartley normalization; >= 4 correspondences.
inline Homography dlt_homography(const std::vector<Vec2>& src,
                                 const std::vector<Vec2>& dst) {
  if (src.size() != dst.size() || src.size() < 4)
    throw DegenerateConfigError("dlt_homography: need >= 4 correspondences");
  const std::size_t n = src.size();

  auto normalizer = [](const std::vector<Vec2>& pts) {
    double cu = 0, cv = 0;
    for (const auto& p : pts) {
      cu += p.u;
      cv += p.v;
    }
    cu /= pts.size();
    cv /= pts.size();
    double mean_d = 0;
    for (const auto& p : pts) mean_d += std::hypot(p.u - cu, p.v - cv);
    mean_d /= pts.size();
    const double s = mean_d > 1e-12 ? std::sqrt(2.0) / mean_d : 1.0;
    Eigen::Matrix3d t;
    t << s, 0, -s * cu, 0, s, -s * cv, 0, 0, 1;
    return t;
  };
  const Eigen::Matrix3d ts = normalizer(src);
  const Eigen::Matrix3d td = normalizer(dst);

  Eigen::MatrixXd a(2 * n, 9);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d p = ts * Eigen::Vector3d(src[i].u, src[i].v, 1.0);
    const Eigen::Vector3d q = td * Eigen::Vector3d(dst[i].u, dst[i].v, 1.0);
    const double x = p(0), y = p(1), xp = q(0), yp = q(1);
    a.row(2 * i) << -x, -y, -1, 0, 0, 0, xp * x, xp * y, xp;
    a.row(2 * i + 1) << 0, 0, 0, -x, -y, -1, yp * x, yp * y, yp;
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  // Collinear configurations leave a >= 2-dimensional nullspace.
  if (sv(0) < 1e-12 || sv(7) / sv(0) < 1e-9)
    throw DegenerateConfigError("dlt_homography: degenerate configuration");
  const Eigen::VectorXd hvec = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << hvec(0), hvec(1), hvec(2), hvec(3), hvec(4), hvec(5), hvec(6), hvec(7),
      hvec(8);
  const Eigen::Matrix3d hd = td.inverse() * hn * ts;
  std::array<double, 9> out;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out[r * 3 + c] = hd(r, c);
  return Homography::from_matrix(out);
}

struct RansacResult {
  Homography h;
  std::vector<char> inlier_mask;
  std::size_t inlier_count = 0;
};

inline RansacResult ransac_homography(const std::vector<Vec2>& src,
                                      const std::vector<Vec2>& dst,
                                      double inlier_threshold_px,
                                      std::size_t iterations,
                                      std::uint64_t seed) {
  if (src.size() != dst.size() || src.size() < 4)
    throw EstimationFailedError("ransac_homography: fewer than 4 pairs");
  const std::size_t n = src.size();
  Rng rng(seed);

  auto count_inliers = [&](const Homography& h, std::vector<char>& mask) {
    std::size_t cnt = 0;
    mask.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const Vec2 w = detail::warp_or_far(h, src[i]);
      if (detail::dist(w, dst[i]) < inlier_threshold_px) {
        mask[i] = 1;
        ++cnt;
      }
    }
    return cnt;
  };

  std::size_t best_count = 0;
  std::vector<char> best_mask;
  for (std::size_t it = 0; it < iterations; ++it) {
    std::array<std::size_t, 4> idx;
    for (int k = 0; k < 4;) {
      const std::size_t cand = rng.below(n);
      bool dup = false;
      for (int q = 0; q < k; ++q) dup |= (idx[q] == cand);
      if (!dup) idx[k++] = cand;
    }
    std::vector<Vec2> s4, d4;
    for (auto i : idx) {
      s4.push_back(src[i]);
      d4.push_back(dst[i]);
    }
    Homography model;
    try {
      model = dlt_homography(s4, d4);
    } catch (const DegenerateConfigError&) {
      continue;
    }
    std::vector<char> mask;
    const std::size_t cnt = count_inliers(model, mask);
    if (cnt > best_count) {
      best_count = cnt;
      best_mask = std::move(mask);
    }
  }
  if (best_count < 4)
    throw EstimationFailedError("ransac_homography: fewer than 4 inliers");

  std::vector<Vec2> si, di;
  for (std::size_t i = 0; i < n; ++i)
    if (best_mask[i]) {
      si.push_back(src[i]);
      di.push_back(dst[i]);
    }
  RansacResult res;
  res.h = dlt_homography(si, di);
  res.inlier_count = count_inliers(res.h, res.inlier_mask);
  return res;
}

}  // namespace sceneglue::geom
