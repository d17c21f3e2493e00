#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "sceneglue/geometry.hpp"
#include "sceneglue/rng.hpp"
#include "sceneglue/types.hpp"

namespace sceneglue::synth {

// Generation knobs. Descriptors follow a cluster-latent model: each keypoint
// carries a shared latent (cluster center plus a unique offset) observed in
// both images with independent Gaussian noise, so that corresponding
// keypoints have correlated features, repeated structure confuses plain
// nearest-neighbor matching, and distractors correlate with nothing.
struct GenConfig {
  std::size_t num_src = 64;                 // M
  std::size_t num_tgt = 64;                 // N
  double image_width = 640.0;
  double image_height = 480.0;
  double corner_jitter_frac = 0.25;
  double descriptor_noise = 0.3;            // sigma
  double distractor_frac = 0.2;
  double drop_frac = 0.2;
  std::array<std::size_t, kNumScales> scale_dims{16, 16, 16, 16};
  double reproj_threshold_px = 3.0;
  std::size_t latent_clusters = 8;          // repetitive-texture analog
  double latent_unique_scale = 0.5;         // cluster-offset magnitude
  bool photometric_bias = true;             // per-image illumination analog
  double photometric_bias_sigma = 0.5;
};

struct SyntheticPair {
  KeypointSet source;
  KeypointSet target;
  geom::Homography h;
  GroundTruth gt;
};

// DLT fit of the image corners onto uniformly jittered corners; resamples
// on near-degeneracy, bounded at 100 attempts.
inline geom::Homography sample_homography(const ImageSize& size,
                                          double corner_jitter_frac,
                                          std::uint64_t seed) {
  if (corner_jitter_frac < 0.0 || corner_jitter_frac >= 0.5)
    throw ConfigError("sample_homography: corner_jitter_frac must be in [0, 0.5)");
  Rng rng(seed);
  const double w = size.width, h = size.height;
  const std::vector<Vec2> corners{{0, 0}, {w, 0}, {w, h}, {0, h}};
  if (corner_jitter_frac == 0.0) return geom::Homography::identity();
  const double amp = corner_jitter_frac * std::min(w, h);
  for (int attempt = 0; attempt < 100; ++attempt) {
    std::vector<Vec2> jittered;
    jittered.reserve(4);
    for (const auto& c : corners)
      jittered.push_back({c.u + rng.uniform(-amp, amp),
                          c.v + rng.uniform(-amp, amp)});
    try {
      geom::Homography hom = geom::dlt_homography(corners, jittered);
      if (std::abs(hom.det()) > 1e-6) return hom;
    } catch (const DegenerateConfigError&) {
    }
  }
  throw ConfigError("sample_homography: no invertible sample in 100 attempts");
}

namespace detail {

struct Latent {
  // One vector per scale, length scale_dims[s].
  std::array<std::vector<double>, kNumScales> per_scale;
};

inline Latent draw_latent(const GenConfig& cfg,
                          const std::vector<Latent>& centers, Rng& rng) {
  const std::size_t c = rng.below(centers.size());
  Latent l = centers[c];
  for (std::size_t s = 0; s < kNumScales; ++s)
    for (auto& v : l.per_scale[s]) v += cfg.latent_unique_scale * rng.normal();
  return l;
}

inline std::vector<Vec2> sample_positions(std::size_t count,
                                          const ImageSize& size, Rng& rng) {
  // Keep a 1 px minimum separation so groundtruth nearest-neighbor
  // assignment stays unambiguous.
  if (size.width * size.height < 4.0 * static_cast<double>(count))
    throw ConfigError("generate_pair: image too small for keypoint count");
  std::vector<Vec2> pts;
  pts.reserve(count);
  while (pts.size() < count) {
    bool placed = false;
    for (int attempt = 0; attempt < 1000; ++attempt) {
      Vec2 p{rng.uniform(0.0, size.width), rng.uniform(0.0, size.height)};
      bool ok = true;
      for (const auto& q : pts)
        if (std::hypot(p.u - q.u, p.v - q.v) < 1.0) {
          ok = false;
          break;
        }
      if (ok) {
        pts.push_back(p);
        placed = true;
        break;
      }
    }
    if (!placed)
      throw ConfigError("generate_pair: cannot place keypoints 1 px apart");
  }
  return pts;
}

inline void emit_features(KeypointSet& set, const std::vector<Latent>& latents,
                          const GenConfig& cfg, Rng& rng) {
  // Per-image, per-scale illumination analog shared by every keypoint.
  std::array<std::vector<double>, kNumScales> bias;
  for (std::size_t s = 0; s < kNumScales; ++s) {
    bias[s].assign(cfg.scale_dims[s], 0.0);
    if (cfg.photometric_bias)
      for (auto& v : bias[s]) v = cfg.photometric_bias_sigma * rng.normal();
  }
  set.scale_dims = cfg.scale_dims;
  for (std::size_t s = 0; s < kNumScales; ++s) {
    set.raw_features[s].resize(latents.size() * cfg.scale_dims[s]);
    for (std::size_t i = 0; i < latents.size(); ++i)
      for (std::size_t d = 0; d < cfg.scale_dims[s]; ++d)
        set.raw_features[s][i * cfg.scale_dims[s] + d] =
            latents[i].per_scale[s][d] + bias[s][d] +
            cfg.descriptor_noise * rng.normal();
  }
}

}  // namespace detail

inline SyntheticPair generate_pair(const GenConfig& cfg, std::uint64_t seed) {
  if (cfg.num_src < 8 || cfg.num_tgt < 8)
    throw ConfigError("generate_pair: M, N must be >= 8");
  if (cfg.descriptor_noise < 0.0)
    throw ConfigError("generate_pair: descriptor noise must be >= 0");

  const ImageSize size{cfg.image_width, cfg.image_height};
  Rng hom_rng = Rng::stream(seed, 1);
  Rng pos_rng = Rng::stream(seed, 2);
  Rng lat_rng = Rng::stream(seed, 3);
  Rng tgt_rng = Rng::stream(seed, 4);
  Rng feat_rng_s = Rng::stream(seed, 5);
  Rng feat_rng_t = Rng::stream(seed, 6);
  Rng conf_rng = Rng::stream(seed, 7);

  SyntheticPair pair;
  pair.h = sample_homography(size, cfg.corner_jitter_frac, hom_rng.next_u64());

  // Cluster centers shared by this pair.
  std::vector<detail::Latent> centers(std::max<std::size_t>(cfg.latent_clusters, 1));
  for (auto& c : centers)
    for (std::size_t s = 0; s < kNumScales; ++s) {
      c.per_scale[s].resize(cfg.scale_dims[s]);
      for (auto& v : c.per_scale[s]) v = lat_rng.normal();
    }

  // Source keypoints with their latent identities.
  const std::vector<Vec2> src_pts = detail::sample_positions(cfg.num_src, size, pos_rng);
  std::vector<detail::Latent> src_lat;
  src_lat.reserve(cfg.num_src);
  for (std::size_t i = 0; i < cfg.num_src; ++i)
    src_lat.push_back(detail::draw_latent(cfg, centers, lat_rng));

  pair.source.image_size = size;
  for (const auto& p : src_pts)
    pair.source.positions.push_back({p.u, p.v, conf_rng.uniform(0.5, 1.0)});

  // Target = surviving warped source keypoints + distractors + padding.
  std::vector<Vec2> tgt_pts;
  std::vector<detail::Latent> tgt_lat;
  for (std::size_t i = 0; i < cfg.num_src && tgt_pts.size() < cfg.num_tgt; ++i) {
    if (tgt_rng.uniform() < cfg.drop_frac) continue;
    const Vec2 w = geom::detail::warp_or_far(pair.h, src_pts[i]);
    if (!size.contains(w)) continue;
    Vec2 jittered{w.u + tgt_rng.uniform(-0.5, 0.5),
                  w.v + tgt_rng.uniform(-0.5, 0.5)};
    jittered.u = std::clamp(jittered.u, 0.0, size.width - 1e-6);
    jittered.v = std::clamp(jittered.v, 0.0, size.height - 1e-6);
    tgt_pts.push_back(jittered);
    tgt_lat.push_back(src_lat[i]);
  }
  const std::size_t want_distractors = std::min(
      cfg.num_tgt - tgt_pts.size(),
      static_cast<std::size_t>(cfg.distractor_frac * cfg.num_tgt));
  for (std::size_t k = 0; k < want_distractors; ++k) {
    tgt_pts.push_back({tgt_rng.uniform(0.0, size.width),
                       tgt_rng.uniform(0.0, size.height)});
    tgt_lat.push_back(detail::draw_latent(cfg, centers, lat_rng));
  }
  while (tgt_pts.size() < cfg.num_tgt) {
    tgt_pts.push_back({tgt_rng.uniform(0.0, size.width),
                       tgt_rng.uniform(0.0, size.height)});
    tgt_lat.push_back(detail::draw_latent(cfg, centers, lat_rng));
  }

  // Deterministic shuffle so survivor order carries no signal.
  std::vector<std::size_t> perm(cfg.num_tgt);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = cfg.num_tgt; i > 1; --i)
    std::swap(perm[i - 1], perm[tgt_rng.below(i)]);
  pair.target.image_size = size;
  std::vector<detail::Latent> tgt_lat_perm(cfg.num_tgt);
  for (std::size_t i = 0; i < cfg.num_tgt; ++i) {
    const auto& p = tgt_pts[perm[i]];
    pair.target.positions.push_back({p.u, p.v, conf_rng.uniform(0.5, 1.0)});
    tgt_lat_perm[i] = tgt_lat[perm[i]];
  }

  detail::emit_features(pair.source, src_lat, cfg, feat_rng_s);
  detail::emit_features(pair.target, tgt_lat_perm, cfg, feat_rng_t);

  pair.gt = geom::compute_groundtruth(pair.source, pair.target, pair.h,
                                      cfg.reproj_threshold_px);
  return pair;
}

// Pair i of a stream depends only on (seed, i).
inline SyntheticPair stream_pair(const GenConfig& cfg, std::uint64_t seed,
                                 std::uint64_t index) {
  return generate_pair(cfg, Rng::stream(seed, 0x5347, index).next_u64());
}

inline std::vector<SyntheticPair> dataset_stream(const GenConfig& cfg,
                                                 std::uint64_t seed,
                                                 std::size_t count) {
  if (count < 1) throw ConfigError("dataset_stream: count must be >= 1");
  std::vector<SyntheticPair> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(stream_pair(cfg, seed, i));
  return out;
}

}  // namespace sceneglue::synth
