#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace sceneglue {

struct Vec2 {
  double u = 0.0;
  double v = 0.0;
};

struct ImageSize {
  double width = 0.0;
  double height = 0.0;
  bool contains(const Vec2& p) const {
    return p.u >= 0.0 && p.u < width && p.v >= 0.0 && p.v < height;
  }
};

constexpr std::size_t kNumScales = 4;  // resolutions 1, 1/2, 1/4, 1/8

// One image's keypoints: positions (u, v, confidence) plus raw per-scale
// features, row-major M x C_s per scale.
struct KeypointSet {
  std::vector<std::array<double, 3>> positions;
  std::array<std::vector<double>, kNumScales> raw_features;
  std::array<std::size_t, kNumScales> scale_dims{};
  ImageSize image_size;

  std::size_t size() const { return positions.size(); }
  Vec2 point(std::size_t i) const {
    return {positions[i][0], positions[i][1]};
  }
};

// Groundtruth labels for one pair: matches, unmatched-but-visible index
// sets, and per-keypoint cross-view visibility.
struct GroundTruth {
  std::vector<std::pair<std::size_t, std::size_t>> matches;
  std::vector<std::size_t> unmatched_src;
  std::vector<std::size_t> unmatched_tgt;
  std::vector<int> visible_s;
  std::vector<int> visible_t;
};

struct DegeneratePointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DegenerateConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EstimationFailedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace sceneglue
