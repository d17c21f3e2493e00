#pragma once

#include <array>
#include <cmath>

#include "sceneglue/mlp.hpp"
#include "sceneglue/tensor.hpp"
#include "sceneglue/types.hpp"

namespace sceneglue::featrep {

// Multi-scale fusion: per-scale linear maps C_s -> C, concatenation to 4C,
// final linear 4C -> C.
struct MultiScaleFusionParams {
  std::array<Linear, kNumScales> per_scale;
  Linear final;
};

inline Tensor fuse_multiscale(const std::array<Tensor, kNumScales>& raw,
                              const MultiScaleFusionParams& params) {
  const std::size_t m = raw[0].rows();
  for (const auto& r : raw)
    if (r.rows() != m)
      throw ConfigError("fuse_multiscale: scale row counts disagree");
  Tensor cat;
  for (std::size_t s = 0; s < kNumScales; ++s) {
    Tensor proj = params.per_scale[s].apply(raw[s]);
    cat = s == 0 ? proj : concat_cols(cat, proj);
  }
  return params.final.apply(cat);
}

// Wave position encoder: amplitude from the descriptor, phase from the
// (normalized) position, combined through the Euler unfolding and fused
// back residually.
struct WavePeParams {
  Mlp mlp_a;      // C -> C -> C
  Mlp mlp_theta;  // 3 -> C -> C
  Mlp mlp_f;      // 2C -> C -> C
};

struct WaveEncoding {
  Tensor amplitude;  // M x C
  Tensor phase;      // M x C
  Tensor x0;         // M x C, position-aware descriptor
};

inline WaveEncoding wave_encode_full(const Tensor& d, const Tensor& p,
                                     const WavePeParams& params) {
  WaveEncoding out;
  out.amplitude = params.mlp_a.apply(d);
  out.phase = params.mlp_theta.apply(p);
  Tensor real = hadamard(out.amplitude, elem_cos(out.phase));
  Tensor imag = hadamard(out.amplitude, elem_sin(out.phase));
  out.x0 = add(d, params.mlp_f.apply(concat_cols(real, imag)));
  return out;
}

inline Tensor wave_encode(const Tensor& d, const Tensor& p,
                          const WavePeParams& params) {
  return wave_encode_full(d, p, params).x0;
}

// (u, v) mapped to [-1, 1] by image center and half-diagonal; confidence
// passes through raw.
inline Tensor normalize_positions(const KeypointSet& set, Tape* tape) {
  const double cx = set.image_size.width * 0.5;
  const double cy = set.image_size.height * 0.5;
  const double half_diag = 0.5 * std::hypot(set.image_size.width,
                                            set.image_size.height);
  std::vector<double> vals;
  vals.reserve(set.size() * 3);
  for (const auto& p : set.positions) {
    vals.push_back((p[0] - cx) / half_diag);
    vals.push_back((p[1] - cy) / half_diag);
    vals.push_back(p[2]);
  }
  return Tensor::from_values(tape, set.size(), 3, std::move(vals));
}

// Appends the two learnable scene descriptors as the last two token rows.
inline Tensor attach_scene_tokens(const Tensor& x0, const Tensor& scene_desc) {
  if (scene_desc.rows() != 2 || scene_desc.cols() != x0.cols())
    throw ConfigError("attach_scene_tokens: scene descriptor must be 2 x C");
  if (x0.rows() == 0) return scene_desc;
  return concat_rows(x0, scene_desc);
}

struct SplitTokens {
  Tensor local;  // M x C
  Tensor scene;  // 2 x C
};

inline SplitTokens split_scene_tokens(const Tensor& tokens) {
  if (tokens.rows() < 2)
    throw ConfigError("split_scene_tokens: missing scene rows");
  const std::size_t m = tokens.rows() - 2;
  return {slice_rows(tokens, 0, m), slice_rows(tokens, m, m + 2)};
}

}  // namespace sceneglue::featrep
