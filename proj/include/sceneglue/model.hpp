#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sceneglue/assignment.hpp"
#include "sceneglue/attention.hpp"
#include "sceneglue/featrep.hpp"
#include "sceneglue/synthdata.hpp"
#include "sceneglue/visibility.hpp"

namespace sceneglue::model {

struct ModelConfig {
  std::size_t channels = 32;  // C
  std::size_t layers = 3;     // L
  std::array<std::size_t, kNumScales> scale_dims{16, 16, 16, 16};
  std::size_t spatial_hidden = 8;  // h_s
  std::size_t sinkhorn_iters_train = 100;
  std::size_t sinkhorn_iters_infer = 50;
  double match_threshold = 0.2;  // theta
  double alpha = 8.0;
};

struct ModelParams {
  featrep::MultiScaleFusionParams fusion;
  featrep::WavePeParams wave;
  std::vector<attn::AttentionLayerParams> layers;
  vis::VisibilityParams visibility;
  Tensor scene_desc;  // shared learnable 2 x C
  Tensor dustbin;     // 1 x 1
};

// Stable enumeration of every learnable tensor; ordering defines the
// checkpoint layout and the optimizer state indexing.
inline void for_each_param(ModelParams& p,
                           const std::function<void(const std::string&, Tensor&)>& fn) {
  for (std::size_t s = 0; s < kNumScales; ++s) {
    fn("fusion.scale" + std::to_string(s) + ".w", p.fusion.per_scale[s].w);
    fn("fusion.scale" + std::to_string(s) + ".b", p.fusion.per_scale[s].b);
  }
  fn("fusion.final.w", p.fusion.final.w);
  fn("fusion.final.b", p.fusion.final.b);
  auto walk_mlp = [&](const std::string& prefix, Mlp& mlp) {
    for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
      fn(prefix + ".l" + std::to_string(i) + ".w", mlp.layers[i].w);
      fn(prefix + ".l" + std::to_string(i) + ".b", mlp.layers[i].b);
    }
  };
  walk_mlp("wave.mlp_a", p.wave.mlp_a);
  walk_mlp("wave.mlp_theta", p.wave.mlp_theta);
  walk_mlp("wave.mlp_f", p.wave.mlp_f);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const std::string pre = "attn" + std::to_string(l);
    auto& layer = p.layers[l];
    fn(pre + ".wq", layer.wq);
    fn(pre + ".wk", layer.wk);
    fn(pre + ".wv", layer.wv);
    walk_mlp(pre + ".fuse", layer.fuse);
    fn(pre + ".ln_in.gain", layer.ln_in_gain);
    fn(pre + ".ln_in.shift", layer.ln_in_shift);
    fn(pre + ".ln_out.gain", layer.ln_out_gain);
    fn(pre + ".ln_out.shift", layer.ln_out_shift);
  }
  fn("vis.spatial_w1", p.visibility.spatial_w1);
  fn("vis.spatial_w2", p.visibility.spatial_w2);
  fn("vis.channel_w1", p.visibility.channel_w1);
  fn("vis.channel_w2", p.visibility.channel_w2);
  fn("vis.wq", p.visibility.wq);
  fn("vis.wk", p.visibility.wk);
  fn("vis.wv", p.visibility.wv);
  fn("vis.out_proj", p.visibility.out_proj);
  walk_mlp("vis.group", p.visibility.group);
  fn("scene_desc", p.scene_desc);
  fn("dustbin", p.dustbin);
}

namespace detail {

// Orthogonalizes a Gaussian draw with modified Gram-Schmidt.
inline Tensor orthogonal_init(std::size_t n, Rng& rng) {
  Tensor t = random_normal(nullptr, n, n, rng);
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t prev = 0; prev < c; ++prev) {
      double dot = 0.0;
      for (std::size_t r = 0; r < n; ++r) dot += t.at(r, c) * t.at(r, prev);
      for (std::size_t r = 0; r < n; ++r) t.at(r, c) -= dot * t.at(r, prev);
    }
    double norm = 0.0;
    for (std::size_t r = 0; r < n; ++r) norm += t.at(r, c) * t.at(r, c);
    norm = std::sqrt(norm);
    if (norm < 1e-12) norm = 1.0;
    for (std::size_t r = 0; r < n; ++r) t.at(r, c) /= norm;
  }
  return t;
}

inline Linear kaiming_linear(std::size_t in, std::size_t out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in));
  return {random_uniform(nullptr, in, out, rng, -limit, limit),
          Tensor(nullptr, 1, out, 0.0)};
}

inline Linear zero_linear(std::size_t in, std::size_t out) {
  return {Tensor(nullptr, in, out, 0.0), Tensor(nullptr, 1, out, 0.0)};
}

}  // namespace detail

inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng = Rng::stream(seed, 0x1297);
  const std::size_t c = cfg.channels;
  ModelParams p;
  for (std::size_t s = 0; s < kNumScales; ++s)
    p.fusion.per_scale[s] = detail::kaiming_linear(cfg.scale_dims[s], c, rng);
  p.fusion.final = detail::kaiming_linear(kNumScales * c, c, rng);
  p.wave.mlp_a.layers = {detail::kaiming_linear(c, c, rng),
                         detail::kaiming_linear(c, c, rng)};
  p.wave.mlp_theta.layers = {detail::kaiming_linear(3, c, rng),
                             detail::kaiming_linear(c, c, rng)};
  p.wave.mlp_f.layers = {detail::kaiming_linear(2 * c, c, rng),
                         detail::kaiming_linear(c, c, rng)};
  p.layers.resize(cfg.layers);
  for (auto& layer : p.layers) {
    layer.wq = detail::orthogonal_init(c, rng);
    layer.wk = detail::orthogonal_init(c, rng);
    layer.wv = detail::orthogonal_init(c, rng);
    // Zeroed final fusion layer makes each attention block start as identity.
    layer.fuse.layers = {detail::kaiming_linear(2 * c, c, rng),
                         detail::zero_linear(c, c)};
    layer.ln_in_gain = Tensor(nullptr, 1, c, 1.0);
    layer.ln_in_shift = Tensor(nullptr, 1, c, 0.0);
    layer.ln_out_gain = Tensor(nullptr, 1, c, 1.0);
    layer.ln_out_shift = Tensor(nullptr, 1, c, 0.0);
  }
  const double h_s_limit = std::sqrt(6.0 / 2.0);
  p.visibility.spatial_w1 =
      random_uniform(nullptr, cfg.spatial_hidden, 2, rng, -h_s_limit, h_s_limit);
  const double h_s_limit2 = std::sqrt(6.0 / static_cast<double>(cfg.spatial_hidden));
  p.visibility.spatial_w2 =
      random_uniform(nullptr, 2, cfg.spatial_hidden, rng, -h_s_limit2, h_s_limit2);
  const double ch_limit = std::sqrt(6.0 / static_cast<double>(c));
  p.visibility.channel_w1 = random_uniform(nullptr, c, c, rng, -ch_limit, ch_limit);
  p.visibility.channel_w2 = random_uniform(nullptr, c, c, rng, -ch_limit, ch_limit);
  p.visibility.wq = detail::orthogonal_init(c, rng);
  p.visibility.wk = detail::orthogonal_init(c, rng);
  p.visibility.wv = detail::orthogonal_init(c, rng);
  p.visibility.out_proj = detail::orthogonal_init(c, rng);
  p.visibility.group.layers = {detail::kaiming_linear(c, c, rng),
                               detail::kaiming_linear(c, 2, rng)};
  p.scene_desc = random_normal(nullptr, 2, c, rng, 0.1);
  p.dustbin = Tensor(nullptr, 1, 1, 0.0);
  return p;
}

// Full pipeline output for one pair.
struct ForwardResult {
  Tensor log_p;  // (M+1) x (N+1)
  vis::VisibilityPrediction vis_s;
  vis::VisibilityPrediction vis_t;
  std::vector<assign::Match> matches;
};

namespace detail {

inline std::array<Tensor, kNumScales> raw_feature_tensors(const KeypointSet& set,
                                                          Tape* tape) {
  std::array<Tensor, kNumScales> out;
  for (std::size_t s = 0; s < kNumScales; ++s)
    out[s] = Tensor::from_values(tape, set.size(), set.scale_dims[s],
                                 set.raw_features[s]);
  return out;
}

}  // namespace detail

// fused multi-scale descriptor + wave position encoding for one image.
inline Tensor encode_keypoints(ModelParams& params, const KeypointSet& set,
                               Tape* tape) {
  Tensor d = featrep::fuse_multiscale(detail::raw_feature_tensors(set, tape),
                                      params.fusion);
  Tensor p = featrep::normalize_positions(set, tape);
  return featrep::wave_encode(d, p, params.wave);
}

inline ForwardResult forward_pair(ModelParams& params, const ModelConfig& cfg,
                                  const KeypointSet& src, const KeypointSet& tgt,
                                  Tape* tape, std::size_t sinkhorn_iters) {
  // Rebind persistent parameters onto this tape.
  ModelParams bound = params;
  for_each_param(bound, [tape](const std::string&, Tensor& t) { t = t.on(tape); });

  Tensor x0_s = encode_keypoints(bound, src, tape);
  Tensor x0_t = encode_keypoints(bound, tgt, tape);
  Tensor tok_s = featrep::attach_scene_tokens(x0_s, bound.scene_desc);
  Tensor tok_t = featrep::attach_scene_tokens(x0_t, bound.scene_desc);
  auto [out_s, out_t] = attn::stack_forward(tok_s, tok_t, bound.layers);
  auto split_s = featrep::split_scene_tokens(out_s);
  auto split_t = featrep::split_scene_tokens(out_t);

  ForwardResult res;
  res.vis_s = vis::visibility_transform(split_s.local, split_s.scene,
                                        bound.visibility);
  res.vis_t = vis::visibility_transform(split_t.local, split_t.scene,
                                        bound.visibility);
  Tensor scores = assign::score_matrix(split_s.local, split_t.local);
  res.log_p = assign::partial_assignment(scores, bound.dustbin, sinkhorn_iters);
  res.matches = assign::extract_matches(res.log_p, cfg.match_threshold);
  return res;
}

struct Losses {
  Tensor feature;
  Tensor scene;
  Tensor total;
};

inline Losses compute_losses(const ForwardResult& fwd, const GroundTruth& gt,
                             double alpha) {
  Losses l;
  l.feature = assign::feature_loss(fwd.log_p, gt);
  l.scene = vis::scene_loss(fwd.vis_s, fwd.vis_t, gt);
  l.total = assign::hybrid_loss(l.feature, l.scene, alpha);
  return l;
}

}  // namespace sceneglue::model
