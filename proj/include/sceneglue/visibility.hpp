#pragma once

#include <vector>

#include "sceneglue/mlp.hpp"
#include "sceneglue/tensor.hpp"
#include "sceneglue/types.hpp"

namespace sceneglue::vis {

// Visible class is column 0 of the probability rows.
constexpr std::size_t kVisibleClass = 0;
constexpr double kBceEps = 1e-7;

struct VisibilityParams {
  Tensor spatial_w1;  // h_s x 2
  Tensor spatial_w2;  // 2 x h_s
  Tensor channel_w1;  // C x h_c
  Tensor channel_w2;  // h_c x C
  Tensor wq, wk, wv;  // C x C
  Tensor out_proj;    // C x C
  Mlp group;          // C -> h_g -> 2
};

struct VisibilityPrediction {
  Tensor logits;  // M x 2
  Tensor probs;   // M x 2, rows on the simplex
};

// Residual mixing across the 2 scene rows, per channel column.
inline Tensor spatial_mlp(const Tensor& scene, const VisibilityParams& p) {
  if (scene.rows() != 2)
    throw ConfigError("spatial_mlp: expected exactly 2 scene rows");
  return add(scene, matmul(p.spatial_w2, gelu(matmul(p.spatial_w1, scene))));
}

// Residual per-row channel mixing.
inline Tensor channel_mlp(const Tensor& x, const VisibilityParams& p) {
  if (x.cols() != p.channel_w1.rows())
    throw ConfigError("channel_mlp: width mismatch");
  return add(x, matmul(gelu(matmul(x, p.channel_w1)), p.channel_w2));
}

// Scene descriptors act as queries over the local descriptors; the 2 x C
// attended summary is distributed back to keypoints through the transpose of
// the attention weights, linearly projected and added residually, then a
// group MLP produces the 2-class logits.
inline VisibilityPrediction visibility_transform(const Tensor& local,
                                                 const Tensor& scene,
                                                 const VisibilityParams& p) {
  if (local.rows() < 1)
    throw ConfigError("visibility_transform: need at least one keypoint");
  Tensor scene2 = channel_mlp(spatial_mlp(scene, p), p);
  Tensor q = matmul(scene2, p.wq);
  Tensor k = matmul(local, p.wk);
  Tensor v = matmul(local, p.wv);
  const double sc = 1.0 / std::sqrt(static_cast<double>(local.cols()));
  Tensor weights = softmax_rows(scale(matmul(q, transpose(k)), sc));  // 2 x M
  Tensor attended = matmul(weights, v);                               // 2 x C
  Tensor distributed = matmul(transpose(weights), attended);          // M x C
  Tensor fused = add(local, matmul(distributed, p.out_proj));
  VisibilityPrediction out;
  out.logits = p.group.apply(fused);
  out.probs = softmax_rows(out.logits);
  return out;
}

namespace detail {

inline Tensor bce_sum(const Tensor& probs, const std::vector<int>& labels,
                      Tape* tape) {
  if (probs.rows() != labels.size())
    throw ConfigError("scene_loss: prediction/label length mismatch");
  const std::size_t m = labels.size();
  std::vector<double> y(m), yneg(m);
  for (std::size_t i = 0; i < m; ++i) {
    y[i] = labels[i] ? 1.0 : 0.0;
    yneg[i] = 1.0 - y[i];
  }
  Tensor yt = Tensor::from_values(tape, m, 1, std::move(y));
  Tensor ynt = Tensor::from_values(tape, m, 1, std::move(yneg));
  Tensor ones = Tensor(tape, m, 1, 1.0);
  Tensor b = clamp(slice_cols(probs, kVisibleClass, kVisibleClass + 1),
                   kBceEps, 1.0 - kBceEps);
  Tensor pos = hadamard(yt, elem_log(b));
  Tensor neg = hadamard(ynt, elem_log(sub(ones, b)));
  return sum_all(add(pos, neg));
}

}  // namespace detail

// Mean binary cross-entropy over all keypoints of both images.
inline Tensor scene_loss(const VisibilityPrediction& pred_s,
                         const VisibilityPrediction& pred_t,
                         const GroundTruth& gt) {
  Tape* tape = pred_s.probs.tape();
  const double total = static_cast<double>(gt.visible_s.size() +
                                           gt.visible_t.size());
  Tensor s = detail::bce_sum(pred_s.probs, gt.visible_s, tape);
  Tensor t = detail::bce_sum(pred_t.probs, gt.visible_t, tape);
  return scale(add(s, t), -1.0 / total);
}

}  // namespace sceneglue::vis
