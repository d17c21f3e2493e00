#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "sceneglue/mlp.hpp"
#include "sceneglue/tensor.hpp"

namespace sceneglue::attn {

// One parallel-attention layer. Q/K/V projections are shared across the two
// images so a single source-query/target-key product can serve both
// cross-attention directions.
struct AttentionLayerParams {
  Tensor wq, wk, wv;  // C x C
  Mlp fuse;           // 2C -> C -> C
  Tensor ln_in_gain, ln_in_shift;    // pre-projection norm
  Tensor ln_out_gain, ln_out_shift;  // norm of the fused update
};

inline double attn_scale(std::size_t c) {
  return 1.0 / std::sqrt(static_cast<double>(c));
}

// softmax(QK^T / sqrt(C)) V on one token set.
inline Tensor self_attention(const Tensor& x, const AttentionLayerParams& p) {
  Tensor q = matmul(x, p.wq);
  Tensor k = matmul(x, p.wk);
  Tensor v = matmul(x, p.wv);
  Tensor a = softmax_rows(scale(matmul(q, transpose(k)), attn_scale(x.cols())));
  return matmul(a, v);
}

// Weight-shared cross attention: the score product A = Q_s K_t^T is formed
// once; msg_s = softmax(A) V_t and msg_t = softmax(A^T) V_s. No second
// query/key product is ever computed.
inline std::pair<Tensor, Tensor> shared_cross_attention(
    const Tensor& xs, const Tensor& xt, const AttentionLayerParams& p) {
  Tensor qs = matmul(xs, p.wq);
  Tensor kt = matmul(xt, p.wk);
  Tensor vs = matmul(xs, p.wv);
  Tensor vt = matmul(xt, p.wv);
  const double sc = attn_scale(xs.cols());
  Tensor a = matmul(qs, transpose(kt));
  Tensor msg_s = matmul(softmax_rows(scale(a, sc)), vt);
  Tensor msg_t = matmul(softmax_rows(scale(transpose(a), sc)), vs);
  return {msg_s, msg_t};
}

// Self and cross messages are computed from the same (pre-norm) layer input
// and fused by a two-layer MLP into a residual update.
inline std::pair<Tensor, Tensor> parallel_layer(const Tensor& xs,
                                                const Tensor& xt,
                                                const AttentionLayerParams& p) {
  Tensor ns = layer_norm_rows(xs, p.ln_in_gain, p.ln_in_shift);
  Tensor nt = layer_norm_rows(xt, p.ln_in_gain, p.ln_in_shift);
  Tensor self_s = self_attention(ns, p);
  Tensor self_t = self_attention(nt, p);
  auto [cross_s, cross_t] = shared_cross_attention(ns, nt, p);
  Tensor upd_s = layer_norm_rows(p.fuse.apply(concat_cols(self_s, cross_s)),
                                 p.ln_out_gain, p.ln_out_shift);
  Tensor upd_t = layer_norm_rows(p.fuse.apply(concat_cols(self_t, cross_t)),
                                 p.ln_out_gain, p.ln_out_shift);
  return {add(xs, upd_s), add(xt, upd_t)};
}

inline std::pair<Tensor, Tensor> stack_forward(
    const Tensor& xs, const Tensor& xt,
    const std::vector<AttentionLayerParams>& layers) {
  if (layers.empty()) throw std::invalid_argument("stack_forward: L must be >= 1");
  Tensor s = xs, t = xt;
  for (const auto& layer : layers) std::tie(s, t) = parallel_layer(s, t, layer);
  return {s, t};
}

}  // namespace sceneglue::attn
