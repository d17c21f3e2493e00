#pragma once

#include <vector>

#include "sceneglue/tensor.hpp"

namespace sceneglue {

// Affine layer, x(in) -> x*W + b. W is in x out, b is 1 x out.
struct Linear {
  Tensor w;
  Tensor b;

  Tensor apply(const Tensor& x) const { return add_rowvec(matmul(x, w), b); }
};

enum class Activation { kNone, kGelu };

// Affine -> activation -> affine -> ... (no activation after the last layer).
struct Mlp {
  std::vector<Linear> layers;

  Tensor apply(const Tensor& x, Activation act = Activation::kGelu) const {
    Tensor h = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      h = layers[i].apply(h);
      if (i + 1 < layers.size() && act == Activation::kGelu) h = gelu(h);
    }
    return h;
  }
};

inline Tensor mlp_apply(const Tensor& x, const Mlp& mlp,
                        Activation act = Activation::kGelu) {
  return mlp.apply(x, act);
}

}  // namespace sceneglue
