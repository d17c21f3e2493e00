#pragma once

#include <cmath>
#include <vector>

#include "sceneglue/tensor.hpp"
#include "sceneglue/types.hpp"

namespace sceneglue::assign {

struct UndefinedLossError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Match {
  std::size_t i;
  std::size_t j;
  double confidence;
};

// Raw inner products, deliberately without descriptor normalization; scaled
// by 1/C so score magnitudes stay in softmax-friendly range.
inline Tensor score_matrix(const Tensor& fs, const Tensor& ft) {
  if (fs.cols() != ft.cols())
    throw ConfigError("score_matrix: descriptor widths differ");
  return scale(matmul(fs, transpose(ft)),
               1.0 / static_cast<double>(fs.cols()));
}

// Log-domain Sinkhorn over the dustbin-augmented score matrix. Target
// marginals: each real row/column carries unit mass, the dustbin row/column
// absorbs N respectively M. Differentiable through every iteration.
inline Tensor partial_assignment(const Tensor& s, const Tensor& z,
                                 std::size_t iterations) {
  if (iterations < 1)
    throw ConfigError("partial_assignment: iterations must be >= 1");
  const std::size_t m = s.rows(), n = s.cols();
  Tape* tape = s.tape() ? s.tape() : z.tape();
  Tensor zmat = dustbin_augment(s, z);

  std::vector<double> lr(m + 1, 0.0);
  lr[m] = std::log(static_cast<double>(n));
  std::vector<double> lc(n + 1, 0.0);
  lc[n] = std::log(static_cast<double>(m));
  Tensor log_r = Tensor::from_values(tape, m + 1, 1, std::move(lr));
  Tensor log_c = Tensor::from_values(tape, 1, n + 1, std::move(lc));

  Tensor f(tape, m + 1, 1, 0.0);
  Tensor g(tape, 1, n + 1, 0.0);
  for (std::size_t it = 0; it < iterations; ++it) {
    f = sub(log_r, logsumexp_rows(add_rowvec(zmat, g)));
    g = sub(log_c, transpose(logsumexp_rows(transpose(add_colvec(zmat, f)))));
  }
  return add_rowvec(add_colvec(zmat, f), g);
}

// A pair (i, j) is kept iff it is the mutual argmax of the non-dustbin block
// and its probability clears the threshold. Ties break toward the lowest
// index. The result is a partial bijection by construction.
inline std::vector<Match> extract_matches(const Tensor& log_p, double theta) {
  if (theta <= 0.0 || theta >= 1.0)
    throw ConfigError("extract_matches: theta must be in (0, 1)");
  const std::size_t m = log_p.rows() - 1, n = log_p.cols() - 1;
  std::vector<std::size_t> row_best(m, 0), col_best(n, 0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 1; j < n; ++j)
      if (log_p.at(i, j) > log_p.at(i, row_best[i])) row_best[i] = j;
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 1; i < m; ++i)
      if (log_p.at(i, j) > log_p.at(col_best[j], j)) col_best[j] = i;
  std::vector<Match> out;
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = row_best[i];
    if (col_best[j] != i) continue;
    const double conf = std::exp(log_p.at(i, j));
    if (conf >= theta) out.push_back({i, j, conf});
  }
  return out;
}

// Negative log-likelihood over the supervised cells, in log domain,
// normalized by the supervision count.
inline Tensor feature_loss(const Tensor& log_p, const GroundTruth& gt) {
  const std::size_t m = log_p.rows() - 1, n = log_p.cols() - 1;
  std::vector<std::pair<std::size_t, std::size_t>> idx;
  for (auto [i, j] : gt.matches) idx.emplace_back(i, j);
  for (auto i : gt.unmatched_src) idx.emplace_back(i, n);
  for (auto j : gt.unmatched_tgt) idx.emplace_back(m, j);
  if (idx.empty())
    throw UndefinedLossError("feature_loss: empty supervision set");
  return scale(index_sum(log_p, idx), -1.0 / static_cast<double>(idx.size()));
}

inline Tensor hybrid_loss(const Tensor& feature, const Tensor& scene,
                          double alpha) {
  if (alpha < 0.0) throw ConfigError("hybrid_loss: alpha must be >= 0");
  return add(feature, scale(scene, alpha));
}

}  // namespace sceneglue::assign
