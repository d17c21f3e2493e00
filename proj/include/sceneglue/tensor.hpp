#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sceneglue/rng.hpp"

namespace sceneglue {

// Dense 2-D tensor participating in a reverse-mode gradient tape.
// Everything in the pipeline is a matrix (scalars are 1x1), double precision.

struct Storage {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> value;
  std::vector<double> grad;  // allocated lazily during backward

  std::size_t size() const { return rows * cols; }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
  void zero_grad() {
    if (!grad.empty()) grad.assign(grad.size(), 0.0);
  }
};

using StoragePtr = std::shared_ptr<Storage>;

class Tape;

class Tensor {
 public:
  Tensor() = default;
  Tensor(Tape* tape, std::size_t rows, std::size_t cols, double fill = 0.0)
      : tape_(tape), st_(std::make_shared<Storage>()) {
    st_->rows = rows;
    st_->cols = cols;
    st_->value.assign(rows * cols, fill);
  }

  static Tensor from_values(Tape* tape, std::size_t rows, std::size_t cols,
                            std::vector<double> vals) {
    if (vals.size() != rows * cols)
      throw std::invalid_argument("Tensor::from_values: shape/data mismatch");
    Tensor t(tape, rows, cols);
    t.st_->value = std::move(vals);
    return t;
  }

  std::size_t rows() const { return st_->rows; }
  std::size_t cols() const { return st_->cols; }
  std::size_t size() const { return st_->size(); }
  bool valid() const { return st_ != nullptr; }

  double& at(std::size_t i, std::size_t j) {
    return st_->value[i * st_->cols + j];
  }
  double at(std::size_t i, std::size_t j) const {
    return st_->value[i * st_->cols + j];
  }
  double scalar() const {
    if (size() != 1) throw std::logic_error("Tensor::scalar: not a scalar");
    return st_->value[0];
  }
  std::vector<double>& value() { return st_->value; }
  const std::vector<double>& value() const { return st_->value; }
  const std::vector<double>& grad() const { return st_->grad; }

  Tape* tape() const { return tape_; }
  const StoragePtr& storage() const { return st_; }

  // Rebinds the same storage to a tape; used to put persistent parameters
  // onto the per-step tape so gradients accumulate into their storage.
  Tensor on(Tape* tape) const {
    Tensor t = *this;
    t.tape_ = tape;
    return t;
  }

 private:
  Tape* tape_ = nullptr;
  StoragePtr st_;
};

// Ordered op record; creation order is topological order by construction.
class Tape {
 public:
  void record(std::function<void()> backward_fn) {
    entries_.push_back(std::move(backward_fn));
  }

  std::size_t node_count() const { return entries_.size(); }

  // Seeds d(loss)/d(loss) = 1 and walks the tape in reverse. Leaves never
  // written by an upstream grad keep empty grad buffers and are skipped.
  void backward(const Tensor& loss) {
    if (loss.size() != 1) throw std::logic_error("backward: loss must be scalar");
    loss.storage()->ensure_grad();
    loss.storage()->grad[0] = 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  }

  void clear() { entries_.clear(); }

 private:
  std::vector<std::function<void()>> entries_;
};

// Counts matmul invocations; used to verify the cross-attention
// weight-sharing actually saves a score product.
inline std::uint64_t& matmul_counter() {
  thread_local std::uint64_t c = 0;
  return c;
}

namespace detail {

inline void check_finite(const char* op, const Storage& s) {
  for (double v : s.value)
    if (!std::isfinite(v))
      throw std::runtime_error(std::string("non-finite value produced by op '") +
                               op + "'");
}

inline Tape* joint_tape(const Tensor& a, const Tensor& b) {
  if (a.tape() && b.tape() && a.tape() != b.tape())
    throw std::logic_error("operands recorded on different tapes");
  return a.tape() ? a.tape() : b.tape();
}

inline Tensor make_out(const char* op, Tape* tape, std::size_t r, std::size_t c,
                       std::vector<double> vals) {
  Tensor out = Tensor::from_values(tape, r, c, std::move(vals));
  check_finite(op, *out.storage());
  return out;
}

inline bool has_grad(const StoragePtr& s) { return !s->grad.empty(); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitive ops

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: inner extents disagree");
  ++matmul_counter();
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = bv.data() + p * n;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  Tape* tape = detail::joint_tape(a, b);
  Tensor c = detail::make_out("matmul", tape, m, n, std::move(out));
  if (tape) {
    auto sa = a.storage(), sb = b.storage(), sc = c.storage();
    tape->record([sa, sb, sc, m, k, n] {
      if (!detail::has_grad(sc)) return;
      sa->ensure_grad();
      sb->ensure_grad();
      // dA = dC * B^T
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* gcrow = sc->grad.data() + i * n;
          const double* brow = sb->value.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) acc += gcrow[j] * brow[j];
          sa->grad[i * k + p] += acc;
        }
      // dB = A^T * dC
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t i = 0; i < m; ++i) {
          const double aip = sa->value[i * k + p];
          if (aip == 0.0) continue;
          const double* gcrow = sc->grad.data() + i * n;
          double* gbrow = sb->grad.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * gcrow[j];
        }
    });
  }
  return c;
}

inline Tensor transpose(const Tensor& x) {
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x.at(i, j);
  Tensor y = detail::make_out("transpose", x.tape(), n, m, std::move(out));
  if (x.tape()) {
    auto sx = x.storage(), sy = y.storage();
    x.tape()->record([sx, sy, m, n] {
      if (!detail::has_grad(sy)) return;
      sx->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
          sx->grad[i * n + j] += sy->grad[j * m + i];
    });
  }
  return y;
}

namespace detail {

template <typename Fwd, typename Bwd>
Tensor binary_elemwise(const char* op, const Tensor& a, const Tensor& b,
                       Fwd fwd, Bwd bwd) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = fwd(a.value()[i], b.value()[i]);
  Tape* tape = joint_tape(a, b);
  Tensor c = make_out(op, tape, a.rows(), a.cols(), std::move(out));
  if (tape) {
    auto sa = a.storage(), sb = b.storage(), sc = c.storage();
    tape->record([sa, sb, sc, bwd] {
      if (!has_grad(sc)) return;
      sa->ensure_grad();
      sb->ensure_grad();
      for (std::size_t i = 0; i < sc->grad.size(); ++i) {
        auto [da, db] = bwd(sa->value[i], sb->value[i]);
        sa->grad[i] += da * sc->grad[i];
        sb->grad[i] += db * sc->grad[i];
      }
    });
  }
  return c;
}

template <typename Fwd, typename Bwd>
Tensor unary_elemwise(const char* op, const Tensor& x, Fwd fwd, Bwd bwd) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x.value()[i]);
  Tensor y = make_out(op, x.tape(), x.rows(), x.cols(), std::move(out));
  if (x.tape()) {
    auto sx = x.storage(), sy = y.storage();
    x.tape()->record([sx, sy, bwd] {
      if (!has_grad(sy)) return;
      sx->ensure_grad();
      for (std::size_t i = 0; i < sy->grad.size(); ++i)
        sx->grad[i] += bwd(sx->value[i], sy->value[i]) * sy->grad[i];
    });
  }
  return y;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_elemwise(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return std::pair<double, double>{1.0, 1.0}; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_elemwise(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return std::pair<double, double>{1.0, -1.0}; });
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
  return detail::binary_elemwise(
      "hadamard", a, b, [](double x, double y) { return x * y; },
      [](double x, double y) { return std::pair<double, double>{y, x}; });
}

inline Tensor scale(const Tensor& x, double c) {
  return detail::unary_elemwise(
      "scale", x, [c](double v) { return c * v; },
      [c](double, double) { return c; });
}

inline Tensor elem_cos(const Tensor& x) {
  return detail::unary_elemwise(
      "cos", x, [](double v) { return std::cos(v); },
      [](double v, double) { return -std::sin(v); });
}

inline Tensor elem_sin(const Tensor& x) {
  return detail::unary_elemwise(
      "sin", x, [](double v) { return std::sin(v); },
      [](double v, double) { return std::cos(v); });
}

inline Tensor elem_log(const Tensor& x) {
  return detail::unary_elemwise(
      "log", x, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

inline Tensor elem_exp(const Tensor& x) {
  return detail::unary_elemwise(
      "exp", x, [](double v) { return std::exp(v); },
      [](double, double y) { return y; });
}

inline Tensor clamp(const Tensor& x, double lo, double hi) {
  return detail::unary_elemwise(
      "clamp", x,
      [lo, hi](double v) { return v < lo ? lo : (v > hi ? hi : v); },
      [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

// Exact GELU, x * Phi(x).
inline Tensor gelu(const Tensor& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return detail::unary_elemwise(
      "gelu", x,
      [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        return cdf + v * pdf;
      });
}

// Broadcast add of a 1 x n row vector to every row.
inline Tensor add_rowvec(const Tensor& x, const Tensor& r) {
  if (r.rows() != 1 || r.cols() != x.cols())
    throw std::invalid_argument("add_rowvec: expected 1 x cols vector");
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out[i * n + j] = x.at(i, j) + r.at(0, j);
  Tape* tape = detail::joint_tape(x, r);
  Tensor y = detail::make_out("add_rowvec", tape, m, n, std::move(out));
  if (tape) {
    auto sx = x.storage(), sr = r.storage(), sy = y.storage();
    tape->record([sx, sr, sy, m, n] {
      if (!detail::has_grad(sy)) return;
      sx->ensure_grad();
      sr->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double g = sy->grad[i * n + j];
          sx->grad[i * n + j] += g;
          sr->grad[j] += g;
        }
    });
  }
  return y;
}

// Broadcast add of an m x 1 column vector to every column.
inline Tensor add_colvec(const Tensor& x, const Tensor& c) {
  if (c.cols() != 1 || c.rows() != x.rows())
    throw std::invalid_argument("add_colvec: expected rows x 1 vector");
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out[i * n + j] = x.at(i, j) + c.at(i, 0);
  Tape* tape = detail::joint_tape(x, c);
  Tensor y = detail::make_out("add_colvec", tape, m, n, std::move(out));
  if (tape) {
    auto sx = x.storage(), sc = c.storage(), sy = y.storage();
    tape->record([sx, sc, sy, m, n] {
      if (!detail::has_grad(sy)) return;
      sx->ensure_grad();
      sc->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double g = sy->grad[i * n + j];
          sx->grad[i * n + j] += g;
          sc->grad[i] += g;
        }
    });
  }
  return y;
}

inline Tensor softmax_rows(const Tensor& x) {
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    double mx = x.at(i, 0);
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x.at(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = std::exp(x.at(i, j) - mx);
      sum += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= sum;
  }
  Tensor y = detail::make_out("softmax_rows", x.tape(), m, n, std::move(out));
  if (x.tape()) {
    auto sx = x.storage(), sy = y.storage();
    x.tape()->record([sx, sy, m, n] {
      if (!detail::has_grad(sy)) return;
      sx->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j)
          dot += sy->grad[i * n + j] * sy->value[i * n + j];
        for (std::size_t j = 0; j < n; ++j)
          sx->grad[i * n + j] +=
              sy->value[i * n + j] * (sy->grad[i * n + j] - dot);
      }
    });
  }
  return y;
}

// Row-wise log(sum(exp(x))), stabilized; result m x 1.
inline Tensor logsumexp_rows(const Tensor& x) {
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mx = x.at(i, 0);
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x.at(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) sum += std::exp(x.at(i, j) - mx);
    out[i] = mx + std::log(sum);
  }
  Tensor y = detail::make_out("logsumexp_rows", x.tape(), m, 1, std::move(out));
  if (x.tape()) {
    auto sx = x.storage(), sy = y.storage();
    x.tape()->record([sx, sy, m, n] {
      if (!detail::has_grad(sy)) return;
      sx->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        const double g = sy->grad[i];
        if (g == 0.0) continue;
        const double lse = sy->value[i];
        for (std::size_t j = 0; j < n; ++j)
          sx->grad[i * n + j] += g * std::exp(sx->value[i * n + j] - lse);
      }
    });
  }
  return y;
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows())
    throw std::invalid_argument("concat_cols: row mismatch");
  const std::size_t m = a.rows(), na = a.cols(), nb = b.cols();
  std::vector<double> out(m * (na + nb));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < na; ++j) out[i * (na + nb) + j] = a.at(i, j);
    for (std::size_t j = 0; j < nb; ++j)
      out[i * (na + nb) + na + j] = b.at(i, j);
  }
  Tape* tape = detail::joint_tape(a, b);
  Tensor c = detail::make_out("concat_cols", tape, m, na + nb, std::move(out));
  if (tape) {
    auto sa = a.storage(), sb = b.storage(), sc = c.storage();
    tape->record([sa, sb, sc, m, na, nb] {
      if (!detail::has_grad(sc)) return;
      sa->ensure_grad();
      sb->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < na; ++j)
          sa->grad[i * na + j] += sc->grad[i * (na + nb) + j];
        for (std::size_t j = 0; j < nb; ++j)
          sb->grad[i * nb + j] += sc->grad[i * (na + nb) + na + j];
      }
    });
  }
  return c;
}

inline Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols())
    throw std::invalid_argument("concat_rows: column mismatch");
  const std::size_t n = a.cols(), ma = a.rows(), mb = b.rows();
  std::vector<double> out;
  out.reserve((ma + mb) * n);
  out.insert(out.end(), a.value().begin(), a.value().end());
  out.insert(out.end(), b.value().begin(), b.value().end());
  Tape* tape = detail::joint_tape(a, b);
  Tensor c = detail::make_out("concat_rows", tape, ma + mb, n, std::move(out));
  if (tape) {
    auto sa = a.storage(), sb = b.storage(), sc = c.storage();
    tape->record([sa, sb, sc, ma, mb, n] {
      if (!detail::has_grad(sc)) return;
      sa->ensure_grad();
      sb->ensure_grad();
      for (std::size_t i = 0; i < ma * n; ++i) sa->grad[i] += sc->grad[i];
      for (std::size_t i = 0; i < mb * n; ++i)
        sb->grad[i] += sc->grad[ma * n + i];
    });
  }
  return c;
}

// Rows [r0, r1).
inline Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t r1) {
  if (r0 > r1 || r1 > x.rows())
    throw std::invalid_argument("slice_rows: range out of bounds");
  const std::size_t n = x.cols(), m = r1 - r0;
  std::vector<double> out(x.value().begin() + r0 * n,
                          x.value().begin() + r1 * n);
  Tensor y = detail::make_out("slice_rows", x.tape(), m, n, std::move(out));
  if (x.tape()) {
    auto sx = x.storage(), sy = y.storage();
    x.tape()->record([sx, sy, r0, m, n] {
      if (!detail::has_grad(sy)) return;
      sx->ensure_grad();
      for (std::size_t i = 0; i < m * n; ++i)
        sx->grad[r0 * n + i] += sy->grad[i];
    });
  }
  return y;
}

// Columns [c0, c1).
inline Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1) {
  if (c0 > c1 || c1 > x.cols())
    throw std::invalid_argument("slice_cols: range out of bounds");
  const std::size_t m = x.rows(), n = x.cols(), w = c1 - c0;
  std::vector<double> out(m * w);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = x.at(i, c0 + j);
  Tensor y = detail::make_out("slice_cols", x.tape(), m, w, std::move(out));
  if (x.tape()) {
    auto sx = x.storage(), sy = y.storage();
    x.tape()->record([sx, sy, c0, m, n, w] {
      if (!detail::has_grad(sy)) return;
      sx->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j)
          sx->grad[i * n + c0 + j] += sy->grad[i * w + j];
    });
  }
  return y;
}

inline Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.value()) s += v;
  Tensor y = detail::make_out("sum_all", x.tape(), 1, 1, {s});
  if (x.tape()) {
    auto sx = x.storage(), sy = y.storage();
    x.tape()->record([sx, sy] {
      if (!detail::has_grad(sy)) return;
      sx->ensure_grad();
      for (double& g : sx->grad) g += sy->grad[0];
    });
  }
  return y;
}

inline Tensor mean_all(const Tensor& x) {
  return scale(sum_all(x), 1.0 / static_cast<double>(x.size()));
}

// Sum of the entries named by (row, col) index pairs; duplicates accumulate.
inline Tensor index_sum(const Tensor& x,
                        const std::vector<std::pair<std::size_t, std::size_t>>& idx) {
  double s = 0.0;
  for (auto [i, j] : idx) {
    if (i >= x.rows() || j >= x.cols())
      throw std::out_of_range("index_sum: index out of range");
    s += x.at(i, j);
  }
  Tensor y = detail::make_out("index_sum", x.tape(), 1, 1, {s});
  if (x.tape()) {
    auto sx = x.storage(), sy = y.storage();
    const std::size_t n = x.cols();
    x.tape()->record([sx, sy, idx, n] {
      if (!detail::has_grad(sy)) return;
      sx->ensure_grad();
      for (auto [i, j] : idx) sx->grad[i * n + j] += sy->grad[0];
    });
  }
  return y;
}

// Pre-norm layer normalization over each row, with learnable gain/shift
// (both 1 x C).
inline Tensor layer_norm_rows(const Tensor& x, const Tensor& gain,
                              const Tensor& shift, double eps = 1e-6) {
  if (gain.rows() != 1 || shift.rows() != 1 || gain.cols() != x.cols() ||
      shift.cols() != x.cols())
    throw std::invalid_argument("layer_norm_rows: parameter shape mismatch");
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m * n);
  auto xhat = std::make_shared<std::vector<double>>(m * n);
  auto inv_sigma = std::make_shared<std::vector<double>>(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += x.at(i, j);
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = x.at(i, j) - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_sigma)[i] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (x.at(i, j) - mu) * is;
      (*xhat)[i * n + j] = h;
      out[i * n + j] = h * gain.at(0, j) + shift.at(0, j);
    }
  }
  Tape* tape = x.tape() ? x.tape()
                        : (gain.tape() ? gain.tape() : shift.tape());
  Tensor y = detail::make_out("layer_norm_rows", tape, m, n, std::move(out));
  if (tape) {
    auto sx = x.storage(), sg = gain.storage(), sb = shift.storage(),
         sy = y.storage();
    tape->record([sx, sg, sb, sy, xhat, inv_sigma, m, n] {
      if (!detail::has_grad(sy)) return;
      sx->ensure_grad();
      sg->ensure_grad();
      sb->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        double mean_dh = 0.0, mean_dh_xhat = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          const double gy = sy->grad[i * n + j];
          const double h = (*xhat)[i * n + j];
          sb->grad[j] += gy;
          sg->grad[j] += gy * h;
          const double dh = gy * sg->value[j];
          mean_dh += dh;
          mean_dh_xhat += dh * h;
        }
        mean_dh /= static_cast<double>(n);
        mean_dh_xhat /= static_cast<double>(n);
        const double is = (*inv_sigma)[i];
        for (std::size_t j = 0; j < n; ++j) {
          const double dh = sy->grad[i * n + j] * sg->value[j];
          const double h = (*xhat)[i * n + j];
          sx->grad[i * n + j] += is * (dh - mean_dh - h * mean_dh_xhat);
        }
      }
    });
  }
  return y;
}

// Augments an M x N score matrix with a dustbin row and column filled with
// the learnable scalar z (including the corner).
inline Tensor dustbin_augment(const Tensor& s, const Tensor& z) {
  if (z.size() != 1) throw std::invalid_argument("dustbin_augment: z not scalar");
  const std::size_t m = s.rows(), n = s.cols();
  const double zv = z.scalar();
  std::vector<double> out((m + 1) * (n + 1), zv);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * (n + 1) + j] = s.at(i, j);
  Tape* tape = detail::joint_tape(s, z);
  Tensor y = detail::make_out("dustbin_augment", tape, m + 1, n + 1, std::move(out));
  if (tape) {
    auto ss = s.storage(), sz = z.storage(), sy = y.storage();
    tape->record([ss, sz, sy, m, n] {
      if (!detail::has_grad(sy)) return;
      ss->ensure_grad();
      sz->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
          ss->grad[i * n + j] += sy->grad[i * (n + 1) + j];
      double zg = 0.0;
      for (std::size_t j = 0; j < n + 1; ++j) zg += sy->grad[m * (n + 1) + j];
      for (std::size_t i = 0; i < m; ++i) zg += sy->grad[i * (n + 1) + n];
      sz->grad[0] += zg;
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Initialization helpers

inline Tensor random_normal(Tape* tape, std::size_t rows, std::size_t cols,
                            Rng& rng, double stddev = 1.0) {
  std::vector<double> vals(rows * cols);
  for (auto& v : vals) v = stddev * rng.normal();
  return Tensor::from_values(tape, rows, cols, std::move(vals));
}

inline Tensor random_uniform(Tape* tape, std::size_t rows, std::size_t cols,
                             Rng& rng, double lo, double hi) {
  std::vector<double> vals(rows * cols);
  for (auto& v : vals) v = rng.uniform(lo, hi);
  return Tensor::from_values(tape, rows, cols, std::move(vals));
}

}  // namespace sceneglue
