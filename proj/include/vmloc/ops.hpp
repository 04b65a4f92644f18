#pragma once

// Differentiable operations over Graph nodes.
//
// Broadcasting is limited to equal shapes and scalar-vs-tensor. Row-wise
// operations treat rank-2 tensors as [rows x cols]; they are the only place
// where a smaller operand meets a larger one and each has its own backward.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "vmloc/tensor.hpp"

namespace vmloc::ops {

namespace detail {

inline void require_same_graph(const Var& a, const Var& b) {
  VMLOC_EXPECTS(&a.graph() == &b.graph(), "operands belong to different graphs");
}

inline void require_matrix(const Var& a, const char* op) {
  if (a.value().rank() != 2)
    throw DimensionError(std::string(op) + " expects a matrix, got " + shape_str(a.shape()));
}

template <class F, class D>
Var unary(const char* op, const Var& a, F f, D dfdx) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = f(x[i]);
  const NodeId ia = a.id();
  return a.graph().record(op, {ia}, y, [ia, y, dfdx](Graph& g, const Tensor& gy) {
    const Tensor& x = g.value(ia);
    Tensor gx(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) gx[i] = gy[i] * dfdx(x[i], y[i]);
    g.accumulate(ia, std::move(gx));
  });
}

// Binary elementwise op with equal-shape or scalar broadcasting.
// df returns the pair (d out/d a, d out/d b) at (a_i, b_i).
template <class F, class D>
Var binary(const char* op, const Var& a, const Var& b, F f, D df) {
  require_same_graph(a, b);
  const Tensor& x = a.value();
  const Tensor& z = b.value();
  const bool a_scalar = x.is_scalar() && !z.is_scalar();
  const bool b_scalar = z.is_scalar() && !x.is_scalar();
  if (!a_scalar && !b_scalar && x.shape() != z.shape() && !(x.is_scalar() && z.is_scalar()))
    throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(x.shape()) + " and " +
                         shape_str(z.shape()));
  const Shape out_shape = a_scalar ? z.shape() : x.shape();
  const std::size_t n = shape_numel(out_shape);
  Tensor y(out_shape);
  for (std::size_t i = 0; i < n; ++i) y[i] = f(x[a_scalar ? 0 : i], z[b_scalar ? 0 : i]);
  const NodeId ia = a.id(), ib = b.id();
  return a.graph().record(op, {ia, ib}, std::move(y), [=](Graph& g, const Tensor& gy) {
    const Tensor& x = g.value(ia);
    const Tensor& z = g.value(ib);
    const bool need_a = g.requires_grad(ia), need_b = g.requires_grad(ib);
    Tensor ga(x.shape()), gb(z.shape());
    for (std::size_t i = 0; i < n; ++i) {
      const auto [da, db] = df(x[a_scalar ? 0 : i], z[b_scalar ? 0 : i]);
      if (need_a) ga[a_scalar ? 0 : i] += gy[i] * da;
      if (need_b) gb[b_scalar ? 0 : i] += gy[i] * db;
    }
    if (need_a) g.accumulate(ia, std::move(ga));
    if (need_b) g.accumulate(ib, std::move(gb));
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(const Var& a, const Var& b) {
  return detail::binary("add", a, b, [](double x, double y) { return x + y; },
                        [](double, double) { return std::pair{1.0, 1.0}; });
}
inline Var sub(const Var& a, const Var& b) {
  return detail::binary("sub", a, b, [](double x, double y) { return x - y; },
                        [](double, double) { return std::pair{1.0, -1.0}; });
}
inline Var mul(const Var& a, const Var& b) {
  return detail::binary("mul", a, b, [](double x, double y) { return x * y; },
                        [](double x, double y) { return std::pair{y, x}; });
}
inline Var div(const Var& a, const Var& b) {
  return detail::binary("div", a, b, [](double x, double y) { return x / y; },
                        [](double x, double y) { return std::pair{1.0 / y, -x / (y * y)}; });
}

inline Var negate(const Var& a) {
  return detail::unary("negate", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}
inline Var exp(const Var& a) {
  return detail::unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}
inline Var log(const Var& a) {
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < x.numel(); ++i)
    if (!(x[i] > 0.0)) throw DomainError("log of non-positive entry " + std::to_string(x[i]), i);
  return detail::unary("log", a, [](double x) { return std::log(x); },
                       [](double x, double) { return 1.0 / x; });
}
inline Var relu(const Var& a) {
  return detail::unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
                       [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}
inline Var tanh(const Var& a) {
  return detail::unary("tanh", a, [](double x) { return std::tanh(x); },
                       [](double, double y) { return 1.0 - y * y; });
}
inline Var square(const Var& a) {
  return detail::unary("square", a, [](double x) { return x * x; },
                       [](double x, double) { return 2.0 * x; });
}
inline Var scale(const Var& a, double c) {
  return detail::unary("scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}
inline Var add_scalar(const Var& a, double c) {
  return detail::unary("add_scalar", a, [c](double x) { return x + c; },
                       [](double, double) { return 1.0; });
}

enum class Elementwise { add, mul, exp, log, relu, tanh, negate };

// Tag-dispatched entry point; binary tags take two operands.
inline Var elementwise(Elementwise op, const Var& a, const Var& b = Var()) {
  switch (op) {
    case Elementwise::add: VMLOC_EXPECTS(b.valid(), "add needs two operands"); return add(a, b);
    case Elementwise::mul: VMLOC_EXPECTS(b.valid(), "mul needs two operands"); return mul(a, b);
    case Elementwise::exp: return exp(a);
    case Elementwise::log: return log(a);
    case Elementwise::relu: return relu(a);
    case Elementwise::tanh: return tanh(a);
    case Elementwise::negate: return negate(a);
  }
  throw ContractViolation("unknown elementwise op");
}

// Multiply by a constant tensor of the same shape (masks, signs, frozen weights).
inline Var mul_const(const Var& a, const Tensor& c) { return mul(a, a.graph().constant(c)); }

// Stop-gradient: same value, no backward path.
inline Var detach(const Var& a) { return a.graph().constant(a.value()); }

// ---------------------------------------------------------------------------
// Shape manipulation

inline Var reshape(const Var& a, Shape s) {
  if (shape_numel(s) != a.numel())
    throw DimensionError("reshape " + shape_str(a.shape()) + " to " + shape_str(s));
  const NodeId ia = a.id();
  return a.graph().record("reshape", {ia}, a.value().reshaped(std::move(s)),
                          [ia](Graph& g, const Tensor& gy) { g.accumulate(ia, gy.reshaped(g.value(ia).shape())); });
}

inline Var transpose(const Var& a) {
  detail::require_matrix(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  const Tensor& x = a.value();
  Tensor y({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y.at(j, i) = x.at(i, j);
  const NodeId ia = a.id();
  return a.graph().record("transpose", {ia}, std::move(y), [ia, m, n](Graph& g, const Tensor& gy) {
    Tensor gx({m, n});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) gx.at(i, j) = gy.at(j, i);
    g.accumulate(ia, std::move(gx));
  });
}

// Each row repeated `times` consecutively: [m x n] -> [m*times x n].
inline Var repeat_rows(const Var& a, std::size_t times) {
  VMLOC_EXPECTS(times >= 1, "repeat_rows needs times >= 1");
  const std::size_t m = a.rows(), n = a.cols();
  const Tensor& x = a.value();
  Tensor y({m * times, n});
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t t = 0; t < times; ++t)
      std::copy_n(x.data().begin() + r * n, n, y.data().begin() + (r * times + t) * n);
  const NodeId ia = a.id();
  return a.graph().record("repeat_rows", {ia}, std::move(y), [ia, m, n, times](Graph& g, const Tensor& gy) {
    Tensor gx(g.value(ia).shape());
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t t = 0; t < times; ++t)
        for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += gy[(r * times + t) * n + c];
    g.accumulate(ia, std::move(gx));
  });
}

// Each entry of a column vector repeated across `times` columns: [m x 1] -> [m x times].
inline Var repeat_cols(const Var& a, std::size_t times) {
  VMLOC_EXPECTS(times >= 1, "repeat_cols needs times >= 1");
  if (a.cols() != 1) throw DimensionError("repeat_cols expects a column, got " + shape_str(a.shape()));
  const std::size_t m = a.rows();
  Tensor y({m, times});
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < times; ++c) y.at(r, c) = a.value()[r];
  const NodeId ia = a.id();
  return a.graph().record("repeat_cols", {ia}, std::move(y), [ia, m, times](Graph& g, const Tensor& gy) {
    Tensor gx(g.value(ia).shape());
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < times; ++c) gx[r] += gy[r * times + c];
    g.accumulate(ia, std::move(gx));
  });
}

inline Var concat_cols(const Var& a, const Var& b) {
  detail::require_same_graph(a, b);
  if (a.rows() != b.rows())
    throw DimensionError("concat_cols: row mismatch " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t m = a.rows(), na = a.cols(), nb = b.cols();
  Tensor y({m, na + nb});
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < na; ++c) y.at(r, c) = a.value()[r * na + c];
    for (std::size_t c = 0; c < nb; ++c) y.at(r, na + c) = b.value()[r * nb + c];
  }
  const NodeId ia = a.id(), ib = b.id();
  return a.graph().record("concat_cols", {ia, ib}, std::move(y), [=](Graph& g, const Tensor& gy) {
    Tensor ga(g.value(ia).shape()), gb(g.value(ib).shape());
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < na; ++c) ga[r * na + c] = gy.at(r, c);
      for (std::size_t c = 0; c < nb; ++c) gb[r * nb + c] = gy.at(r, na + c);
    }
    g.accumulate(ia, std::move(ga));
    g.accumulate(ib, std::move(gb));
  });
}

inline Var slice_cols(const Var& a, std::size_t start, std::size_t count) {
  const std::size_t m = a.rows(), n = a.cols();
  if (count == 0 || start + count > n)
    throw DimensionError("slice_cols [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") out of range for " + shape_str(a.shape()));
  Tensor y({m, count});
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < count; ++c) y.at(r, c) = a.value()[r * n + start + c];
  const NodeId ia = a.id();
  return a.graph().record("slice_cols", {ia}, std::move(y), [=](Graph& g, const Tensor& gy) {
    Tensor gx(g.value(ia).shape());
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < count; ++c) gx[r * n + start + c] = gy.at(r, c);
    g.accumulate(ia, std::move(gx));
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

namespace detail {

// c[m x p] += a[m x n] * b[n x p]   (all row-major views)
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t n, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * p;
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = a[i * n + k];
      if (aik == 0.0) continue;
      const double* bk = b + k * p;
      for (std::size_t j = 0; j < p; ++j) ci[j] += aik * bk[j];
    }
  }
}
// c[m x p] += a[m x n] * b[p x n]^T
// (transposes b once so the inner loop stays contiguous and vectorizable)
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n, std::size_t p) {
  thread_local std::vector<double> bt;
  bt.resize(n * p);
  for (std::size_t j = 0; j < p; ++j)
    for (std::size_t k = 0; k < n; ++k) bt[k * p + j] = b[j * n + k];
  gemm_nn(a, bt.data(), c, m, n, p);
}
// c[n x p] += a[m x n]^T * b[m x p]
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t n, std::size_t p) {
  for (std::size_t k = 0; k < m; ++k)
    for (std::size_t i = 0; i < n; ++i) {
      const double aki = a[k * n + i];
      if (aki == 0.0) continue;
      const double* bk = b + k * p;
      double* ci = c + i * p;
      for (std::size_t j = 0; j < p; ++j) ci[j] += aki * bk[j];
    }
}

}  // namespace detail

inline Var matmul(const Var& a, const Var& b) {
  detail::require_same_graph(a, b);
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = a.rows(), n = a.cols(), p = b.cols();
  if (b.rows() != n)
    throw DimensionError("matmul: inner dimensions disagree for " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  Tensor y({m, p});
  detail::gemm_nn(a.value().data().data(), b.value().data().data(), y.data().data(), m, n, p);
  const NodeId ia = a.id(), ib = b.id();
  return a.graph().record("matmul", {ia, ib}, std::move(y), [=](Graph& g, const Tensor& gy) {
    if (g.requires_grad(ia)) {
      Tensor ga({m, n});
      detail::gemm_nt(gy.data().data(), g.value(ib).data().data(), ga.data().data(), m, p, n);
      g.accumulate(ia, std::move(ga));
    }
    if (g.requires_grad(ib)) {
      Tensor gb({n, p});
      detail::gemm_tn(g.value(ia).data().data(), gy.data().data(), gb.data().data(), m, n, p);
      g.accumulate(ib, std::move(gb));
    }
  });
}

// Block-diagonal product: a is `batches` stacked [m x n] blocks, b is `batches`
// stacked [n x p] blocks (or [p x n] blocks when transpose_b); result stacks [m x p].
inline Var batched_matmul(const Var& a, const Var& b, std::size_t batches, bool transpose_b = false) {
  detail::require_same_graph(a, b);
  VMLOC_EXPECTS(batches >= 1, "batched_matmul needs at least one batch");
  if (a.rows() % batches != 0 || b.rows() % batches != 0)
    throw DimensionError("batched_matmul: " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " do not split into " + std::to_string(batches) + " blocks");
  const std::size_t m = a.rows() / batches, n = a.cols();
  const std::size_t brows = b.rows() / batches;
  const std::size_t p = transpose_b ? brows : b.cols();
  if ((transpose_b ? b.cols() : brows) != n)
    throw DimensionError("batched_matmul: inner dimensions disagree for " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  const std::size_t bsz = brows * b.cols();
  Tensor y({batches * m, p});
  for (std::size_t t = 0; t < batches; ++t) {
    const double* ap = a.value().data().data() + t * m * n;
    const double* bp = b.value().data().data() + t * bsz;
    double* yp = y.data().data() + t * m * p;
    if (transpose_b) detail::gemm_nt(ap, bp, yp, m, n, p);
    else detail::gemm_nn(ap, bp, yp, m, n, p);
  }
  const NodeId ia = a.id(), ib = b.id();
  return a.graph().record("batched_matmul", {ia, ib}, std::move(y), [=](Graph& g, const Tensor& gy) {
    const bool need_a = g.requires_grad(ia), need_b = g.requires_grad(ib);
    Tensor ga(g.value(ia).shape()), gb(g.value(ib).shape());
    for (std::size_t t = 0; t < batches; ++t) {
      const double* ap = g.value(ia).data().data() + t * m * n;
      const double* bp = g.value(ib).data().data() + t * bsz;
      const double* gp = gy.data().data() + t * m * p;
      if (need_a) {
        // dA = dY * B^T  (or dY * B when b is stored transposed)
        if (transpose_b) detail::gemm_nn(gp, bp, ga.data().data() + t * m * n, m, p, n);
        else detail::gemm_nt(gp, bp, ga.data().data() + t * m * n, m, p, n);
      }
      if (need_b) {
        // dB = A^T dY, or (dY^T A) when stored transposed
        if (transpose_b) detail::gemm_tn(gp, ap, gb.data().data() + t * bsz, m, p, n);
        else detail::gemm_tn(ap, gp, gb.data().data() + t * bsz, m, n, p);
      }
    }
    if (need_a) g.accumulate(ia, std::move(ga));
    if (need_b) g.accumulate(ib, std::move(gb));
  });
}

// x[m x in] * w[in x out] + b[1 x out] (bias repeated across rows).
inline Var linear(const Var& x, const Var& w, const Var& b) {
  return add(matmul(x, w), repeat_rows(b, x.rows()));
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const NodeId ia = a.id();
  return a.graph().record("sum", {ia}, Tensor::scalar(s), [ia](Graph& g, const Tensor& gy) {
    g.accumulate(ia, Tensor(g.value(ia).shape(), gy[0]));
  });
}

inline Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

// [m x n] -> [m x 1]
inline Var row_sum(const Var& a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor y({m, 1});
  for (std::size_t r = 0; r < m; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += a.value()[r * n + c];
    y[r] = s;
  }
  const NodeId ia = a.id();
  return a.graph().record("row_sum", {ia}, std::move(y), [ia, m, n](Graph& g, const Tensor& gy) {
    Tensor gx(g.value(ia).shape());
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) gx[r * n + c] = gy[r];
    g.accumulate(ia, std::move(gx));
  });
}

// Stable log-sum-exp of each row: [m x n] -> [m x 1]. Gradient is the row softmax.
inline Var row_logsumexp(const Var& a) {
  const std::size_t m = a.rows(), n = a.cols();
  const Tensor& x = a.value();
  Tensor y({m, 1});
  Tensor soft(x.shape());
  for (std::size_t r = 0; r < m; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n; ++c) mx = std::max(mx, x[r * n + c]);
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += std::exp(x[r * n + c] - mx);
    y[r] = mx + std::log(s);
    for (std::size_t c = 0; c < n; ++c) soft[r * n + c] = std::exp(x[r * n + c] - y[r]);
  }
  const NodeId ia = a.id();
  return a.graph().record("row_logsumexp", {ia}, std::move(y),
                          [ia, m, n, soft = std::move(soft)](Graph& g, const Tensor& gy) {
                            Tensor gx(soft.shape());
                            for (std::size_t r = 0; r < m; ++r)
                              for (std::size_t c = 0; c < n; ++c) gx[r * n + c] = gy[r] * soft[r * n + c];
                            g.accumulate(ia, std::move(gx));
                          });
}

// log sum_i exp(x_i) over all entries, max-shifted.
inline Var logsumexp(const Var& a) {
  VMLOC_EXPECTS(a.numel() >= 1, "logsumexp of empty input");
  return reshape(row_logsumexp(reshape(a, {1, a.numel()})), {});
}

inline Var softmax_rows(const Var& a) {
  const std::size_t m = a.rows(), n = a.cols();
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t r = 0; r < m; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n; ++c) mx = std::max(mx, x[r * n + c]);
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += (y[r * n + c] = std::exp(x[r * n + c] - mx));
    for (std::size_t c = 0; c < n; ++c) y[r * n + c] /= s;
  }
  const NodeId ia = a.id();
  const NodeId self = a.graph().size();
  return a.graph().record("softmax_rows", {ia}, std::move(y), [ia, self, m, n](Graph& g, const Tensor& gy) {
    const Tensor& s = g.value(self);
    Tensor gx(s.shape());
    for (std::size_t r = 0; r < m; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += gy[r * n + c] * s[r * n + c];
      for (std::size_t c = 0; c < n; ++c) gx[r * n + c] = s[r * n + c] * (gy[r * n + c] - dot);
    }
    g.accumulate(ia, std::move(gx));
  });
}

// Euclidean norm of each row, [m x n] -> [m x 1]; the subgradient at 0 is taken as 0.
inline Var row_l2norm(const Var& a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor y({m, 1});
  for (std::size_t r = 0; r < m; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += a.value()[r * n + c] * a.value()[r * n + c];
    y[r] = std::sqrt(s);
  }
  const NodeId ia = a.id();
  return a.graph().record("row_l2norm", {ia}, y, [ia, y, m, n](Graph& g, const Tensor& gy) {
    const Tensor& x = g.value(ia);
    Tensor gx(x.shape());
    for (std::size_t r = 0; r < m; ++r) {
      if (y[r] == 0.0) continue;
      for (std::size_t c = 0; c < n; ++c) gx[r * n + c] = gy[r] * x[r * n + c] / y[r];
    }
    g.accumulate(ia, std::move(gx));
  });
}

// Rows scaled to unit Euclidean norm.
inline Var normalize_rows(const Var& a, double min_norm = 1e-9) {
  const auto norms = row_l2norm(a);
  for (std::size_t r = 0; r < norms.rows(); ++r)
    if (norms.value()[r] < min_norm)
      throw DegenerateOutputError("row " + std::to_string(r) + " has norm " + std::to_string(norms.value()[r]) +
                                  " below " + std::to_string(min_norm));
  const std::size_t n = a.cols();
  return div(a, repeat_cols(norms, n));
}

}  // namespace vmloc::ops
