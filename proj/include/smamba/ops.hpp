#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "smamba/array.hpp"
#include "smamba/errors.hpp"
#include "smamba/tape.hpp"

// Differentiable operations. Each op records its value on the tape together
// with an adjoint closure. Broadcasting is restricted to scalar operands and
// leading-batch broadcast (the smaller shape is a suffix of the larger one).

namespace smamba {

namespace detail {

template <typename S>
void require_same_tape(Var<S> a, Var<S> b) {
  if (a.tape != b.tape) throw ContractError("operands live on different tapes");
}

inline bool is_suffix(const Shape& small, const Shape& large) {
  if (small.size() > large.size()) return false;
  return std::equal(small.rbegin(), small.rend(), large.rbegin());
}

// Broadcast index map: valid when small is scalar or a suffix of large;
// large flat index i maps to small flat index i % small_numel.
inline bool broadcastable(const Shape& small, const Shape& large) {
  return shape_numel(small) == 1 || is_suffix(small, large);
}

template <typename S>
S stable_sigmoid(S x) {
  if (x >= S(0)) {
    const S e = std::exp(-x);
    return S(1) / (S(1) + e);
  }
  const S e = std::exp(x);
  return e / (S(1) + e);
}

// softplus(x) = ln(1+e^x); branch x + ln(1+e^-x) above 20 avoids overflow.
template <typename S>
S stable_softplus(S x) {
  if (x > S(20)) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// Accumulate g (shaped like `large`) into the grad of a broadcast operand.
template <typename S>
void accumulate_broadcast(Array<S>& dst, const Array<S>& g) {
  const std::size_t m = dst.numel();
  if (m == g.numel()) {
    for (std::size_t i = 0; i < m; ++i) dst[i] += g[i];
    return;
  }
  for (std::size_t i = 0; i < g.numel(); ++i) dst[i % m] += g[i];
}

struct AxisSplit {
  std::size_t outer, extent, inner;
};

inline AxisSplit axis_split(const Shape& s, std::size_t axis) {
  if (axis >= s.size())
    throw DimError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops (add, mul) with scalar / leading-batch broadcast
// ---------------------------------------------------------------------------

template <typename S, typename Fwd, typename Bwd>
Var<S> binary_broadcast(const char* name, Var<S> a, Var<S> b, Fwd fwd, Bwd bwd) {
  detail::require_same_tape(a, b);
  Tape<S>& t = *a.tape;
  const Array<S>& av = a.value();
  const Array<S>& bv = b.value();

  const Array<S>*big = &av, *small = &bv;
  Var<S> big_var = a, small_var = b;
  bool swapped = false;
  if (av.shape != bv.shape) {
    if (detail::broadcastable(bv.shape, av.shape)) {
      // b broadcasts over a
    } else if (detail::broadcastable(av.shape, bv.shape)) {
      big = &bv;
      small = &av;
      big_var = b;
      small_var = a;
      swapped = true;
    } else {
      throw DimError(std::string(name) + ": shapes " + shape_str(av.shape) + " and " +
                     shape_str(bv.shape) + " are not broadcast-compatible");
    }
  }

  const std::size_t m = small->numel();
  Array<S> out(big->shape);
  for (std::size_t i = 0; i < out.numel(); ++i)
    out[i] = fwd((*big)[i], (*small)[i % m], swapped);

  const bool rg = t.requires_grad(a.id) || t.requires_grad(b.id);
  return t.record(name, std::move(out), rg,
                  [big_var, small_var, swapped, m, bwd](Tape<S>& tp, int self) {
                    const Array<S>& g = tp.grad(self);
                    const Array<S>& bigv = tp.value(big_var.id);
                    const Array<S>& smallv = tp.value(small_var.id);
                    Array<S>& dbig = tp.grad(big_var.id);
                    Array<S>& dsmall = tp.grad(small_var.id);
                    for (std::size_t i = 0; i < g.numel(); ++i) {
                      auto [gb, gs] = bwd(g[i], bigv[i], smallv[i % m], swapped);
                      dbig[i] += gb;
                      dsmall[i % m] += gs;
                    }
                  });
}

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  return binary_broadcast<S>(
      "add", a, b, [](S x, S y, bool) { return x + y; },
      [](S g, S, S, bool) { return std::pair<S, S>(g, g); });
}

template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
  return binary_broadcast<S>(
      "mul", a, b, [](S x, S y, bool) { return x * y; },
      [](S g, S big, S small, bool) { return std::pair<S, S>(g * small, g * big); });
}

// out = c * x for a compile-time-known scalar constant.
template <typename S>
Var<S> scale(Var<S> x, S c) {
  Tape<S>& t = *x.tape;
  Array<S> out = x.value();
  for (auto& v : out.data) v *= c;
  return t.record("scale", std::move(out), t.requires_grad(x.id),
                  [x, c](Tape<S>& tp, int self) {
                    const Array<S>& g = tp.grad(self);
                    Array<S>& dx = tp.grad(x.id);
                    for (std::size_t i = 0; i < g.numel(); ++i) dx[i] += c * g[i];
                  });
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  return add(a, scale(b, S(-1)));
}

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

// dfdx(x, y) evaluates the derivative from the input and the saved output.
template <typename S, typename F, typename DF>
Var<S> unary_op(const char* name, Var<S> x, F f, DF dfdx) {
  Tape<S>& t = *x.tape;
  const Array<S>& xv = x.value();
  Array<S> out(xv.shape);
  for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = f(xv[i]);
  return t.record(name, std::move(out), t.requires_grad(x.id),
                  [x, dfdx](Tape<S>& tp, int self) {
                    const Array<S>& g = tp.grad(self);
                    const Array<S>& xin = tp.value(x.id);
                    const Array<S>& y = tp.value(self);
                    Array<S>& dx = tp.grad(x.id);
                    for (std::size_t i = 0; i < g.numel(); ++i)
                      dx[i] += g[i] * dfdx(xin[i], y[i]);
                  });
}

template <typename S>
Var<S> exp_(Var<S> x) {
  return unary_op<S>(
      "exp", x, [](S v) { return std::exp(v); }, [](S, S y) { return y; });
}

template <typename S>
Var<S> sigmoid(Var<S> x) {
  return unary_op<S>(
      "sigmoid", x, [](S v) { return detail::stable_sigmoid(v); },
      [](S, S y) { return y * (S(1) - y); });
}

// silu(x) = x * sigmoid(x)
template <typename S>
Var<S> silu(Var<S> x) {
  return unary_op<S>(
      "silu", x, [](S v) { return v * detail::stable_sigmoid(v); },
      [](S v, S) {
        const S s = detail::stable_sigmoid(v);
        return s * (S(1) + v * (S(1) - s));
      });
}

template <typename S>
Var<S> softplus(Var<S> x) {
  return unary_op<S>(
      "softplus", x, [](S v) { return detail::stable_softplus(v); },
      [](S v, S) { return detail::stable_sigmoid(v); });
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

// a: [M,K], b: [K,N] -> [M,N]
template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  detail::require_same_tape(a, b);
  Tape<S>& t = *a.tape;
  const Array<S>& av = a.value();
  const Array<S>& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2)
    throw DimError("matmul expects rank-2 operands, got " + shape_str(av.shape) + " and " +
                   shape_str(bv.shape));
  const std::size_t M = av.shape[0], K = av.shape[1], N = bv.shape[1];
  if (bv.shape[0] != K)
    throw DimError("matmul inner extents differ: " + shape_str(av.shape) + " vs " +
                   shape_str(bv.shape));

  Array<S> out({M, N});
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t k = 0; k < K; ++k) {
      const S s = av[i * K + k];
      const S* brow = bv.data.data() + k * N;
      S* orow = out.data.data() + i * N;
      for (std::size_t j = 0; j < N; ++j) orow[j] += s * brow[j];
    }

  const bool rg = t.requires_grad(a.id) || t.requires_grad(b.id);
  return t.record("matmul", std::move(out), rg, [a, b, M, K, N](Tape<S>& tp, int self) {
    const Array<S>& g = tp.grad(self);
    const Array<S>& av = tp.value(a.id);
    const Array<S>& bv = tp.value(b.id);
    Array<S>& da = tp.grad(a.id);
    Array<S>& db = tp.grad(b.id);
    // dL/da = g . b^T ; dL/db = a^T . g
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t k = 0; k < K; ++k) {
        S acc = S(0);
        const S* grow = g.data.data() + i * N;
        const S* brow = bv.data.data() + k * N;
        for (std::size_t j = 0; j < N; ++j) acc += grow[j] * brow[j];
        da[i * K + k] += acc;
      }
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t i = 0; i < M; ++i) {
        const S s = av[i * K + k];
        const S* grow = g.data.data() + i * N;
        S* drow = db.data.data() + k * N;
        for (std::size_t j = 0; j < N; ++j) drow[j] += s * grow[j];
      }
  });
}

// Batched product: a: [G,M,K], b: [G,K,N] -> [G,M,N]
template <typename S>
Var<S> bmm(Var<S> a, Var<S> b) {
  detail::require_same_tape(a, b);
  Tape<S>& t = *a.tape;
  const Array<S>& av = a.value();
  const Array<S>& bv = b.value();
  if (av.rank() != 3 || bv.rank() != 3 || av.shape[0] != bv.shape[0] ||
      av.shape[2] != bv.shape[1])
    throw DimError("bmm expects [G,M,K] x [G,K,N], got " + shape_str(av.shape) + " and " +
                   shape_str(bv.shape));
  const std::size_t G = av.shape[0], M = av.shape[1], K = av.shape[2], N = bv.shape[2];

  Array<S> out({G, M, N});
  for (std::size_t gidx = 0; gidx < G; ++gidx) {
    const S* ap = av.data.data() + gidx * M * K;
    const S* bp = bv.data.data() + gidx * K * N;
    S* op = out.data.data() + gidx * M * N;
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t k = 0; k < K; ++k) {
        const S s = ap[i * K + k];
        for (std::size_t j = 0; j < N; ++j) op[i * N + j] += s * bp[k * N + j];
      }
  }

  const bool rg = t.requires_grad(a.id) || t.requires_grad(b.id);
  return t.record("bmm", std::move(out), rg, [a, b, G, M, K, N](Tape<S>& tp, int self) {
    const Array<S>& g = tp.grad(self);
    const Array<S>& av = tp.value(a.id);
    const Array<S>& bv = tp.value(b.id);
    Array<S>& da = tp.grad(a.id);
    Array<S>& db = tp.grad(b.id);
    for (std::size_t gi = 0; gi < G; ++gi) {
      const S* gp = g.data.data() + gi * M * N;
      const S* ap = av.data.data() + gi * M * K;
      const S* bp = bv.data.data() + gi * K * N;
      S* dap = da.data.data() + gi * M * K;
      S* dbp = db.data.data() + gi * K * N;
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t k = 0; k < K; ++k) {
          S acc = S(0);
          for (std::size_t j = 0; j < N; ++j) acc += gp[i * N + j] * bp[k * N + j];
          dap[i * K + k] += acc;
          const S s = ap[i * K + k];
          for (std::size_t j = 0; j < N; ++j) dbp[k * N + j] += s * gp[i * N + j];
        }
    }
  });
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

namespace detail {

// Copy with two axes swapped; used by transpose forward and backward.
template <typename S>
Array<S> swap_axes_copy(const Array<S>& x, std::size_t a1, std::size_t a2) {
  Shape os = x.shape;
  std::swap(os[a1], os[a2]);
  Array<S> out(os);
  const std::size_t r = x.rank();
  std::vector<std::size_t> xstride(r, 1), ostride(r, 1);
  for (std::size_t i = r - 1; i > 0; --i) {
    xstride[i - 1] = xstride[i] * x.shape[i];
    ostride[i - 1] = ostride[i] * os[i];
  }
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t flat = 0; flat < x.numel(); ++flat) {
    std::size_t of = 0;
    for (std::size_t i = 0; i < r; ++i) {
      std::size_t xi = idx[i];
      std::size_t oaxis = (i == a1) ? a2 : (i == a2) ? a1 : i;
      of += xi * ostride[oaxis];
    }
    out[of] = x[flat];
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < x.shape[i]) break;
      idx[i] = 0;
    }
  }
  return out;
}

}  // namespace detail

template <typename S>
Var<S> transpose(Var<S> x, std::size_t axis_a, std::size_t axis_b) {
  Tape<S>& t = *x.tape;
  const Array<S>& xv = x.value();
  if (axis_a >= xv.rank() || axis_b >= xv.rank())
    throw DimError("transpose axes out of range for shape " + shape_str(xv.shape));
  Array<S> out = detail::swap_axes_copy(xv, axis_a, axis_b);
  return t.record("transpose", std::move(out), t.requires_grad(x.id),
                  [x, axis_a, axis_b](Tape<S>& tp, int self) {
                    Array<S> gsw = detail::swap_axes_copy(tp.grad(self), axis_a, axis_b);
                    Array<S>& dx = tp.grad(x.id);
                    for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += gsw[i];
                  });
}

template <typename S>
Var<S> reshape(Var<S> x, Shape new_shape) {
  Tape<S>& t = *x.tape;
  const Array<S>& xv = x.value();
  validate_shape(new_shape);
  if (shape_numel(new_shape) != xv.numel())
    throw DimError("reshape " + shape_str(xv.shape) + " -> " + shape_str(new_shape) +
                   " changes element count");
  Array<S> out(new_shape, xv.data);
  return t.record("reshape", std::move(out), t.requires_grad(x.id),
                  [x](Tape<S>& tp, int self) {
                    const Array<S>& g = tp.grad(self);
                    Array<S>& dx = tp.grad(x.id);
                    for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += g[i];
                  });
}

template <typename S>
Var<S> slice(Var<S> x, std::size_t axis, std::size_t start, std::size_t len) {
  Tape<S>& t = *x.tape;
  const Array<S>& xv = x.value();
  const auto sp = detail::axis_split(xv.shape, axis);
  if (len == 0 || start + len > sp.extent)
    throw DimError("slice [" + std::to_string(start) + "," + std::to_string(start + len) +
                   ") out of range for axis extent " + std::to_string(sp.extent));
  Shape os = xv.shape;
  os[axis] = len;
  Array<S> out(os);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < len; ++j) {
      const S* src = xv.data.data() + (o * sp.extent + start + j) * sp.inner;
      S* dst = out.data.data() + (o * len + j) * sp.inner;
      std::copy(src, src + sp.inner, dst);
    }
  return t.record("slice", std::move(out), t.requires_grad(x.id),
                  [x, axis, start, len, sp](Tape<S>& tp, int self) {
                    const Array<S>& g = tp.grad(self);
                    Array<S>& dx = tp.grad(x.id);
                    for (std::size_t o = 0; o < sp.outer; ++o)
                      for (std::size_t j = 0; j < len; ++j) {
                        const S* gs = g.data.data() + (o * len + j) * sp.inner;
                        S* dst = dx.data.data() + (o * sp.extent + start + j) * sp.inner;
                        for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += gs[i];
                      }
                  });
}

template <typename S>
Var<S> concat(const std::vector<Var<S>>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of zero parts");
  Tape<S>& t = *parts[0].tape;
  for (const auto& p : parts) detail::require_same_tape(parts[0], p);
  const auto sp0 = detail::axis_split(parts[0].value().shape, axis);
  std::size_t total = 0;
  bool rg = false;
  for (const auto& p : parts) {
    const Array<S>& pv = p.value();
    Shape expect = parts[0].value().shape;
    expect[axis] = pv.shape[axis];
    if (pv.shape != expect)
      throw DimError("concat parts disagree off the concat axis: " + shape_str(pv.shape));
    total += pv.shape[axis];
    rg = rg || t.requires_grad(p.id);
  }
  Shape os = parts[0].value().shape;
  os[axis] = total;
  Array<S> out(os);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const Array<S>& pv = p.value();
    const std::size_t ext = pv.shape[axis];
    for (std::size_t o = 0; o < sp0.outer; ++o)
      for (std::size_t j = 0; j < ext; ++j) {
        const S* src = pv.data.data() + (o * ext + j) * sp0.inner;
        S* dst = out.data.data() + (o * total + offset + j) * sp0.inner;
        std::copy(src, src + sp0.inner, dst);
      }
    offset += ext;
  }
  auto parts_copy = parts;
  return t.record("concat", std::move(out), rg,
                  [parts_copy, axis, sp0, total](Tape<S>& tp, int self) {
                    const Array<S>& g = tp.grad(self);
                    std::size_t offset = 0;
                    for (const auto& p : parts_copy) {
                      Array<S>& dx = tp.grad(p.id);
                      const std::size_t ext = tp.value(p.id).shape[axis];
                      for (std::size_t o = 0; o < sp0.outer; ++o)
                        for (std::size_t j = 0; j < ext; ++j) {
                          const S* gs = g.data.data() + (o * total + offset + j) * sp0.inner;
                          S* dst = dx.data.data() + (o * ext + j) * sp0.inner;
                          for (std::size_t i = 0; i < sp0.inner; ++i) dst[i] += gs[i];
                        }
                      offset += ext;
                    }
                  });
}

template <typename S>
Var<S> reverse_axis(Var<S> x, std::size_t axis) {
  Tape<S>& t = *x.tape;
  const Array<S>& xv = x.value();
  const auto sp = detail::axis_split(xv.shape, axis);
  Array<S> out(xv.shape);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < sp.extent; ++j) {
      const S* src = xv.data.data() + (o * sp.extent + j) * sp.inner;
      S* dst = out.data.data() + (o * sp.extent + (sp.extent - 1 - j)) * sp.inner;
      std::copy(src, src + sp.inner, dst);
    }
  return t.record("reverse_axis", std::move(out), t.requires_grad(x.id),
                  [x, sp](Tape<S>& tp, int self) {
                    const Array<S>& g = tp.grad(self);
                    Array<S>& dx = tp.grad(x.id);
                    for (std::size_t o = 0; o < sp.outer; ++o)
                      for (std::size_t j = 0; j < sp.extent; ++j) {
                        const S* gs = g.data.data() + (o * sp.extent + (sp.extent - 1 - j)) * sp.inner;
                        S* dst = dx.data.data() + (o * sp.extent + j) * sp.inner;
                        for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += gs[i];
                      }
                  });
}

// Mean over all elements -> scalar [1].
template <typename S>
Var<S> reduce_mean(Var<S> x) {
  Tape<S>& t = *x.tape;
  const Array<S>& xv = x.value();
  S acc = S(0);
  for (S v : xv.data) acc += v;
  const S inv = S(1) / static_cast<S>(xv.numel());
  Array<S> out = Array<S>::scalar(acc * inv);
  return t.record("reduce_mean", std::move(out), t.requires_grad(x.id),
                  [x, inv](Tape<S>& tp, int self) {
                    const S g = tp.grad(self)[0] * inv;
                    Array<S>& dx = tp.grad(x.id);
                    for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += g;
                  });
}

// ---------------------------------------------------------------------------
// Normalization and attention softmax
// ---------------------------------------------------------------------------

// Per-last-axis standardization followed by affine: y = gain*(x-mu)/sqrt(var+eps)+bias.
// Variance is the population variance over the last axis.
template <typename S>
Var<S> layer_norm(Var<S> x, Var<S> gain, Var<S> bias, S eps) {
  detail::require_same_tape(x, gain);
  detail::require_same_tape(x, bias);
  Tape<S>& t = *x.tape;
  const Array<S>& xv = x.value();
  const std::size_t D = xv.shape.back();
  if (gain.value().shape != Shape{D} || bias.value().shape != Shape{D})
    throw DimError("layer_norm gain/bias must have shape [" + std::to_string(D) + "]");
  if (eps < S(0)) throw DimError("layer_norm eps must be >= 0");
  const std::size_t rows = xv.numel() / D;
  const Array<S>& gv = gain.value();
  const Array<S>& bv = bias.value();

  Array<S> xhat(xv.shape);
  std::vector<S> inv_s(rows);
  Array<S> out(xv.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const S* xr = xv.data.data() + r * D;
    S mu = S(0);
    for (std::size_t i = 0; i < D; ++i) mu += xr[i];
    mu /= static_cast<S>(D);
    S var = S(0);
    for (std::size_t i = 0; i < D; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<S>(D);
    const S s = std::sqrt(var + eps);
    const S is = S(1) / s;
    inv_s[r] = is;
    for (std::size_t i = 0; i < D; ++i) {
      const S xh = (xr[i] - mu) * is;
      xhat[r * D + i] = xh;
      out[r * D + i] = gv[i] * xh + bv[i];
    }
  }

  const bool rg =
      t.requires_grad(x.id) || t.requires_grad(gain.id) || t.requires_grad(bias.id);
  return t.record(
      "layer_norm", std::move(out), rg,
      [x, gain, bias, xh = std::move(xhat), is = std::move(inv_s), D, rows](Tape<S>& tp,
                                                                            int self) {
        const Array<S>& g = tp.grad(self);
        const Array<S>& gv = tp.value(gain.id);
        Array<S>& dx = tp.grad(x.id);
        Array<S>& dgain = tp.grad(gain.id);
        Array<S>& dbias = tp.grad(bias.id);
        for (std::size_t r = 0; r < rows; ++r) {
          const S* gr = g.data.data() + r * D;
          const S* xhr = xh.data.data() + r * D;
          S m1 = S(0), m2 = S(0);
          for (std::size_t i = 0; i < D; ++i) {
            const S gh = gr[i] * gv[i];
            m1 += gh;
            m2 += gh * xhr[i];
            dgain[i] += gr[i] * xhr[i];
            dbias[i] += gr[i];
          }
          m1 /= static_cast<S>(D);
          m2 /= static_cast<S>(D);
          for (std::size_t i = 0; i < D; ++i) {
            const S gh = gr[i] * gv[i];
            dx[r * D + i] += is[r] * (gh - m1 - xhr[i] * m2);
          }
        }
      });
}

// Row softmax over the last axis (no mask; used by the attention ablation).
template <typename S>
Var<S> softmax_last(Var<S> x) {
  Tape<S>& t = *x.tape;
  const Array<S>& xv = x.value();
  const std::size_t D = xv.shape.back();
  const std::size_t rows = xv.numel() / D;
  Array<S> out(xv.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const S* xr = xv.data.data() + r * D;
    S* orow = out.data.data() + r * D;
    S mx = xr[0];
    for (std::size_t i = 1; i < D; ++i) mx = std::max(mx, xr[i]);
    S z = S(0);
    for (std::size_t i = 0; i < D; ++i) {
      orow[i] = std::exp(xr[i] - mx);
      z += orow[i];
    }
    const S iz = S(1) / z;
    for (std::size_t i = 0; i < D; ++i) orow[i] *= iz;
  }
  return t.record("softmax", std::move(out), t.requires_grad(x.id),
                  [x, D, rows](Tape<S>& tp, int self) {
                    const Array<S>& g = tp.grad(self);
                    const Array<S>& y = tp.value(self);
                    Array<S>& dx = tp.grad(x.id);
                    for (std::size_t r = 0; r < rows; ++r) {
                      const S* gr = g.data.data() + r * D;
                      const S* yr = y.data.data() + r * D;
                      S dot = S(0);
                      for (std::size_t i = 0; i < D; ++i) dot += gr[i] * yr[i];
                      for (std::size_t i = 0; i < D; ++i)
                        dx[r * D + i] += yr[i] * (gr[i] - dot);
                    }
                  });
}

// ---------------------------------------------------------------------------
// Causal depthwise convolution
// ---------------------------------------------------------------------------

// x: [B,S,C], kernel: [C,k], bias: [C] -> [B,S,C]
// out[b,t,c] = bias[c] + sum_j kernel[c,j] * x[b, t-(k-1)+j, c], zero-padded
// on the left; position t never reads positions > t.
template <typename S>
Var<S> causal_conv1d(Var<S> x, Var<S> kernel, Var<S> bias) {
  detail::require_same_tape(x, kernel);
  detail::require_same_tape(x, bias);
  Tape<S>& t = *x.tape;
  const Array<S>& xv = x.value();
  const Array<S>& kv = kernel.value();
  const Array<S>& bv = bias.value();
  if (xv.rank() != 3) throw DimError("causal_conv1d expects [B,S,C], got " + shape_str(xv.shape));
  const std::size_t B = xv.shape[0], Sq = xv.shape[1], C = xv.shape[2];
  if (kv.rank() != 2 || kv.shape[0] != C)
    throw DimError("conv kernel must be [C,k] with C=" + std::to_string(C) + ", got " +
                   shape_str(kv.shape));
  if (bv.shape != Shape{C}) throw DimError("conv bias must be [C], got " + shape_str(bv.shape));
  const std::size_t k = kv.shape[1];

  Array<S> out({B, Sq, C});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t tt = 0; tt < Sq; ++tt)
      for (std::size_t c = 0; c < C; ++c) {
        S acc = bv[c];
        for (std::size_t j = 0; j < k; ++j) {
          const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(tt) -
                                     static_cast<std::ptrdiff_t>(k - 1) +
                                     static_cast<std::ptrdiff_t>(j);
          if (src >= 0) acc += kv[c * k + j] * xv[(b * Sq + static_cast<std::size_t>(src)) * C + c];
        }
        out[(b * Sq + tt) * C + c] = acc;
      }

  const bool rg =
      t.requires_grad(x.id) || t.requires_grad(kernel.id) || t.requires_grad(bias.id);
  return t.record("causal_conv1d", std::move(out), rg,
                  [x, kernel, bias, B, Sq, C, k](Tape<S>& tp, int self) {
                    const Array<S>& g = tp.grad(self);
                    const Array<S>& xv = tp.value(x.id);
                    const Array<S>& kv = tp.value(kernel.id);
                    Array<S>& dx = tp.grad(x.id);
                    Array<S>& dk = tp.grad(kernel.id);
                    Array<S>& db = tp.grad(bias.id);
                    for (std::size_t b = 0; b < B; ++b)
                      for (std::size_t tt = 0; tt < Sq; ++tt)
                        for (std::size_t c = 0; c < C; ++c) {
                          const S gv = g[(b * Sq + tt) * C + c];
                          db[c] += gv;
                          for (std::size_t j = 0; j < k; ++j) {
                            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(tt) -
                                                       static_cast<std::ptrdiff_t>(k - 1) +
                                                       static_cast<std::ptrdiff_t>(j);
                            if (src >= 0) {
                              const std::size_t xi =
                                  (b * Sq + static_cast<std::size_t>(src)) * C + c;
                              dk[c * k + j] += gv * xv[xi];
                              dx[xi] += gv * kv[c * k + j];
                            }
                          }
                        }
                  });
}

}  // namespace smamba
