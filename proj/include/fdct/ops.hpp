#pragma once

#include <algorithm>
#include <cmath>
#include <optional>

#include "fdct/tensor.hpp"

namespace fdct {

enum class EwOp { Add, Sub, Mul, Div, Exp, Log, Neg, Relu, Gelu };
enum class ReduceOp { Sum, Mean, Max };

namespace detail {

template <typename Real>
inline bool same_shape(const TensorT<Real>& a, const TensorT<Real>& b) {
  return a.shape() == b.shape();
}

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

}  // namespace detail

// ---------- binary elementwise with trailing broadcast ----------

template <typename Real, typename FwdFn, typename BwdFn>
TensorT<Real> binary_ew(const TensorT<Real>& a, const TensorT<Real>& b, FwdFn fwd, BwdFn bwd) {
  Shape os = broadcast_shape(a.shape(), b.shape());
  TensorT<Real> out = TensorT<Real>::zeros(os);
  auto an = a.node();
  auto bn = b.node();
  auto on = out.node();
  const std::int64_t n = out.numel();
  if (detail::same_shape(a, b)) {
    const Real* pa = an->value.data();
    const Real* pb = bn->value.data();
    Real* po = on->value.data();
    for (std::int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i], i);
  } else {
    Bcast2Iter it(on->shape, an->shape, bn->shape);
    for (std::int64_t i = 0; i < n; ++i, it.next())
      on->value[static_cast<std::size_t>(i)] =
          fwd(an->value[static_cast<std::size_t>(it.oa)], bn->value[static_cast<std::size_t>(it.ob)], i);
  }
  record_op<Real>({a, b}, out, [an, bn, on, bwd]() {
    if (on->grad.empty()) return;
    const bool ga = an->requires_grad, gb = bn->requires_grad;
    if (ga) an->ensure_grad();
    if (gb) bn->ensure_grad();
    const std::int64_t n2 = static_cast<std::int64_t>(on->value.size());
    if (an->shape == bn->shape) {
      for (std::int64_t i = 0; i < n2; ++i) {
        auto u = static_cast<std::size_t>(i);
        Real da, db;
        bwd(an->value[u], bn->value[u], on->grad[u], da, db);
        if (ga) an->grad[u] += da;
        if (gb) bn->grad[u] += db;
      }
    } else {
      Bcast2Iter it(on->shape, an->shape, bn->shape);
      for (std::int64_t i = 0; i < n2; ++i, it.next()) {
        auto ua = static_cast<std::size_t>(it.oa), ub = static_cast<std::size_t>(it.ob);
        Real da, db;
        bwd(an->value[ua], bn->value[ub], on->grad[static_cast<std::size_t>(i)], da, db);
        if (ga) an->grad[ua] += da;
        if (gb) bn->grad[ub] += db;
      }
    }
  });
  return out;
}

template <typename Real>
TensorT<Real> add(const TensorT<Real>& a, const TensorT<Real>& b) {
  return binary_ew(
      a, b, [](Real x, Real y, std::int64_t) { return x + y; },
      [](Real, Real, Real g, Real& da, Real& db) {
        da = g;
        db = g;
      });
}

template <typename Real>
TensorT<Real> sub(const TensorT<Real>& a, const TensorT<Real>& b) {
  return binary_ew(
      a, b, [](Real x, Real y, std::int64_t) { return x - y; },
      [](Real, Real, Real g, Real& da, Real& db) {
        da = g;
        db = -g;
      });
}

template <typename Real>
TensorT<Real> mul(const TensorT<Real>& a, const TensorT<Real>& b) {
  return binary_ew(
      a, b, [](Real x, Real y, std::int64_t) { return x * y; },
      [](Real x, Real y, Real g, Real& da, Real& db) {
        da = g * y;
        db = g * x;
      });
}

template <typename Real>
TensorT<Real> div(const TensorT<Real>& a, const TensorT<Real>& b) {
  return binary_ew(
      a, b,
      [](Real x, Real y, std::int64_t i) {
        if (y == Real(0)) throw DomainError("division by zero at operand index " + std::to_string(i));
        return x / y;
      },
      [](Real x, Real y, Real g, Real& da, Real& db) {
        da = g / y;
        db = -g * x / (y * y);
      });
}

// ---------- unary elementwise ----------

template <typename Real, typename FwdFn, typename BwdFn>
TensorT<Real> unary_ew(const TensorT<Real>& a, FwdFn fwd, BwdFn bwd) {
  TensorT<Real> out = TensorT<Real>::zeros(a.shape());
  auto an = a.node();
  auto on = out.node();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    auto u = static_cast<std::size_t>(i);
    on->value[u] = fwd(an->value[u], i);
  }
  record_op<Real>({a}, out, [an, on, bwd]() {
    if (on->grad.empty()) return;
    an->ensure_grad();
    const std::int64_t n2 = static_cast<std::int64_t>(on->value.size());
    for (std::int64_t i = 0; i < n2; ++i) {
      auto u = static_cast<std::size_t>(i);
      an->grad[u] += bwd(an->value[u], on->value[u], on->grad[u]);
    }
  });
  return out;
}

template <typename Real>
TensorT<Real> neg(const TensorT<Real>& a) {
  return unary_ew(
      a, [](Real x, std::int64_t) { return -x; }, [](Real, Real, Real g) { return -g; });
}

template <typename Real>
TensorT<Real> exp(const TensorT<Real>& a) {
  return unary_ew(
      a, [](Real x, std::int64_t) { return std::exp(x); }, [](Real, Real y, Real g) { return g * y; });
}

template <typename Real>
TensorT<Real> log(const TensorT<Real>& a) {
  return unary_ew(
      a,
      [](Real x, std::int64_t i) {
        if (x <= Real(0)) throw DomainError("log of nonpositive value at operand index " + std::to_string(i));
        return std::log(x);
      },
      [](Real x, Real, Real g) { return g / x; });
}

template <typename Real>
TensorT<Real> relu(const TensorT<Real>& a) {
  return unary_ew(
      a, [](Real x, std::int64_t) { return x > Real(0) ? x : Real(0); },
      [](Real x, Real, Real g) { return x > Real(0) ? g : Real(0); });
}

template <typename Real>
TensorT<Real> gelu(const TensorT<Real>& a) {
  return unary_ew(
      a,
      [](Real x, std::int64_t) {
        return Real(0.5) * x * (Real(1) + Real(std::erf(double(x) * detail::kInvSqrt2)));
      },
      [](Real x, Real, Real g) {
        Real cdf = Real(0.5) * (Real(1) + Real(std::erf(double(x) * detail::kInvSqrt2)));
        Real pdf = Real(detail::kInvSqrt2Pi * std::exp(-0.5 * double(x) * double(x)));
        return g * (cdf + x * pdf);
      });
}

template <typename Real>
TensorT<Real> sqrt(const TensorT<Real>& a) {
  return unary_ew(
      a,
      [](Real x, std::int64_t i) {
        if (x < Real(0)) throw DomainError("sqrt of negative value at operand index " + std::to_string(i));
        return std::sqrt(x);
      },
      [](Real, Real y, Real g) { return g / (Real(2) * y); });
}

// Gradient passes through strictly inside the interval, zero outside.
template <typename Real>
TensorT<Real> clamp(const TensorT<Real>& a, Real lo, Real hi) {
  return unary_ew(
      a, [lo, hi](Real x, std::int64_t) { return std::min(std::max(x, lo), hi); },
      [lo, hi](Real x, Real, Real g) { return (x > lo && x < hi) ? g : Real(0); });
}

// ---------- scalar-constant convenience ----------

template <typename Real>
TensorT<Real> mul(const TensorT<Real>& a, Real c) {
  return unary_ew(
      a, [c](Real x, std::int64_t) { return x * c; }, [c](Real, Real, Real g) { return g * c; });
}

template <typename Real>
TensorT<Real> add(const TensorT<Real>& a, Real c) {
  return unary_ew(
      a, [c](Real x, std::int64_t) { return x + c; }, [](Real, Real, Real g) { return g; });
}

template <typename Real>
TensorT<Real> operator+(const TensorT<Real>& a, const TensorT<Real>& b) { return add(a, b); }
template <typename Real>
TensorT<Real> operator-(const TensorT<Real>& a, const TensorT<Real>& b) { return sub(a, b); }
template <typename Real>
TensorT<Real> operator*(const TensorT<Real>& a, const TensorT<Real>& b) { return mul(a, b); }
template <typename Real>
TensorT<Real> operator/(const TensorT<Real>& a, const TensorT<Real>& b) { return div(a, b); }
template <typename Real>
TensorT<Real> operator-(const TensorT<Real>& a) { return neg(a); }

template <typename Real>
TensorT<Real> elementwise(EwOp op, const TensorT<Real>& a) {
  switch (op) {
    case EwOp::Exp: return exp(a);
    case EwOp::Log: return log(a);
    case EwOp::Neg: return neg(a);
    case EwOp::Relu: return relu(a);
    case EwOp::Gelu: return gelu(a);
    default: throw ValueError("elementwise: binary op called without second operand");
  }
}

template <typename Real>
TensorT<Real> elementwise(EwOp op, const TensorT<Real>& a, const TensorT<Real>& b) {
  switch (op) {
    case EwOp::Add: return add(a, b);
    case EwOp::Sub: return sub(a, b);
    case EwOp::Mul: return mul(a, b);
    case EwOp::Div: return div(a, b);
    default: throw ValueError("elementwise: unary op called with second operand");
  }
}

// Value copy detached from the graph.
template <typename Real>
TensorT<Real> detach(const TensorT<Real>& a) {
  return TensorT<Real>::from_data(a.shape(), a.values());
}

// ---------- matmul ----------

namespace detail {

// C[m,n] += A[m,k] * B[k,n]
template <typename Real>
inline void gemm_acc_nn(const Real* A, const Real* B, Real* C, std::int64_t m, std::int64_t k, std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    Real* c = C + i * n;
    const Real* a = A + i * k;
    for (std::int64_t p = 0; p < k; ++p) {
      const Real av = a[p];
      const Real* b = B + p * n;
      for (std::int64_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C[m,k] += G[m,n] * B[k,n]^T
template <typename Real>
inline void gemm_acc_nt(const Real* G, const Real* B, Real* C, std::int64_t m, std::int64_t k, std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const Real* g = G + i * n;
    Real* c = C + i * k;
    for (std::int64_t p = 0; p < k; ++p) {
      const Real* b = B + p * n;
      Real s = 0;
      for (std::int64_t j = 0; j < n; ++j) s += g[j] * b[j];
      c[p] += s;
    }
  }
}

// C[k,n] += A[m,k]^T * G[m,n]
template <typename Real>
inline void gemm_acc_tn(const Real* A, const Real* G, Real* C, std::int64_t m, std::int64_t k, std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const Real* a = A + i * k;
    const Real* g = G + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      const Real av = a[p];
      Real* c = C + p * n;
      for (std::int64_t j = 0; j < n; ++j) c[j] += av * g[j];
    }
  }
}

}  // namespace detail

template <typename Real>
TensorT<Real> matmul(const TensorT<Real>& a, const TensorT<Real>& b) {
  if (a.rank() < 2 || b.rank() < 2) throw ShapeError("matmul expects rank >= 2 operands");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const std::int64_t m = sa[sa.size() - 2], ka = sa[sa.size() - 1];
  const std::int64_t kb = sb[sb.size() - 2], n = sb[sb.size() - 1];
  if (ka != kb)
    throw ShapeError("matmul inner dimensions disagree: " + shape_str(sa) + " x " + shape_str(sb));
  Shape ba(sa.begin(), sa.end() - 2), bb(sb.begin(), sb.end() - 2);
  Shape bo = broadcast_shape(ba, bb);
  Shape os = bo;
  os.push_back(m);
  os.push_back(n);
  TensorT<Real> out = TensorT<Real>::zeros(os);

  auto an = a.node();
  auto bn = b.node();
  auto on = out.node();
  const std::int64_t batches = shape_numel(bo);
  auto sta = broadcast_strides(ba, bo);
  auto stb = broadcast_strides(bb, bo);

  // Flat batch offsets per output batch index, resolved once.
  std::vector<std::int64_t> offa(static_cast<std::size_t>(batches)), offb(static_cast<std::size_t>(batches));
  {
    std::vector<std::int64_t> coord(bo.size(), 0);
    std::int64_t oa = 0, ob = 0;
    for (std::int64_t bi = 0; bi < batches; ++bi) {
      offa[static_cast<std::size_t>(bi)] = oa;
      offb[static_cast<std::size_t>(bi)] = ob;
      for (int d = static_cast<int>(bo.size()) - 1; d >= 0; --d) {
        auto ud = static_cast<std::size_t>(d);
        if (++coord[ud] < bo[ud]) {
          oa += sta[ud];
          ob += stb[ud];
          break;
        }
        coord[ud] = 0;
        oa -= sta[ud] * (bo[ud] - 1);
        ob -= stb[ud] * (bo[ud] - 1);
      }
    }
  }

  const std::int64_t k = ka;
  for (std::int64_t bi = 0; bi < batches; ++bi) {
    const Real* pa = an->value.data() + offa[static_cast<std::size_t>(bi)] * m * k;
    const Real* pb = bn->value.data() + offb[static_cast<std::size_t>(bi)] * k * n;
    Real* po = on->value.data() + bi * m * n;
    detail::gemm_acc_nn(pa, pb, po, m, k, n);
  }

  record_op<Real>({a, b}, out, [an, bn, on, offa, offb, m, k, n, batches]() {
    if (on->grad.empty()) return;
    const bool ga = an->requires_grad, gb = bn->requires_grad;
    if (ga) an->ensure_grad();
    if (gb) bn->ensure_grad();
    for (std::int64_t bi = 0; bi < batches; ++bi) {
      const Real* g = on->grad.data() + bi * m * n;
      const std::int64_t oa = offa[static_cast<std::size_t>(bi)] * m * k;
      const std::int64_t ob = offb[static_cast<std::size_t>(bi)] * k * n;
      if (ga) detail::gemm_acc_nt(g, bn->value.data() + ob, an->grad.data() + oa, m, k, n);
      if (gb) detail::gemm_acc_tn(an->value.data() + oa, g, bn->grad.data() + ob, m, k, n);
    }
  });
  return out;
}

// ---------- shape ops ----------

template <typename Real>
TensorT<Real> reshape(const TensorT<Real>& a, Shape s) {
  if (shape_numel(s) != a.numel())
    throw ShapeError("reshape " + shape_str(a.shape()) + " -> " + shape_str(s) + " changes element count");
  TensorT<Real> out = TensorT<Real>::from_data(std::move(s), a.values());
  auto an = a.node();
  auto on = out.node();
  record_op<Real>({a}, out, [an, on]() {
    if (on->grad.empty()) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
  });
  return out;
}

template <typename Real>
TensorT<Real> permute(const TensorT<Real>& a, const std::vector<int>& perm) {
  const int r = a.rank();
  if (static_cast<int>(perm.size()) != r) throw ShapeError("permute rank mismatch");
  Shape os(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) os[static_cast<std::size_t>(i)] = a.shape()[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  TensorT<Real> out = TensorT<Real>::zeros(os);
  auto an = a.node();
  auto on = out.node();

  // out flat index -> in flat index
  std::vector<std::int64_t> in_strides(static_cast<std::size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i)
    in_strides[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(i + 1)] * a.shape()[static_cast<std::size_t>(i + 1)];
  std::vector<std::int64_t> strides(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) strides[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];

  const std::int64_t n = a.numel();
  std::vector<std::int64_t> coord(static_cast<std::size_t>(r), 0);
  std::int64_t src = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    on->value[static_cast<std::size_t>(i)] = an->value[static_cast<std::size_t>(src)];
    for (int d = r - 1; d >= 0; --d) {
      auto ud = static_cast<std::size_t>(d);
      if (++coord[ud] < os[ud]) {
        src += strides[ud];
        break;
      }
      coord[ud] = 0;
      src -= strides[ud] * (os[ud] - 1);
    }
  }

  record_op<Real>({a}, out, [an, on, os, strides, r]() {
    if (on->grad.empty()) return;
    an->ensure_grad();
    const std::int64_t n2 = static_cast<std::int64_t>(on->value.size());
    std::vector<std::int64_t> coord(static_cast<std::size_t>(r), 0);
    std::int64_t src = 0;
    for (std::int64_t i = 0; i < n2; ++i) {
      an->grad[static_cast<std::size_t>(src)] += on->grad[static_cast<std::size_t>(i)];
      for (int d = r - 1; d >= 0; --d) {
        auto ud = static_cast<std::size_t>(d);
        if (++coord[ud] < os[ud]) {
          src += strides[ud];
          break;
        }
        coord[ud] = 0;
        src -= strides[ud] * (os[ud] - 1);
      }
    }
  });
  return out;
}

// Swap the last two axes.
template <typename Real>
TensorT<Real> transpose_last2(const TensorT<Real>& a) {
  std::vector<int> perm(static_cast<std::size_t>(a.rank()));
  for (int i = 0; i < a.rank(); ++i) perm[static_cast<std::size_t>(i)] = i;
  std::swap(perm[perm.size() - 1], perm[perm.size() - 2]);
  return permute(a, perm);
}

template <typename Real>
TensorT<Real> concat(const std::vector<TensorT<Real>>& parts, int axis) {
  if (parts.empty()) throw ValueError("concat of zero tensors");
  const int r = parts[0].rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("concat axis out of range");
  Shape os = parts[0].shape();
  std::int64_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != r) throw ShapeError("concat rank mismatch");
    for (int d = 0; d < r; ++d)
      if (d != axis && p.shape()[static_cast<std::size_t>(d)] != os[static_cast<std::size_t>(d)])
        throw ShapeError("concat shape mismatch at axis " + std::to_string(d));
    total += p.shape()[static_cast<std::size_t>(axis)];
  }
  os[static_cast<std::size_t>(axis)] = total;
  TensorT<Real> out = TensorT<Real>::zeros(os);
  auto on = out.node();

  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= os[static_cast<std::size_t>(d)];
  for (int d = axis + 1; d < r; ++d) inner *= os[static_cast<std::size_t>(d)];

  std::vector<std::shared_ptr<TensorNode<Real>>> nodes;
  std::vector<std::int64_t> sizes, offsets;
  std::int64_t off = 0;
  for (const auto& p : parts) {
    nodes.push_back(p.node());
    const std::int64_t sz = p.shape()[static_cast<std::size_t>(axis)];
    sizes.push_back(sz);
    offsets.push_back(off);
    for (std::int64_t o = 0; o < outer; ++o) {
      const Real* src = p.node()->value.data() + o * sz * inner;
      Real* dst = on->value.data() + (o * total + off) * inner;
      std::copy(src, src + sz * inner, dst);
    }
    off += sz;
  }

  // recorded manually: variable input count
  auto* tape = Tape<Real>::active();
  bool need = false;
  for (const auto& p : parts) need = need || p.requires_grad();
  if (tape && need) {
    out.node()->requires_grad = true;
    auto all = nodes;
    all.push_back(on);
    tape->record(all, [nodes, on, sizes, offsets, outer, inner, total]() {
      if (on->grad.empty()) return;
      for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
        if (!nodes[pi]->requires_grad) continue;
        nodes[pi]->ensure_grad();
        const std::int64_t sz = sizes[pi];
        for (std::int64_t o = 0; o < outer; ++o) {
          const Real* src = on->grad.data() + (o * total + offsets[pi]) * inner;
          Real* dst = nodes[pi]->grad.data() + o * sz * inner;
          for (std::int64_t i = 0; i < sz * inner; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return out;
}

template <typename Real>
TensorT<Real> slice(const TensorT<Real>& a, int axis, std::int64_t start, std::int64_t len) {
  const int r = a.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("slice axis out of range");
  const std::int64_t dim = a.shape()[static_cast<std::size_t>(axis)];
  if (start < 0 || len < 0 || start + len > dim) throw ShapeError("slice range out of bounds");
  Shape os = a.shape();
  os[static_cast<std::size_t>(axis)] = len;
  TensorT<Real> out = TensorT<Real>::zeros(os);
  auto an = a.node();
  auto on = out.node();

  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= a.shape()[static_cast<std::size_t>(d)];
  for (int d = axis + 1; d < r; ++d) inner *= a.shape()[static_cast<std::size_t>(d)];

  for (std::int64_t o = 0; o < outer; ++o) {
    const Real* src = an->value.data() + (o * dim + start) * inner;
    Real* dst = on->value.data() + o * len * inner;
    std::copy(src, src + len * inner, dst);
  }

  record_op<Real>({a}, out, [an, on, outer, inner, dim, start, len]() {
    if (on->grad.empty()) return;
    an->ensure_grad();
    for (std::int64_t o = 0; o < outer; ++o) {
      const Real* src = on->grad.data() + o * len * inner;
      Real* dst = an->grad.data() + (o * dim + start) * inner;
      for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
    }
  });
  return out;
}

// ---------- reductions ----------

namespace detail {

inline void reduce_geometry(const Shape& s, int axis, std::int64_t& outer, std::int64_t& dim, std::int64_t& inner) {
  outer = 1;
  inner = 1;
  for (int d = 0; d < axis; ++d) outer *= s[static_cast<std::size_t>(d)];
  dim = s[static_cast<std::size_t>(axis)];
  for (int d = axis + 1; d < static_cast<int>(s.size()); ++d) inner *= s[static_cast<std::size_t>(d)];
}

inline Shape reduced_shape(const Shape& s, std::optional<int> axis, bool keepdim) {
  if (!axis) return keepdim ? Shape(s.size(), 1) : Shape{};
  Shape os = s;
  if (keepdim) {
    os[static_cast<std::size_t>(*axis)] = 1;
  } else {
    os.erase(os.begin() + *axis);
  }
  return os;
}

}  // namespace detail

template <typename Real>
TensorT<Real> reduce_sum(const TensorT<Real>& a, std::optional<int> axis = std::nullopt, bool keepdim = false) {
  if (axis) {
    if (*axis < 0) *axis += a.rank();
    if (*axis < 0 || *axis >= a.rank()) throw ShapeError("reduce axis out of range");
  }
  TensorT<Real> out = TensorT<Real>::zeros(detail::reduced_shape(a.shape(), axis, keepdim));
  auto an = a.node();
  auto on = out.node();
  if (!axis) {
    Real s = 0;
    for (Real v : an->value) s += v;
    on->value[0] = s;
    record_op<Real>({a}, out, [an, on]() {
      if (on->grad.empty()) return;
      an->ensure_grad();
      const Real g = on->grad[0];
      for (auto& v : an->grad) v += g;
    });
    return out;
  }
  std::int64_t outer, dim, inner;
  detail::reduce_geometry(a.shape(), *axis, outer, dim, inner);
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t d = 0; d < dim; ++d) {
      const Real* src = an->value.data() + (o * dim + d) * inner;
      Real* dst = on->value.data() + o * inner;
      for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  record_op<Real>({a}, out, [an, on, outer, dim, inner]() {
    if (on->grad.empty()) return;
    an->ensure_grad();
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t d = 0; d < dim; ++d) {
        Real* dst = an->grad.data() + (o * dim + d) * inner;
        const Real* src = on->grad.data() + o * inner;
        for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
      }
  });
  return out;
}

template <typename Real>
TensorT<Real> reduce_mean(const TensorT<Real>& a, std::optional<int> axis = std::nullopt, bool keepdim = false) {
  std::int64_t cnt;
  if (!axis) {
    cnt = a.numel();
  } else {
    int ax = *axis < 0 ? *axis + a.rank() : *axis;
    if (ax < 0 || ax >= a.rank()) throw ShapeError("reduce axis out of range");
    cnt = a.shape()[static_cast<std::size_t>(ax)];
  }
  return mul(reduce_sum(a, axis, keepdim), Real(1) / Real(cnt));
}

// Max reduction; ties route the gradient to the first argmax in row-major order.
template <typename Real>
TensorT<Real> reduce_max(const TensorT<Real>& a, std::optional<int> axis = std::nullopt, bool keepdim = false) {
  if (a.numel() == 0) throw ShapeError("max of empty tensor");
  if (axis) {
    if (*axis < 0) *axis += a.rank();
    if (*axis < 0 || *axis >= a.rank()) throw ShapeError("reduce axis out of range");
  }
  TensorT<Real> out = TensorT<Real>::zeros(detail::reduced_shape(a.shape(), axis, keepdim));
  auto an = a.node();
  auto on = out.node();
  std::vector<std::int64_t> arg(on->value.size(), 0);
  if (!axis) {
    std::int64_t best = 0;
    for (std::int64_t i = 1; i < a.numel(); ++i)
      if (an->value[static_cast<std::size_t>(i)] > an->value[static_cast<std::size_t>(best)]) best = i;
    on->value[0] = an->value[static_cast<std::size_t>(best)];
    arg[0] = best;
  } else {
    std::int64_t outer, dim, inner;
    detail::reduce_geometry(a.shape(), *axis, outer, dim, inner);
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t i = 0; i < inner; ++i) {
        std::int64_t best = (o * dim) * inner + i;
        for (std::int64_t d = 1; d < dim; ++d) {
          std::int64_t idx = (o * dim + d) * inner + i;
          if (an->value[static_cast<std::size_t>(idx)] > an->value[static_cast<std::size_t>(best)]) best = idx;
        }
        on->value[static_cast<std::size_t>(o * inner + i)] = an->value[static_cast<std::size_t>(best)];
        arg[static_cast<std::size_t>(o * inner + i)] = best;
      }
  }
  record_op<Real>({a}, out, [an, on, arg]() {
    if (on->grad.empty()) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < arg.size(); ++i)
      an->grad[static_cast<std::size_t>(arg[i])] += on->grad[i];
  });
  return out;
}

template <typename Real>
TensorT<Real> reduce(ReduceOp op, const TensorT<Real>& a, std::optional<int> axis = std::nullopt,
                     bool keepdim = false) {
  switch (op) {
    case ReduceOp::Sum: return reduce_sum(a, axis, keepdim);
    case ReduceOp::Mean: return reduce_mean(a, axis, keepdim);
    case ReduceOp::Max: return reduce_max(a, axis, keepdim);
  }
  throw ValueError("unknown reduce op");
}

// ---------- softmax ----------

// Max-subtraction stabilized softmax along `axis`.
template <typename Real>
TensorT<Real> softmax(const TensorT<Real>& a, int axis) {
  if (axis < 0) axis += a.rank();
  if (axis < 0 || axis >= a.rank()) throw ShapeError("softmax axis out of range");
  std::int64_t outer, dim, inner;
  detail::reduce_geometry(a.shape(), axis, outer, dim, inner);
  TensorT<Real> out = TensorT<Real>::zeros(a.shape());
  auto an = a.node();
  auto on = out.node();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t i = 0; i < inner; ++i) {
      const std::int64_t base = o * dim * inner + i;
      Real m = an->value[static_cast<std::size_t>(base)];
      for (std::int64_t d = 1; d < dim; ++d)
        m = std::max(m, an->value[static_cast<std::size_t>(base + d * inner)]);
      if (std::isnan(double(m))) throw DomainError("softmax over NaN input");
      Real s = 0;
      for (std::int64_t d = 0; d < dim; ++d) {
        Real e = std::exp(an->value[static_cast<std::size_t>(base + d * inner)] - m);
        on->value[static_cast<std::size_t>(base + d * inner)] = e;
        s += e;
      }
      const Real inv = Real(1) / s;
      for (std::int64_t d = 0; d < dim; ++d) on->value[static_cast<std::size_t>(base + d * inner)] *= inv;
    }
  record_op<Real>({a}, out, [an, on, outer, dim, inner]() {
    if (on->grad.empty()) return;
    an->ensure_grad();
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t i = 0; i < inner; ++i) {
        const std::int64_t base = o * dim * inner + i;
        Real dot = 0;
        for (std::int64_t d = 0; d < dim; ++d) {
          auto u = static_cast<std::size_t>(base + d * inner);
          dot += on->grad[u] * on->value[u];
        }
        for (std::int64_t d = 0; d < dim; ++d) {
          auto u = static_cast<std::size_t>(base + d * inner);
          an->grad[u] += on->value[u] * (on->grad[u] - dot);
        }
      }
  });
  return out;
}

// ---------- convolutions ----------

// x [b,ci,h,w], w [co,ci,kh,kw], bias [co] optional; zero padding.
template <typename Real>
TensorT<Real> conv2d(const TensorT<Real>& x, const TensorT<Real>& w, const TensorT<Real>* bias,
                     int stride, int pad) {
  if (x.rank() != 4 || w.rank() != 4) throw ShapeError("conv2d expects rank-4 input and kernel");
  const std::int64_t b = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::int64_t co = w.dim(0), wci = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (ci != wci) throw ShapeError("conv2d channel mismatch: input " + std::to_string(ci) + " vs kernel " + std::to_string(wci));
  if (bias && (bias->rank() != 1 || bias->dim(0) != co)) throw ShapeError("conv2d bias shape mismatch");
  const std::int64_t oh = (h + 2 * pad - kh) / stride + 1;
  const std::int64_t ow = (wd + 2 * pad - kw) / stride + 1;
  if (oh <= 0 || ow <= 0) throw ShapeError("conv2d output would be empty");
  TensorT<Real> out = TensorT<Real>::zeros({b, co, oh, ow});
  auto xn = x.node();
  auto wn = w.node();
  auto onode = out.node();
  std::shared_ptr<TensorNode<Real>> bnode = bias ? bias->node() : nullptr;

  const Real* px = xn->value.data();
  const Real* pw = wn->value.data();
  Real* po = onode->value.data();
  for (std::int64_t ib = 0; ib < b; ++ib)
    for (std::int64_t oc = 0; oc < co; ++oc) {
      const Real bv = bnode ? bnode->value[static_cast<std::size_t>(oc)] : Real(0);
      for (std::int64_t oy = 0; oy < oh; ++oy)
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          Real s = bv;
          const std::int64_t iy0 = oy * stride - pad, ix0 = ox * stride - pad;
          for (std::int64_t ic = 0; ic < ci; ++ic) {
            const Real* xp = px + ((ib * ci + ic) * h) * wd;
            const Real* wp = pw + ((oc * ci + ic) * kh) * kw;
            for (std::int64_t ky = 0; ky < kh; ++ky) {
              const std::int64_t iy = iy0 + ky;
              if (iy < 0 || iy >= h) continue;
              for (std::int64_t kx = 0; kx < kw; ++kx) {
                const std::int64_t ix = ix0 + kx;
                if (ix < 0 || ix >= wd) continue;
                s += xp[iy * wd + ix] * wp[ky * kw + kx];
              }
            }
          }
          po[((ib * co + oc) * oh + oy) * ow + ox] = s;
        }
    }

  std::vector<TensorT<Real>> ins{x, w};
  if (bias) ins.push_back(*bias);
  auto* tape = Tape<Real>::active();
  bool need = false;
  for (auto& t : ins) need = need || t.requires_grad();
  if (tape && need) {
    out.node()->requires_grad = true;
    std::vector<std::shared_ptr<TensorNode<Real>>> nodes{xn, wn, onode};
    if (bnode) nodes.push_back(bnode);
    tape->record(nodes, [xn, wn, bnode, onode, b, ci, h, wd, co, kh, kw, oh, ow, stride, pad]() {
      if (onode->grad.empty()) return;
      const bool gx = xn->requires_grad, gw = wn->requires_grad;
      const bool gb = bnode && bnode->requires_grad;
      if (gx) xn->ensure_grad();
      if (gw) wn->ensure_grad();
      if (gb) bnode->ensure_grad();
      const Real* px = xn->value.data();
      const Real* pw = wn->value.data();
      const Real* g = onode->grad.data();
      for (std::int64_t ib = 0; ib < b; ++ib)
        for (std::int64_t oc = 0; oc < co; ++oc)
          for (std::int64_t oy = 0; oy < oh; ++oy)
            for (std::int64_t ox = 0; ox < ow; ++ox) {
              const Real gv = g[((ib * co + oc) * oh + oy) * ow + ox];
              if (gv == Real(0)) continue;
              if (gb) bnode->grad[static_cast<std::size_t>(oc)] += gv;
              const std::int64_t iy0 = oy * stride - pad, ix0 = ox * stride - pad;
              for (std::int64_t ic = 0; ic < ci; ++ic) {
                const std::int64_t xbase = ((ib * ci + ic) * h) * wd;
                const std::int64_t wbase = ((oc * ci + ic) * kh) * kw;
                for (std::int64_t ky = 0; ky < kh; ++ky) {
                  const std::int64_t iy = iy0 + ky;
                  if (iy < 0 || iy >= h) continue;
                  for (std::int64_t kx = 0; kx < kw; ++kx) {
                    const std::int64_t ix = ix0 + kx;
                    if (ix < 0 || ix >= wd) continue;
                    if (gx) xn->grad[static_cast<std::size_t>(xbase + iy * wd + ix)] += gv * pw[wbase + ky * kw + kx];
                    if (gw) wn->grad[static_cast<std::size_t>(wbase + ky * kw + kx)] += gv * px[xbase + iy * wd + ix];
                  }
                }
              }
            }
    });
  }
  return out;
}

// Per-channel convolution with same padding. x [b,c,h,w], kernel [c,1,kh,kw], kh/kw odd.
template <typename Real>
TensorT<Real> conv2d_depthwise(const TensorT<Real>& x, const TensorT<Real>& kernel) {
  if (x.rank() != 4 || kernel.rank() != 4) throw ShapeError("conv2d_depthwise expects rank-4 input and kernel");
  const std::int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (kernel.dim(0) != c || kernel.dim(1) != 1)
    throw ShapeError("conv2d_depthwise kernel channels " + std::to_string(kernel.dim(0)) +
                     " do not match input channels " + std::to_string(c));
  const std::int64_t kh = kernel.dim(2), kw = kernel.dim(3);
  if (kh % 2 == 0 || kw % 2 == 0) throw ShapeError("conv2d_depthwise kernel dims must be odd");
  const std::int64_t ph = kh / 2, pw2 = kw / 2;
  TensorT<Real> out = TensorT<Real>::zeros({b, c, h, w});
  auto xn = x.node();
  auto kn = kernel.node();
  auto on = out.node();

  const Real* px = xn->value.data();
  const Real* pk = kn->value.data();
  Real* po = on->value.data();
  for (std::int64_t ib = 0; ib < b; ++ib)
    for (std::int64_t ic = 0; ic < c; ++ic) {
      const Real* xp = px + ((ib * c + ic) * h) * w;
      const Real* kp = pk + (ic * kh) * kw;
      Real* op = po + ((ib * c + ic) * h) * w;
      for (std::int64_t oy = 0; oy < h; ++oy)
        for (std::int64_t ox = 0; ox < w; ++ox) {
          Real s = 0;
          for (std::int64_t ky = 0; ky < kh; ++ky) {
            const std::int64_t iy = oy + ky - ph;
            if (iy < 0 || iy >= h) continue;
            for (std::int64_t kx = 0; kx < kw; ++kx) {
              const std::int64_t ix = ox + kx - pw2;
              if (ix < 0 || ix >= w) continue;
              s += xp[iy * w + ix] * kp[ky * kw + kx];
            }
          }
          op[oy * w + ox] = s;
        }
    }

  record_op<Real>({x, kernel}, out, [xn, kn, on, b, c, h, w, kh, kw, ph, pw2]() {
    if (on->grad.empty()) return;
    const bool gx = xn->requires_grad, gk = kn->requires_grad;
    if (gx) xn->ensure_grad();
    if (gk) kn->ensure_grad();
    const Real* px = xn->value.data();
    const Real* pk = kn->value.data();
    const Real* g = on->grad.data();
    for (std::int64_t ib = 0; ib < b; ++ib)
      for (std::int64_t ic = 0; ic < c; ++ic) {
        const std::int64_t xbase = ((ib * c + ic) * h) * w;
        const std::int64_t kbase = (ic * kh) * kw;
        for (std::int64_t oy = 0; oy < h; ++oy)
          for (std::int64_t ox = 0; ox < w; ++ox) {
            const Real gv = g[xbase + oy * w + ox];
            if (gv == Real(0)) continue;
            for (std::int64_t ky = 0; ky < kh; ++ky) {
              const std::int64_t iy = oy + ky - ph;
              if (iy < 0 || iy >= h) continue;
              for (std::int64_t kx = 0; kx < kw; ++kx) {
                const std::int64_t ix = ox + kx - pw2;
                if (ix < 0 || ix >= w) continue;
                if (gx) xn->grad[static_cast<std::size_t>(xbase + iy * w + ix)] += gv * pk[kbase + ky * kw + kx];
                if (gk) kn->grad[static_cast<std::size_t>(kbase + ky * kw + kx)] += gv * px[xbase + iy * w + ix];
              }
            }
          }
      }
  });
  return out;
}

// ---------- classification loss ----------

// Batch-averaged -log softmax(logits)[label], computed in log space.
template <typename Real>
TensorT<Real> cross_entropy_with_logits(const TensorT<Real>& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy expects [batch, classes] logits");
  const std::int64_t b = logits.dim(0), c = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != b) throw ValueError("label count does not match batch");
  for (int y : labels)
    if (y < 0 || y >= c) throw ValueError("label " + std::to_string(y) + " out of range [0," + std::to_string(c) + ")");
  auto ln = logits.node();
  Real total = 0;
  for (std::int64_t i = 0; i < b; ++i) {
    const Real* row = ln->value.data() + i * c;
    Real m = row[0];
    for (std::int64_t j = 1; j < c; ++j) m = std::max(m, row[j]);
    Real s = 0;
    for (std::int64_t j = 0; j < c; ++j) s += std::exp(row[j] - m);
    total += (m + Real(std::log(double(s)))) - row[labels[static_cast<std::size_t>(i)]];
  }
  TensorT<Real> out = TensorT<Real>::scalar(total / Real(b));
  auto on = out.node();
  record_op<Real>({logits}, out, [ln, on, labels, b, c]() {
    if (on->grad.empty()) return;
    ln->ensure_grad();
    const Real g = on->grad[0] / Real(b);
    for (std::int64_t i = 0; i < b; ++i) {
      const Real* row = ln->value.data() + i * c;
      Real m = row[0];
      for (std::int64_t j = 1; j < c; ++j) m = std::max(m, row[j]);
      Real s = 0;
      for (std::int64_t j = 0; j < c; ++j) s += std::exp(row[j] - m);
      const Real inv = Real(1) / s;
      Real* gr = ln->grad.data() + i * c;
      for (std::int64_t j = 0; j < c; ++j) gr[j] += g * std::exp(row[j] - m) * inv;
      gr[labels[static_cast<std::size_t>(i)]] -= g;
    }
  });
  return out;
}

// ---------- small conveniences ----------

template <typename Real>
TensorT<Real> ones_like(const TensorT<Real>& a) {
  return TensorT<Real>::full(a.shape(), Real(1));
}

template <typename Real>
TensorT<Real> zeros_like(const TensorT<Real>& a) {
  return TensorT<Real>::zeros(a.shape());
}

template <typename Real>
TensorT<Real> square(const TensorT<Real>& a) {
  return mul(a, a);
}

}  // namespace fdct
