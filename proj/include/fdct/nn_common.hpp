#pragma once

#include "fdct/ops.hpp"

namespace fdct {

enum class Modality { Visible, Infrared };

inline const char* modality_prefix(Modality m) { return m == Modality::Visible ? "vis" : "ir"; }

template <typename Real>
TensorT<Real> linear(const TensorT<Real>& x, const TensorT<Real>& w, const TensorT<Real>& bias) {
  return add(matmul(x, w), bias);
}

// Per-position channel mixing: x [b,C,H,W] * W[Cin,Cout] + bias[Cout].
template <typename Real>
TensorT<Real> channel_linear(const TensorT<Real>& x, const TensorT<Real>& w, const TensorT<Real>& bias) {
  const std::int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  auto t = reshape(permute(x, {0, 2, 3, 1}), {b * h * wd, c});
  auto y = add(matmul(t, w), bias);
  const std::int64_t co = w.dim(1);
  return permute(reshape(y, {b, h, wd, co}), {0, 3, 1, 2});
}

}  // namespace fdct
