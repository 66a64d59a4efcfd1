#pragma once

#include <string>

#include "fdct/freq_extractors.hpp"
#include "fdct/nn_common.hpp"
#include "fdct/ops.hpp"
#include "fdct/params.hpp"
#include "fdct/udt.hpp"

namespace fdct {

template <typename Real>
struct CorrResult {
  TensorT<Real> value;      // scalar in [-1,1]
  bool degenerate = false;  // some sample had (near-)zero variance and was zeroed
};

// Pearson correlation over flattened per-sample features, mean-centered per
// sample, averaged across the batch. Zero-variance samples contribute 0 and
// raise the degeneracy flag instead of producing NaN.
template <typename Real>
CorrResult<Real> correlation_coefficient(const TensorT<Real>& a, const TensorT<Real>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("correlation operands differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  if (a.numel() < 2) throw ShapeError("correlation needs at least 2 elements");
  const std::int64_t batch = a.rank() >= 2 ? a.dim(0) : 1;
  const std::int64_t n = a.numel() / batch;
  if (n < 2) throw ShapeError("correlation needs at least 2 elements per sample");

  auto af = reshape(a, {batch, n});
  auto bf = reshape(b, {batch, n});
  auto ca = sub(af, reduce_mean(af, 1, true));
  auto cb = sub(bf, reduce_mean(bf, 1, true));
  auto va = reduce_sum(mul(ca, ca), 1);
  auto vb = reduce_sum(mul(cb, cb), 1);
  auto cov = reduce_sum(mul(ca, cb), 1);

  constexpr double kVarFloor = 1e-10;
  TensorT<Real> keep = TensorT<Real>::zeros({batch});
  bool degenerate = false;
  for (std::int64_t i = 0; i < batch; ++i) {
    const bool ok = double(va.values()[static_cast<std::size_t>(i)]) > kVarFloor &&
                    double(vb.values()[static_cast<std::size_t>(i)]) > kVarFloor;
    keep.values_mut()[static_cast<std::size_t>(i)] = ok ? Real(1) : Real(0);
    degenerate = degenerate || !ok;
  }
  // masked denominators collapse to 1 so the backward pass stays finite
  auto denom_arg = add(mul(mul(va, vb), keep), sub(TensorT<Real>::full({batch}, Real(1)), keep));
  auto cor = div(mul(cov, keep), sqrt(denom_arg));
  CorrResult<Real> res;
  res.value = reduce_mean(cor);
  res.degenerate = degenerate;
  return res;
}

template <typename Real>
struct LossValue {
  TensorT<Real> value;
  bool degenerate = false;
};

// Ratio penalty: squared cross-modal high-frequency correlation over
// low-frequency correlation shifted by beta. Positive denominator for any
// correlation since beta > 1.
template <typename Real>
LossValue<Real> decomposition_loss(const FeaturePair<Real>& fp_vis, const FeaturePair<Real>& fp_ir,
                                   Real beta = Real(1.0001)) {
  if (fp_vis.psi_hfe.shape() != fp_ir.psi_hfe.shape() || fp_vis.psi_lfe.shape() != fp_ir.psi_lfe.shape())
    throw ShapeError("decomposition loss: feature shapes differ across modalities");
  auto cor_h = correlation_coefficient(fp_vis.psi_hfe, fp_ir.psi_hfe);
  auto cor_l = correlation_coefficient(fp_vis.psi_lfe, fp_ir.psi_lfe);
  LossValue<Real> out;
  out.value = div(mul(cor_h.value, cor_h.value), add(cor_l.value, beta));
  out.degenerate = cor_h.degenerate || cor_l.degenerate;
  return out;
}

// Linear head over the concatenated pooled embeddings of both modalities.
template <typename Real>
struct ClassifierHead {
  TensorT<Real> weight;  // [2D, CLS]
  TensorT<Real> bias;    // [CLS]
  std::int64_t classes = 0;

  static ClassifierHead create(ParamRegistry<Real>& reg, Rng& rng, std::int64_t dim, std::int64_t classes) {
    ClassifierHead h;
    h.classes = classes;
    h.weight = reg.add("cls.weight", init_uniform<Real>(rng, {2 * dim, classes}, 2 * dim));
    h.bias = reg.add("cls.bias", TensorT<Real>::zeros({classes}));
    return h;
  }

  TensorT<Real> forward(const TokenSet<Real>& vis, const TokenSet<Real>& ir) const {
    auto fused = concat<Real>({vis.pooled, ir.pooled}, 1);
    return linear(fused, weight, bias);
  }
};

template <typename Real>
TensorT<Real> cross_entropy_loss(const TensorT<Real>& logits, const std::vector<int>& labels) {
  return cross_entropy_with_logits(logits, labels);
}

struct LossWeights {
  double sigma1 = 1.0;  // instance alignment
  double sigma2 = 1.0;  // sparse token alignment
  double sigma3 = 1.0;  // prototype alignment
  double gamma_decp = 1.0;
  double gamma_ce = 1.0;
};

struct LossBreakdown {
  double ita = 0, scma = 0, cpa = 0, decomposition = 0, cross_entropy = 0, total = 0;
  LossWeights weights;
};

// Component losses as tensors; empty tensors mean "not computed" and
// contribute zero (their weights should be zero too).
template <typename Real>
struct LossParts {
  TensorT<Real> ita, scma, cpa, decomposition, cross_entropy;
};

template <typename Real>
struct TotalLoss {
  TensorT<Real> value;
  LossBreakdown breakdown;
};

template <typename Real>
TotalLoss<Real> total_loss(const LossParts<Real>& parts, const LossWeights& w) {
  struct Item {
    const char* name;
    const TensorT<Real>* part;
    double weight;
    double* slot;
  };
  TotalLoss<Real> out;
  out.breakdown.weights = w;
  Item items[] = {
      {"ita", &parts.ita, w.sigma1, &out.breakdown.ita},
      {"scma", &parts.scma, w.sigma2, &out.breakdown.scma},
      {"cpa", &parts.cpa, w.sigma3, &out.breakdown.cpa},
      {"decomposition", &parts.decomposition, w.gamma_decp, &out.breakdown.decomposition},
      {"cross_entropy", &parts.cross_entropy, w.gamma_ce, &out.breakdown.cross_entropy},
  };
  TensorT<Real> total = TensorT<Real>::scalar(Real(0));
  for (const auto& it : items) {
    if (it.part->numel() == 0) continue;
    const double v = double(it.part->item());
    if (!std::isfinite(v)) throw DomainError("loss component '" + std::string(it.name) + "' is not finite");
    *it.slot = v;
    if (it.weight != 0.0) total = add(total, mul(*it.part, Real(it.weight)));
  }
  out.value = total;
  out.breakdown.total = double(total.item());
  return out;
}

}  // namespace fdct
