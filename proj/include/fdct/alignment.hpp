#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "fdct/nn_common.hpp"
#include "fdct/ops.hpp"
#include "fdct/params.hpp"

namespace fdct {

struct AlignmentTemps {
  double gamma1 = 0.1;   // instance alignment
  double gamma2 = 0.07;  // sparse token alignment
  double gamma3 = 0.2;   // prototype alignment

  void validate() const {
    if (gamma1 <= 0 || gamma2 <= 0 || gamma3 <= 0)
      throw ValueError("alignment temperatures must be strictly positive");
  }
};

// Rows scaled to unit L2 norm along the last axis.
template <typename Real>
TensorT<Real> l2_normalize_rows(const TensorT<Real>& x) {
  auto n2 = reduce_sum(mul(x, x), -1, true);
  for (Real v : n2.values())
    if (!(double(v) > 0.0)) throw ValueError("cannot normalize a zero-norm embedding");
  return div(x, sqrt(n2));
}

// Euclidean projection of each row (last axis) onto the probability simplex:
// sort descending, find the support size, subtract the threshold, clip at 0.
// Backward: g restricted to the support minus its support mean.
template <typename Real>
TensorT<Real> sparsemax(const TensorT<Real>& x) {
  if (x.rank() < 1) throw ShapeError("sparsemax expects rank >= 1");
  const std::int64_t n = x.dim(-1);
  const std::int64_t rows = x.numel() / n;
  TensorT<Real> out = TensorT<Real>::zeros(x.shape());
  auto xn = x.node();
  auto on = out.node();
  std::vector<Real> sorted(static_cast<std::size_t>(n));
  for (std::int64_t r = 0; r < rows; ++r) {
    const Real* z = xn->value.data() + r * n;
    Real* y = on->value.data() + r * n;
    Real mx = z[0];
    for (std::int64_t i = 0; i < n; ++i) {
      if (std::isnan(double(z[i]))) throw DomainError("sparsemax over NaN input");
      mx = std::max(mx, z[i]);
    }
    for (std::int64_t i = 0; i < n; ++i) sorted[static_cast<std::size_t>(i)] = z[i] - mx;
    std::sort(sorted.begin(), sorted.end(), std::greater<Real>());
    Real cum = 0, cum_k = 0;
    std::int64_t k = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      cum += sorted[static_cast<std::size_t>(i)];
      if (Real(1) + Real(i + 1) * sorted[static_cast<std::size_t>(i)] > cum) {
        k = i + 1;
        cum_k = cum;
      }
    }
    const Real tau = (cum_k - Real(1)) / Real(k);
    for (std::int64_t i = 0; i < n; ++i) y[i] = std::max(z[i] - mx - tau, Real(0));
  }
  record_op<Real>({x}, out, [xn, on, rows, n]() {
    if (on->grad.empty()) return;
    xn->ensure_grad();
    for (std::int64_t r = 0; r < rows; ++r) {
      const Real* y = on->value.data() + r * n;
      const Real* g = on->grad.data() + r * n;
      Real* gx = xn->grad.data() + r * n;
      Real gsum = 0;
      std::int64_t support = 0;
      for (std::int64_t i = 0; i < n; ++i)
        if (y[i] > Real(0)) {
          gsum += g[i];
          ++support;
        }
      const Real gmean = gsum / Real(support);
      for (std::int64_t i = 0; i < n; ++i)
        if (y[i] > Real(0)) gx[i] += g[i] - gmean;
    }
  });
  return out;
}

// Balanced soft assignments from a [B,E] similarity matrix: start from
// exp(sim/eps), then alternate column normalization (target B/E) and row
// normalization (target 1). Row sums accumulate over sorted values so the
// result is bit-exactly equivariant under prototype permutation. Gradients
// do not flow; the result is a constant.
template <typename Real>
TensorT<Real> sinkhorn_assign(const TensorT<Real>& similarities, int iters, double eps) {
  if (similarities.rank() != 2) throw ShapeError("sinkhorn_assign expects [B,E]");
  const std::int64_t B = similarities.dim(0), E = similarities.dim(1);
  for (Real v : similarities.values())
    if (!std::isfinite(double(v))) throw DomainError("sinkhorn_assign over non-finite similarities");

  TensorT<Real> q = TensorT<Real>::zeros({B, E});
  auto& m = q.values_mut();
  Real mx = similarities.values()[0];
  for (Real v : similarities.values()) mx = std::max(mx, v);
  for (std::int64_t i = 0; i < B * E; ++i)
    m[static_cast<std::size_t>(i)] =
        Real(std::exp((double(similarities.values()[static_cast<std::size_t>(i)]) - double(mx)) / eps));

  std::vector<Real> rowbuf(static_cast<std::size_t>(E));
  const Real col_target = Real(double(B) / double(E));
  for (int t = 0; t < iters; ++t) {
    for (std::int64_t e = 0; e < E; ++e) {
      Real s = 0;
      for (std::int64_t b = 0; b < B; ++b) s += m[static_cast<std::size_t>(b * E + e)];
      const Real scale = col_target / s;
      for (std::int64_t b = 0; b < B; ++b) m[static_cast<std::size_t>(b * E + e)] *= scale;
    }
    for (std::int64_t b = 0; b < B; ++b) {
      for (std::int64_t e = 0; e < E; ++e) rowbuf[static_cast<std::size_t>(e)] = m[static_cast<std::size_t>(b * E + e)];
      std::sort(rowbuf.begin(), rowbuf.end());
      Real s = 0;
      for (Real v : rowbuf) s += v;
      const Real scale = Real(1) / s;
      for (std::int64_t e = 0; e < E; ++e) m[static_cast<std::size_t>(b * E + e)] *= scale;
    }
  }
  return q;
}

// Instance heads (two-layer, GELU), per-modality token projections, and the
// cross-attention maps used by the sparse token alignment.
template <typename Real>
struct ProjectionHeads {
  std::int64_t in_dim = 0, out_dim = 0;
  TensorT<Real> inst_w1_v, inst_b1_v, inst_w2_v, inst_b2_v;
  TensorT<Real> inst_w1_i, inst_b1_i, inst_w2_i, inst_b2_i;
  TensorT<Real> tok_w_v, tok_b_v, tok_w_i, tok_b_i;
  TensorT<Real> q_hat, k_hat, v_hat;  // [d,d]
  TensorT<Real> o_w, o_b;

  static ProjectionHeads create(ParamRegistry<Real>& reg, Rng& rng, std::int64_t D, std::int64_t d) {
    ProjectionHeads h;
    h.in_dim = D;
    h.out_dim = d;
    auto mk_inst = [&](const std::string& p, TensorT<Real>& w1, TensorT<Real>& b1, TensorT<Real>& w2,
                       TensorT<Real>& b2) {
      w1 = reg.add(p + ".w1", init_uniform<Real>(rng, {D, D}, D));
      b1 = reg.add(p + ".b1", TensorT<Real>::zeros({D}));
      w2 = reg.add(p + ".w2", init_uniform<Real>(rng, {D, d}, D));
      b2 = reg.add(p + ".b2", TensorT<Real>::zeros({d}));
    };
    mk_inst("align.inst_v", h.inst_w1_v, h.inst_b1_v, h.inst_w2_v, h.inst_b2_v);
    mk_inst("align.inst_i", h.inst_w1_i, h.inst_b1_i, h.inst_w2_i, h.inst_b2_i);
    h.tok_w_v = reg.add("align.tok_v.w", init_uniform<Real>(rng, {D, d}, D));
    h.tok_b_v = reg.add("align.tok_v.b", TensorT<Real>::zeros({d}));
    h.tok_w_i = reg.add("align.tok_i.w", init_uniform<Real>(rng, {D, d}, D));
    h.tok_b_i = reg.add("align.tok_i.b", TensorT<Real>::zeros({d}));
    h.q_hat = reg.add("align.xattn.q", init_uniform<Real>(rng, {d, d}, d));
    h.k_hat = reg.add("align.xattn.k", init_uniform<Real>(rng, {d, d}, d));
    h.v_hat = reg.add("align.xattn.v", init_uniform<Real>(rng, {d, d}, d));
    h.o_w = reg.add("align.xattn.o_w", init_uniform<Real>(rng, {d, d}, d));
    h.o_b = reg.add("align.xattn.o_b", TensorT<Real>::zeros({d}));
    return h;
  }

  // pooled [B,D] -> unit-norm [B,d]
  TensorT<Real> instance_embed(const TensorT<Real>& pooled, Modality m) const {
    const bool vis = m == Modality::Visible;
    auto hdn = gelu(linear(pooled, vis ? inst_w1_v : inst_w1_i, vis ? inst_b1_v : inst_b1_i));
    auto out = linear(hdn, vis ? inst_w2_v : inst_w2_i, vis ? inst_b2_v : inst_b2_i);
    return l2_normalize_rows(out);
  }

  // tokens [b,N,D] -> unit-norm [b,N,d]
  TensorT<Real> project_tokens(const TensorT<Real>& tokens, Modality m) const {
    const bool vis = m == Modality::Visible;
    return l2_normalize_rows(linear(tokens, vis ? tok_w_v : tok_w_i, vis ? tok_b_v : tok_b_i));
  }
};

template <typename Real>
struct PrototypeBank {
  TensorT<Real> prototypes;  // [E,d], unit rows

  static PrototypeBank create(ParamRegistry<Real>& reg, Rng& rng, std::int64_t E, std::int64_t d) {
    PrototypeBank b;
    auto t = init_normal<Real>(rng, {E, d}, 1.0);
    // start on the unit sphere
    for (std::int64_t e = 0; e < E; ++e) {
      double n2 = 0;
      for (std::int64_t j = 0; j < d; ++j) n2 += double(t.values()[static_cast<std::size_t>(e * d + j)]) *
                                                 double(t.values()[static_cast<std::size_t>(e * d + j)]);
      const Real inv = Real(1.0 / std::sqrt(n2));
      for (std::int64_t j = 0; j < d; ++j) t.values_mut()[static_cast<std::size_t>(e * d + j)] *= inv;
    }
    b.prototypes = reg.add("proto.bank", t);
    return b;
  }

  std::int64_t count() const { return prototypes.dim(0); }

  // Post-step hook: rescale each prototype to unit norm in place.
  void renormalize() {
    const std::int64_t E = prototypes.dim(0), d = prototypes.dim(1);
    auto& v = prototypes.values_mut();
    for (std::int64_t e = 0; e < E; ++e) {
      double n2 = 0;
      for (std::int64_t j = 0; j < d; ++j) n2 += double(v[static_cast<std::size_t>(e * d + j)]) *
                                                 double(v[static_cast<std::size_t>(e * d + j)]);
      if (n2 <= 0) throw ValueError("prototype collapsed to zero norm");
      const Real inv = Real(1.0 / std::sqrt(n2));
      for (std::int64_t j = 0; j < d; ++j) v[static_cast<std::size_t>(e * d + j)] *= inv;
    }
  }
};

// Symmetric InfoNCE over matched unit-norm embedding pairs [B,d]; positives
// sit on the diagonal of the similarity matrix.
template <typename Real>
TensorT<Real> info_nce_pair(const TensorT<Real>& emb_a, const TensorT<Real>& emb_b, Real gamma) {
  if (emb_a.shape() != emb_b.shape() || emb_a.rank() != 2)
    throw ShapeError("info_nce_pair expects matching [B,d] embeddings");
  const std::int64_t B = emb_a.dim(0);
  auto logits = mul(matmul(emb_a, transpose_last2(emb_b)), Real(1) / gamma);
  std::vector<int> diag(static_cast<std::size_t>(B));
  for (std::int64_t i = 0; i < B; ++i) diag[static_cast<std::size_t>(i)] = static_cast<int>(i);
  auto l_ab = cross_entropy_with_logits(logits, diag);
  auto l_ba = cross_entropy_with_logits(transpose_last2(logits), diag);
  return mul(add(l_ab, l_ba), Real(0.5));
}

template <typename Real>
TensorT<Real> ita_loss(const TensorT<Real>& pooled_vis, const TensorT<Real>& pooled_ir,
                       const ProjectionHeads<Real>& heads, Real gamma1) {
  auto yhat = heads.instance_embed(pooled_vis, Modality::Visible);
  auto zhat = heads.instance_embed(pooled_ir, Modality::Infrared);
  return info_nce_pair(yhat, zhat, gamma1);
}

// Sparse cross-attention: every query token attends the other modality's
// tokens through sparsemax weights. alpha_out receives [b,Nq,Nk].
template <typename Real>
TensorT<Real> scma_attend(const TensorT<Real>& query_tokens, const TensorT<Real>& kv_tokens,
                          const ProjectionHeads<Real>& heads, TensorT<Real>* alpha_out = nullptr) {
  if (query_tokens.dim(-1) != kv_tokens.dim(-1)) throw ShapeError("scma_attend dim mismatch");
  if (query_tokens.dim(1) != kv_tokens.dim(1))
    throw ShapeError("scma_attend token count mismatch: " + std::to_string(query_tokens.dim(1)) + " vs " +
                     std::to_string(kv_tokens.dim(1)));
  const std::int64_t d = query_tokens.dim(-1);
  auto q = matmul(query_tokens, heads.q_hat);
  auto k = matmul(kv_tokens, heads.k_hat);
  auto v = matmul(kv_tokens, heads.v_hat);
  auto logits = mul(matmul(q, transpose_last2(k)), Real(1.0 / std::sqrt(double(d))));
  auto alpha = sparsemax(logits);
  if (alpha_out) *alpha_out = alpha;
  return linear(matmul(alpha, v), heads.o_w, heads.o_b);
}

// One direction of the token-level contrastive loss: anchors [b,N,d]
// (unit-norm) against their attended embeddings, weighted per token,
// using within-sample tokens as the candidate set.
template <typename Real>
TensorT<Real> token_infonce(const TensorT<Real>& anchors, const TensorT<Real>& attended,
                            const TensorT<Real>& weights, Real gamma) {
  const std::int64_t b = anchors.dim(0), n = anchors.dim(1);
  for (Real w : weights.values())
    if (w < Real(0)) throw ValueError("token weights must be nonnegative");
  auto att = l2_normalize_rows(attended);
  auto logits = mul(matmul(anchors, transpose_last2(att)), Real(1) / gamma);  // [b,N,N]
  TensorT<Real> eye = TensorT<Real>::zeros({n, n});
  for (std::int64_t i = 0; i < n; ++i) eye.values_mut()[static_cast<std::size_t>(i * n + i)] = Real(1);
  auto d1 = neg(log(reduce_sum(mul(softmax(logits, 2), eye), 2)));                    // anchor -> attended
  auto d2 = neg(log(reduce_sum(mul(softmax(transpose_last2(logits), 2), eye), 2)));   // attended -> anchor
  auto weighted = mul(weights, add(d1, d2));
  return mul(reduce_sum(weighted), Real(1) / Real(2 * b * n));
}

// Bidirectional sparse token alignment. Empty weight tensors mean uniform.
template <typename Real>
TensorT<Real> scma_loss(const TensorT<Real>& tokens_vis, const TensorT<Real>& tokens_ir,
                        const ProjectionHeads<Real>& heads, const TensorT<Real>& weights_vis,
                        const TensorT<Real>& weights_ir, Real gamma2) {
  if (tokens_vis.dim(1) != tokens_ir.dim(1))
    throw ShapeError("scma_loss token counts differ across modalities");
  const std::int64_t b = tokens_vis.dim(0), n = tokens_vis.dim(1);
  auto wv = weights_vis.numel() ? weights_vis : TensorT<Real>::full({b, n}, Real(1));
  auto wi = weights_ir.numel() ? weights_ir : TensorT<Real>::full({b, n}, Real(1));

  auto y = heads.project_tokens(tokens_vis, Modality::Visible);
  auto z = heads.project_tokens(tokens_ir, Modality::Infrared);
  auto a_vis = scma_attend(y, z, heads);  // visible queries attend infrared tokens
  auto a_ir = scma_attend(z, y, heads);
  auto vita = token_infonce(y, a_vis, wv, gamma2);
  auto ivta = token_infonce(z, a_ir, wi, gamma2);
  return mul(add(vita, ivta), Real(0.5));
}

template <typename Real>
struct CpaOptions {
  int sinkhorn_iters = 3;
  double sinkhorn_eps = 0.05;
  // Precomputed assignments, e.g. so a finite-difference oracle can hold the
  // gradient-blocked constants fixed across perturbations.
  const TensorT<Real>* q_v_fixed = nullptr;
  const TensorT<Real>* q_i_fixed = nullptr;
  TensorT<Real>* q_v_out = nullptr;
  TensorT<Real>* q_i_out = nullptr;
};

// Prototype-level alignment: softmax predictions against swapped Sinkhorn
// assignments, cross-entropy averaged over both directions and the batch.
template <typename Real>
TensorT<Real> cpa_loss(const TensorT<Real>& yhat, const TensorT<Real>& zhat, const PrototypeBank<Real>& bank,
                       Real gamma3, const CpaOptions<Real>& opt = {}) {
  if (yhat.dim(1) != bank.prototypes.dim(1))
    throw ShapeError("embedding dim " + std::to_string(yhat.dim(1)) + " does not match prototype dim " +
                     std::to_string(bank.prototypes.dim(1)));
  const std::int64_t B = yhat.dim(0);
  auto sim_v = matmul(yhat, transpose_last2(bank.prototypes));  // [B,E] cosine similarities
  auto sim_i = matmul(zhat, transpose_last2(bank.prototypes));
  auto p_v = softmax(mul(sim_v, Real(1) / gamma3), 1);
  auto p_i = softmax(mul(sim_i, Real(1) / gamma3), 1);
  auto q_v = opt.q_v_fixed ? *opt.q_v_fixed : sinkhorn_assign(detach(sim_v), opt.sinkhorn_iters, opt.sinkhorn_eps);
  auto q_i = opt.q_i_fixed ? *opt.q_i_fixed : sinkhorn_assign(detach(sim_i), opt.sinkhorn_iters, opt.sinkhorn_eps);
  if (q_v.dim(1) != bank.count()) throw ShapeError("assignment width does not match prototype count");
  if (opt.q_v_out) *opt.q_v_out = q_v;
  if (opt.q_i_out) *opt.q_i_out = q_i;
  // swapped prediction: visible predictions against infrared assignments
  auto ce_v = neg(reduce_sum(mul(q_i, log(p_v))));
  auto ce_i = neg(reduce_sum(mul(q_v, log(p_i))));
  return mul(add(ce_v, ce_i), Real(1) / Real(2 * B));
}

}  // namespace fdct
