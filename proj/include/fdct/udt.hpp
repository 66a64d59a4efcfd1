#pragma once

#include <string>
#include <vector>

#include "fdct/freq_extractors.hpp"
#include "fdct/ops.hpp"
#include "fdct/params.hpp"

namespace fdct {

template <typename Real>
struct TokenSet {
  TensorT<Real> tokens;  // [b,N,D]
  TensorT<Real> pooled;  // [b,D], mean over the token axis
};

struct UdtConfig {
  std::int64_t in_channels = 32;  // 2C after LFE/HFE concat
  std::int64_t height = 8;
  std::int64_t width = 8;
  std::int64_t patch = 4;
  std::int64_t dim = 64;
  int depth = 4;
  int heads = 4;

  std::int64_t token_count() const {
    if (height % patch != 0 || width % patch != 0)
      throw ShapeError("UDT patch size " + std::to_string(patch) + " does not divide feature grid " +
                       std::to_string(height) + "x" + std::to_string(width));
    return (height / patch) * (width / patch);
  }
  std::int64_t patch_len() const { return patch * patch * in_channels; }
};

// [b,C,H,W] -> [b,N,P*P*C]; patches in row-major grid order, channel-major
// within a patch. Exact inverse of unpatchify.
template <typename Real>
TensorT<Real> patchify(const TensorT<Real>& features, std::int64_t patch) {
  if (features.rank() != 4) throw ShapeError("patchify expects [b,C,H,W]");
  const std::int64_t b = features.dim(0), c = features.dim(1), h = features.dim(2), w = features.dim(3);
  if (h % patch != 0 || w % patch != 0)
    throw ShapeError("patchify: spatial dims " + std::to_string(h) + "x" + std::to_string(w) +
                     " not divisible by patch " + std::to_string(patch));
  const std::int64_t gh = h / patch, gw = w / patch;
  auto t = reshape(features, {b, c, gh, patch, gw, patch});
  auto p = permute(t, {0, 2, 4, 1, 3, 5});  // [b,gh,gw,c,P,P]
  return reshape(p, {b, gh * gw, c * patch * patch});
}

template <typename Real>
TensorT<Real> unpatchify(const TensorT<Real>& patches, std::int64_t c, std::int64_t h, std::int64_t w,
                         std::int64_t patch) {
  const std::int64_t b = patches.dim(0);
  const std::int64_t gh = h / patch, gw = w / patch;
  auto t = reshape(patches, {b, gh, gw, c, patch, patch});
  auto p = permute(t, {0, 3, 1, 4, 2, 5});  // [b,c,gh,P,gw,P]
  return reshape(p, {b, c, h, w});
}

template <typename Real>
struct LayerNorm {
  TensorT<Real> gain, bias;
  static constexpr double kEps = 1e-5;

  static LayerNorm create(ParamRegistry<Real>& reg, const std::string& prefix, std::int64_t dim) {
    LayerNorm ln;
    ln.gain = reg.add(prefix + ".gain", TensorT<Real>::full({dim}, Real(1)));
    ln.bias = reg.add(prefix + ".bias", TensorT<Real>::zeros({dim}));
    return ln;
  }

  TensorT<Real> forward(const TensorT<Real>& x) const {
    auto mu = reduce_mean(x, -1, true);
    auto xc = sub(x, mu);
    auto var = reduce_mean(mul(xc, xc), -1, true);
    auto xn = div(xc, sqrt(add(var, Real(kEps))));
    return add(mul(xn, gain), bias);
  }
};

// Multi-head self-attention with per-head projections folded into [D,D]
// matrices, scaled by 1/sqrt(D/h).
template <typename Real>
struct MultiHeadAttention {
  TensorT<Real> wq, bq, wk, bk, wv, bv, wo, bo;
  int heads = 1;

  static MultiHeadAttention create(ParamRegistry<Real>& reg, const std::string& prefix, Rng& rng,
                                   std::int64_t dim, int heads) {
    if (dim % heads != 0)
      throw ShapeError("attention dim " + std::to_string(dim) + " not divisible by heads " +
                       std::to_string(heads));
    MultiHeadAttention a;
    a.heads = heads;
    a.wq = reg.add(prefix + ".wq", init_uniform<Real>(rng, {dim, dim}, dim));
    a.bq = reg.add(prefix + ".bq", TensorT<Real>::zeros({dim}));
    a.wk = reg.add(prefix + ".wk", init_uniform<Real>(rng, {dim, dim}, dim));
    a.bk = reg.add(prefix + ".bk", TensorT<Real>::zeros({dim}));
    a.wv = reg.add(prefix + ".wv", init_uniform<Real>(rng, {dim, dim}, dim));
    a.bv = reg.add(prefix + ".bv", TensorT<Real>::zeros({dim}));
    a.wo = reg.add(prefix + ".wo", init_uniform<Real>(rng, {dim, dim}, dim));
    a.bo = reg.add(prefix + ".bo", TensorT<Real>::zeros({dim}));
    return a;
  }

  // x [b,N,D]; attn_out receives [b,h,N,N] rows summing to 1.
  TensorT<Real> forward(const TensorT<Real>& x, TensorT<Real>* attn_out = nullptr) const {
    const std::int64_t b = x.dim(0), n = x.dim(1), d = x.dim(2);
    const std::int64_t dk = d / heads;
    auto split_heads = [&](const TensorT<Real>& t) {
      return permute(reshape(t, {b, n, heads, dk}), {0, 2, 1, 3});  // [b,h,N,dk]
    };
    auto q = split_heads(linear(x, wq, bq));
    auto k = split_heads(linear(x, wk, bk));
    auto v = split_heads(linear(x, wv, bv));
    auto scores = mul(matmul(q, transpose_last2(k)), Real(1.0 / std::sqrt(double(dk))));
    auto attn = softmax(scores, 3);
    if (attn_out) *attn_out = attn;
    auto ctx = matmul(attn, v);                                      // [b,h,N,dk]
    auto merged = reshape(permute(ctx, {0, 2, 1, 3}), {b, n, d});
    return linear(merged, wo, bo);
  }
};

template <typename Real>
struct UdtBlock {
  LayerNorm<Real> ln1, ln2;
  MultiHeadAttention<Real> attn;
  TensorT<Real> mlp_w1, mlp_b1, mlp_w2, mlp_b2;

  static UdtBlock create(ParamRegistry<Real>& reg, const std::string& prefix, Rng& rng, std::int64_t dim,
                         int heads) {
    UdtBlock blk;
    blk.ln1 = LayerNorm<Real>::create(reg, prefix + ".ln1", dim);
    blk.attn = MultiHeadAttention<Real>::create(reg, prefix + ".attn", rng, dim, heads);
    blk.ln2 = LayerNorm<Real>::create(reg, prefix + ".ln2", dim);
    blk.mlp_w1 = reg.add(prefix + ".mlp_w1", init_uniform<Real>(rng, {dim, 4 * dim}, dim));
    blk.mlp_b1 = reg.add(prefix + ".mlp_b1", TensorT<Real>::zeros({4 * dim}));
    blk.mlp_w2 = reg.add(prefix + ".mlp_w2", init_uniform<Real>(rng, {4 * dim, dim}, 4 * dim));
    blk.mlp_b2 = reg.add(prefix + ".mlp_b2", TensorT<Real>::zeros({dim}));
    return blk;
  }

  // pre-norm residual block
  TensorT<Real> forward(const TensorT<Real>& x, TensorT<Real>* attn_out = nullptr) const {
    auto y = add(attn.forward(ln1.forward(x), attn_out), x);
    auto m = linear(gelu(linear(ln2.forward(y), mlp_w1, mlp_b1)), mlp_w2, mlp_b2);
    return add(m, y);
  }
};

// Shared patch-token encoder. One parameter set serves both modalities.
template <typename Real>
struct UdtEncoder {
  UdtConfig cfg;
  TensorT<Real> patch_proj;  // [P*P*2C, D]
  TensorT<Real> pos_embed;   // [N, D]
  std::vector<UdtBlock<Real>> blocks;
  LayerNorm<Real> final_ln;

  static UdtEncoder create(ParamRegistry<Real>& reg, Rng& rng, const UdtConfig& cfg) {
    UdtEncoder e;
    e.cfg = cfg;
    e.patch_proj = reg.add("udt.patch_proj", init_uniform<Real>(rng, {cfg.patch_len(), cfg.dim}, cfg.patch_len()));
    e.pos_embed = reg.add("udt.pos_embed", init_normal<Real>(rng, {cfg.token_count(), cfg.dim}, 0.02));
    for (int k = 0; k < cfg.depth; ++k)
      e.blocks.push_back(UdtBlock<Real>::create(reg, "udt.block" + std::to_string(k), rng, cfg.dim, cfg.heads));
    e.final_ln = LayerNorm<Real>::create(reg, "udt.final_ln", cfg.dim);
    return e;
  }

  // features [b,2C,H,W] -> tokens [b,N,D] and mean-pooled instance embedding.
  TokenSet<Real> forward(const TensorT<Real>& features,
                         std::vector<TensorT<Real>>* attn_per_block = nullptr) const {
    auto patches = patchify(features, cfg.patch);
    if (patches.dim(2) != cfg.patch_len())
      throw ShapeError("patch feature length " + std::to_string(patches.dim(2)) +
                       " does not match projection input " + std::to_string(cfg.patch_len()));
    auto tok = add(matmul(patches, patch_proj), pos_embed);
    for (std::size_t k = 0; k < blocks.size(); ++k) {
      TensorT<Real> attn;
      tok = blocks[k].forward(tok, attn_per_block ? &attn : nullptr);
      if (attn_per_block) attn_per_block->push_back(attn);
      for (Real v : tok.values())
        if (!std::isfinite(double(v)))
          throw DomainError("udt encoder block " + std::to_string(k) + " produced non-finite values");
    }
    tok = final_ln.forward(tok);
    TokenSet<Real> out;
    out.tokens = tok;
    out.pooled = reduce_mean(tok, 1);
    return out;
  }
};

}  // namespace fdct
