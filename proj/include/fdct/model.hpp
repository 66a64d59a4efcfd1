#pragma once

#include <string>
#include <vector>

#include "fdct/alignment.hpp"
#include "fdct/freq_extractors.hpp"
#include "fdct/objectives.hpp"
#include "fdct/udt.hpp"

namespace fdct {

struct ModelConfig {
  std::int64_t image_h = 32, image_w = 32;
  std::int64_t channels = 16;  // stem output channels C per modality
  int inn_depth = 3;           // coupling layers L
  std::int64_t udt_patch = 4;
  std::int64_t udt_dim = 64;
  int udt_depth = 4;
  int udt_heads = 4;
  std::int64_t proj_dim = 32;   // alignment embedding dim d
  std::int64_t prototypes = 10; // E
  std::int64_t classes = 6;
  AlignmentTemps temps;
  int sinkhorn_iters = 3;
  double sinkhorn_eps = 0.05;
  std::string scma_weighting = "uniform";  // or "attention"
  double beta = 1.0001;

  UdtConfig udt_config() const {
    UdtConfig u;
    u.in_channels = 2 * channels;
    u.height = image_h / 4;
    u.width = image_w / 4;
    u.patch = udt_patch;
    u.dim = udt_dim;
    u.depth = udt_depth;
    u.heads = udt_heads;
    return u;
  }
};

// The full fusion classifier: per-modality stems and frequency extractors, a
// shared token encoder over the concatenated low/high-frequency features,
// alignment heads with a prototype bank, and a linear fusion classifier.
template <typename Real>
struct FdctModel {
  ModelConfig cfg;
  ParamRegistry<Real> params;
  FreqExtractor<Real> vis, ir;
  UdtEncoder<Real> udt;
  ProjectionHeads<Real> heads;
  PrototypeBank<Real> bank;
  ClassifierHead<Real> classifier;

  static FdctModel create(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.temps.validate();
    FdctModel m;
    m.cfg = cfg;
    Rng rng(seed);
    m.vis = FreqExtractor<Real>::create(m.params, Modality::Visible, rng, cfg.channels, cfg.inn_depth);
    m.ir = FreqExtractor<Real>::create(m.params, Modality::Infrared, rng, cfg.channels, cfg.inn_depth);
    m.udt = UdtEncoder<Real>::create(m.params, rng, cfg.udt_config());
    m.heads = ProjectionHeads<Real>::create(m.params, rng, cfg.udt_dim, cfg.proj_dim);
    m.bank = PrototypeBank<Real>::create(m.params, rng, cfg.prototypes, cfg.proj_dim);
    m.classifier = ClassifierHead<Real>::create(m.params, rng, cfg.udt_dim, cfg.classes);
    return m;
  }

  struct Forward {
    FeaturePair<Real> feat_vis, feat_ir;
    TokenSet<Real> tok_vis, tok_ir;
    TensorT<Real> logits;
    LossParts<Real> parts;
    bool decomposition_degenerate = false;
    TensorT<Real> q_v, q_i;  // sinkhorn assignments used by the CPA term
  };

  struct ForwardOptions {
    LossWeights weights;  // zero-weight components are skipped entirely
    // Assignment overrides for gradient oracles.
    const TensorT<Real>* q_v_fixed = nullptr;
    const TensorT<Real>* q_i_fixed = nullptr;
  };

  TokenSet<Real> encode(const TensorT<Real>& image, const FreqExtractor<Real>& ext,
                        std::vector<TensorT<Real>>* attns = nullptr) const {
    auto fp = ext.forward(image);
    auto cat = concat<Real>({fp.psi_lfe, fp.psi_hfe}, 1);
    return udt.forward(cat, attns);
  }

  // Mean attention mass received per token in the final encoder block,
  // scaled so each sample's weights sum to the token count.
  TensorT<Real> attention_token_weights(const std::vector<TensorT<Real>>& attns) const {
    const auto& last = attns.back();
    const std::int64_t b = last.dim(0), h = last.dim(1), n = last.dim(2);
    auto mass = reduce_mean(reduce_mean(last, 1), 1);  // [b,N] mean over heads then queries
    auto w = mul(detach(mass), Real(n));
    (void)b;
    (void)h;
    return w;
  }

  Forward forward_losses(const TensorT<Real>& img_vis, const TensorT<Real>& img_ir,
                         const std::vector<int>& labels, const ForwardOptions& opt) const {
    Forward out;
    const bool want_attn = cfg.scma_weighting == "attention" && opt.weights.sigma2 != 0.0;
    std::vector<TensorT<Real>> attn_v, attn_i;

    out.feat_vis = vis.forward(img_vis);
    out.feat_ir = ir.forward(img_ir);
    out.tok_vis = udt.forward(concat<Real>({out.feat_vis.psi_lfe, out.feat_vis.psi_hfe}, 1),
                              want_attn ? &attn_v : nullptr);
    out.tok_ir = udt.forward(concat<Real>({out.feat_ir.psi_lfe, out.feat_ir.psi_hfe}, 1),
                             want_attn ? &attn_i : nullptr);

    if (opt.weights.sigma1 != 0.0)
      out.parts.ita = ita_loss(out.tok_vis.pooled, out.tok_ir.pooled, heads, Real(cfg.temps.gamma1));

    if (opt.weights.sigma2 != 0.0) {
      TensorT<Real> wv, wi;
      if (want_attn) {
        wv = attention_token_weights(attn_v);
        wi = attention_token_weights(attn_i);
      }
      out.parts.scma = scma_loss(out.tok_vis.tokens, out.tok_ir.tokens, heads, wv, wi, Real(cfg.temps.gamma2));
    }

    if (opt.weights.sigma3 != 0.0) {
      auto yhat = heads.instance_embed(out.tok_vis.pooled, Modality::Visible);
      auto zhat = heads.instance_embed(out.tok_ir.pooled, Modality::Infrared);
      CpaOptions<Real> copt;
      copt.sinkhorn_iters = cfg.sinkhorn_iters;
      copt.sinkhorn_eps = cfg.sinkhorn_eps;
      copt.q_v_fixed = opt.q_v_fixed;
      copt.q_i_fixed = opt.q_i_fixed;
      copt.q_v_out = &out.q_v;
      copt.q_i_out = &out.q_i;
      out.parts.cpa = cpa_loss(yhat, zhat, bank, Real(cfg.temps.gamma3), copt);
    }

    if (opt.weights.gamma_decp != 0.0) {
      auto d = decomposition_loss(out.feat_vis, out.feat_ir, Real(cfg.beta));
      out.parts.decomposition = d.value;
      out.decomposition_degenerate = d.degenerate;
    }

    out.logits = classifier.forward(out.tok_vis, out.tok_ir);
    if (opt.weights.gamma_ce != 0.0) out.parts.cross_entropy = cross_entropy_loss(out.logits, labels);
    return out;
  }

  // Inference logits; optionally zero one modality's pooled embedding before
  // the classifier (single-modality diagnostic).
  TensorT<Real> predict(const TensorT<Real>& img_vis, const TensorT<Real>& img_ir,
                        int zero_modality = -1) const {
    NoGradScope<Real> ng;
    auto tv = encode(img_vis, vis);
    auto ti = encode(img_ir, ir);
    if (zero_modality == 0) tv.pooled = zeros_like(tv.pooled);
    if (zero_modality == 1) ti.pooled = zeros_like(ti.pooled);
    return classifier.forward(tv, ti);
  }
};

}  // namespace fdct
