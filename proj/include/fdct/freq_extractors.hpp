#pragma once

#include <string>
#include <vector>

#include "fdct/nn_common.hpp"
#include "fdct/ops.hpp"
#include "fdct/params.hpp"

namespace fdct {

template <typename Real>
struct FeaturePair {
  TensorT<Real> psi_lfe;  // [b,C,H,W]
  TensorT<Real> psi_hfe;  // [b,C,H,W]
  Modality modality = Modality::Visible;
};

// Stride-4 convolutional patch embedding shared by both extractor branches of
// one modality.
template <typename Real>
struct Stem {
  TensorT<Real> weight;  // [C,3,4,4]
  TensorT<Real> bias;    // [C]

  static Stem create(ParamRegistry<Real>& reg, const std::string& prefix, Rng& rng, std::int64_t channels) {
    Stem s;
    s.weight = reg.add(prefix + ".stem.weight", init_uniform<Real>(rng, {channels, 3, 4, 4}, 3 * 16));
    s.bias = reg.add(prefix + ".stem.bias", TensorT<Real>::zeros({channels}));
    return s;
  }

  TensorT<Real> forward(const TensorT<Real>& image) const {
    if (image.rank() != 4 || image.dim(1) != 3) throw ShapeError("stem expects [b,3,H,W] images");
    if (image.dim(2) % 4 != 0 || image.dim(3) % 4 != 0)
      throw ShapeError("stem requires spatial dims divisible by 4, got " + shape_str(image.shape()));
    return conv2d(image, weight, &bias, 4, 0);
  }
};

// Lite transformer block: half the channels through a depthwise convolution,
// half through single-head spatial self-attention, re-concatenated and mixed
// by a position-wise feed-forward layer with a residual connection.
template <typename Real>
struct LiteTransformerBlock {
  TensorT<Real> dw_kernel;          // [C/2,1,3,3]
  TensorT<Real> wq, wk, wv, wo;     // [C/2,C/2]
  TensorT<Real> ffn_w1, ffn_b1;     // [C,2C],[2C]
  TensorT<Real> ffn_w2, ffn_b2;     // [2C,C],[C]

  static LiteTransformerBlock create(ParamRegistry<Real>& reg, const std::string& prefix, Rng& rng,
                                     std::int64_t channels) {
    if (channels % 2 != 0) throw ShapeError("lite transformer channel count must be even");
    const std::int64_t half = channels / 2;
    LiteTransformerBlock b;
    b.dw_kernel = reg.add(prefix + ".lfe.dw", init_uniform<Real>(rng, {half, 1, 3, 3}, 9));
    b.wq = reg.add(prefix + ".lfe.wq", init_uniform<Real>(rng, {half, half}, half));
    b.wk = reg.add(prefix + ".lfe.wk", init_uniform<Real>(rng, {half, half}, half));
    b.wv = reg.add(prefix + ".lfe.wv", init_uniform<Real>(rng, {half, half}, half));
    b.wo = reg.add(prefix + ".lfe.wo", init_uniform<Real>(rng, {half, half}, half));
    b.ffn_w1 = reg.add(prefix + ".lfe.ffn_w1", init_uniform<Real>(rng, {channels, 2 * channels}, channels));
    b.ffn_b1 = reg.add(prefix + ".lfe.ffn_b1", TensorT<Real>::zeros({2 * channels}));
    b.ffn_w2 = reg.add(prefix + ".lfe.ffn_w2", init_uniform<Real>(rng, {2 * channels, channels}, 2 * channels));
    b.ffn_b2 = reg.add(prefix + ".lfe.ffn_b2", TensorT<Real>::zeros({channels}));
    return b;
  }

  // attn_out, when non-null, receives the [b,HW,HW] attention matrix.
  TensorT<Real> forward(const TensorT<Real>& psi_s, TensorT<Real>* attn_out = nullptr) const {
    const std::int64_t c = psi_s.dim(1), h = psi_s.dim(2), w = psi_s.dim(3);
    if (c % 2 != 0) throw ShapeError("lite transformer requires an even channel count");
    const std::int64_t half = c / 2;
    const std::int64_t b = psi_s.dim(0);

    auto local_in = slice(psi_s, 1, 0, half);
    auto global_in = slice(psi_s, 1, half, half);

    auto local_out = conv2d_depthwise(local_in, dw_kernel);

    // [b,half,H,W] -> [b,HW,half] token view
    auto tokens = permute(reshape(global_in, {b, half, h * w}), {0, 2, 1});
    auto q = matmul(tokens, wq);
    auto k = matmul(tokens, wk);
    auto v = matmul(tokens, wv);
    auto scores = mul(matmul(q, transpose_last2(k)), Real(1.0 / std::sqrt(double(half))));
    auto attn = softmax(scores, 2);
    if (attn_out) *attn_out = attn;
    auto ctx = matmul(matmul(attn, v), wo);
    auto global_out = reshape(permute(ctx, {0, 2, 1}), {b, half, h, w});

    auto cat = concat<Real>({local_out, global_out}, 1);
    auto mixed = channel_linear(gelu(channel_linear(cat, ffn_w1, ffn_b1)), ffn_w2, ffn_b2);
    return add(cat, mixed);
  }
};

// Bottleneck mapping function: 1x1 expand (x2), depthwise 3x3, 1x1 project.
// The projection is zero-initialized so a fresh coupling layer is an exact
// identity map; the coupling's additive path carries the skip.
template <typename Real>
struct Brb {
  TensorT<Real> expand_w, expand_b;
  TensorT<Real> dw;
  TensorT<Real> project_w, project_b;

  static Brb create(ParamRegistry<Real>& reg, const std::string& prefix, Rng& rng, std::int64_t channels) {
    const std::int64_t mid = channels * 2;
    Brb m;
    m.expand_w = reg.add(prefix + ".expand_w", init_uniform<Real>(rng, {channels, mid}, channels));
    m.expand_b = reg.add(prefix + ".expand_b", TensorT<Real>::zeros({mid}));
    m.dw = reg.add(prefix + ".dw", init_uniform<Real>(rng, {mid, 1, 3, 3}, 9));
    m.project_w = reg.add(prefix + ".project_w", TensorT<Real>::zeros({mid, channels}));
    m.project_b = reg.add(prefix + ".project_b", TensorT<Real>::zeros({channels}));
    return m;
  }

  TensorT<Real> forward(const TensorT<Real>& x) const {
    auto e = relu(channel_linear(x, expand_w, expand_b));
    auto d = relu(conv2d_depthwise(e, dw));
    return channel_linear(d, project_w, project_b);
  }
};

// One affine coupling layer with three mapping functions:
//   y1 = x1 + I1(x2)
//   y2 = x2 * exp(clamp(I2(y1), +-2)) + I3(y1)
template <typename Real>
struct CouplingLayer {
  Brb<Real> shift1, log_scale, shift2;
  static constexpr Real kClamp = Real(2);

  static CouplingLayer create(ParamRegistry<Real>& reg, const std::string& prefix, Rng& rng,
                              std::int64_t half) {
    CouplingLayer l;
    l.shift1 = Brb<Real>::create(reg, prefix + ".i1", rng, half);
    l.log_scale = Brb<Real>::create(reg, prefix + ".i2", rng, half);
    l.shift2 = Brb<Real>::create(reg, prefix + ".i3", rng, half);
    return l;
  }

  void forward_halves(const TensorT<Real>& x1, const TensorT<Real>& x2, TensorT<Real>& y1,
                      TensorT<Real>& y2) const {
    y1 = add(x1, shift1.forward(x2));
    auto s = exp(clamp(log_scale.forward(y1), -kClamp, kClamp));
    y2 = add(mul(x2, s), shift2.forward(y1));
  }

  void inverse_halves(const TensorT<Real>& y1, const TensorT<Real>& y2, TensorT<Real>& x1,
                      TensorT<Real>& x2) const {
    auto s = exp(neg(clamp(log_scale.forward(y1), -kClamp, kClamp)));
    x2 = mul(sub(y2, shift2.forward(y1)), s);
    x1 = sub(y1, shift1.forward(x2));
  }
};

// Cascade of coupling layers with channel halves swapped between layers.
template <typename Real>
struct InvertibleModule {
  std::vector<CouplingLayer<Real>> layers;

  static InvertibleModule create(ParamRegistry<Real>& reg, const std::string& prefix, Rng& rng,
                                 std::int64_t channels, int depth) {
    if (channels % 2 != 0) throw ShapeError("invertible module requires an even channel count");
    InvertibleModule m;
    for (int l = 0; l < depth; ++l)
      m.layers.push_back(CouplingLayer<Real>::create(reg, prefix + ".hfe.l" + std::to_string(l), rng, channels / 2));
    return m;
  }

  TensorT<Real> forward(const TensorT<Real>& x) const {
    if (x.dim(1) % 2 != 0) throw ShapeError("invertible module input channels must be even");
    const std::int64_t half = x.dim(1) / 2;
    TensorT<Real> cur = x;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto lo = slice(cur, 1, 0, half);
      auto hi = slice(cur, 1, half, half);
      const bool swap = (l % 2) == 1;
      const auto& x1 = swap ? hi : lo;
      const auto& x2 = swap ? lo : hi;
      TensorT<Real> y1, y2;
      layers[l].forward_halves(x1, x2, y1, y2);
      cur = swap ? concat<Real>({y2, y1}, 1) : concat<Real>({y1, y2}, 1);
    }
    return cur;
  }

  TensorT<Real> inverse(const TensorT<Real>& y) const {
    const std::int64_t half = y.dim(1) / 2;
    TensorT<Real> cur = y;
    for (std::size_t li = layers.size(); li-- > 0;) {
      auto lo = slice(cur, 1, 0, half);
      auto hi = slice(cur, 1, half, half);
      const bool swap = (li % 2) == 1;
      const auto& y1 = swap ? hi : lo;
      const auto& y2 = swap ? lo : hi;
      TensorT<Real> x1, x2;
      layers[li].inverse_halves(y1, y2, x1, x2);
      cur = swap ? concat<Real>({x2, x1}, 1) : concat<Real>({x1, x2}, 1);
    }
    return cur;
  }
};

// Per-modality extractor stack. Visible and infrared instances hold disjoint
// parameter sets; the stem output feeds both the LFE and HFE branches.
template <typename Real>
struct FreqExtractor {
  Modality modality;
  Stem<Real> stem;
  LiteTransformerBlock<Real> lfe;
  InvertibleModule<Real> hfe;

  static FreqExtractor create(ParamRegistry<Real>& reg, Modality m, Rng& rng, std::int64_t channels,
                              int inn_depth) {
    FreqExtractor f;
    f.modality = m;
    const std::string p = modality_prefix(m);
    f.stem = Stem<Real>::create(reg, p, rng, channels);
    f.lfe = LiteTransformerBlock<Real>::create(reg, p, rng, channels);
    f.hfe = InvertibleModule<Real>::create(reg, p, rng, channels, inn_depth);
    return f;
  }

  FeaturePair<Real> forward(const TensorT<Real>& image) const {
    auto psi_s = stem.forward(image);
    FeaturePair<Real> fp;
    fp.modality = modality;
    fp.psi_lfe = lfe.forward(psi_s);
    fp.psi_hfe = hfe.forward(psi_s);
    return fp;
  }
};

}  // namespace fdct
