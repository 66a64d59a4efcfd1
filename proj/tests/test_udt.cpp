#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fdct/udt.hpp"
#include "oracles.hpp"

using fdct::ParamRegistry;
using fdct::Shape;
using fdct::UdtConfig;

namespace {

template <typename Real>
fdct::TensorT<Real> randt(fdct::Rng& rng, Shape s, double scale = 1.0) {
  auto t = fdct::TensorT<Real>::zeros(std::move(s));
  for (auto& v : t.values_mut()) v = Real(rng.normal(0.0, scale));
  return t;
}

}  // namespace

TEST_CASE("patchify counts and round trip") {
  fdct::Rng rng(1);
  auto x = randt<double>(rng, {2, 3, 8, 8});
  auto p = fdct::patchify(x, 4);
  CHECK(p.shape() == Shape{2, 4, 48});

  // paper-scale token count: 224/4 stem -> 56x56 grid, P=4 -> 196 tokens
  UdtConfig paper;
  paper.in_channels = 64;
  paper.height = 56;
  paper.width = 56;
  paper.patch = 4;
  CHECK(paper.token_count() == 196);

  auto back = fdct::unpatchify(p, 3, 8, 8, 4);
  CHECK(back.values() == x.values());  // bit-exact

  CHECK_THROWS_AS(fdct::patchify(x, 3), fdct::ShapeError);
}

TEST_CASE("K=0 encoder reduces to layernorm of projected patches") {
  fdct::Rng rng(2);
  ParamRegistry<double> reg;
  UdtConfig cfg;
  cfg.in_channels = 4;
  cfg.height = cfg.width = 4;
  cfg.patch = 2;
  cfg.dim = 8;
  cfg.depth = 0;
  cfg.heads = 2;
  auto enc = fdct::UdtEncoder<double>::create(reg, rng, cfg);
  auto x = randt<double>(rng, {1, 4, 4, 4});
  auto ts = enc.forward(x);
  auto manual = enc.final_ln.forward(
      fdct::add(fdct::matmul(fdct::patchify(x, 2), enc.patch_proj), enc.pos_embed));
  for (std::size_t i = 0; i < manual.values().size(); ++i)
    CHECK(ts.tokens.values()[i] == doctest::Approx(manual.values()[i]).epsilon(1e-12));
}

TEST_CASE("attention rows sum to one in every block and head") {
  fdct::Rng rng(3);
  ParamRegistry<double> reg;
  UdtConfig cfg;
  cfg.in_channels = 4;
  cfg.height = cfg.width = 8;
  cfg.patch = 4;
  cfg.dim = 16;
  cfg.depth = 3;
  cfg.heads = 4;
  auto enc = fdct::UdtEncoder<double>::create(reg, rng, cfg);
  auto x = randt<double>(rng, {2, 4, 8, 8});
  std::vector<fdct::TensorT<double>> attns;
  enc.forward(x, &attns);
  CHECK(attns.size() == 3);
  for (auto& a : attns) {
    CHECK(a.shape() == Shape{2, 4, 4, 4});
    for (int b = 0; b < 2; ++b)
      for (int h = 0; h < 4; ++h)
        for (int i = 0; i < 4; ++i) {
          double s = 0;
          for (int j = 0; j < 4; ++j) s += a.at({b, h, i, j});
          CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
        }
  }
}

TEST_CASE("pooled embedding is the token mean") {
  fdct::Rng rng(4);
  ParamRegistry<double> reg;
  UdtConfig cfg;
  cfg.in_channels = 4;
  cfg.height = cfg.width = 4;
  cfg.patch = 2;
  cfg.dim = 8;
  cfg.depth = 1;
  cfg.heads = 2;
  auto enc = fdct::UdtEncoder<double>::create(reg, rng, cfg);
  auto ts = enc.forward(randt<double>(rng, {2, 4, 4, 4}));
  for (int b = 0; b < 2; ++b)
    for (int d = 0; d < 8; ++d) {
      double s = 0;
      for (int n = 0; n < 4; ++n) s += ts.tokens.at({b, n, d});
      CHECK(ts.pooled.at({b, d}) == doctest::Approx(s / 4.0).epsilon(1e-12));
    }
}

TEST_CASE("single head attention reduces to scaled dot product") {
  fdct::Rng rng(5);
  ParamRegistry<double> reg;
  auto attn = fdct::MultiHeadAttention<double>::create(reg, "a", rng, 6, 1);
  auto x = randt<double>(rng, {1, 3, 6});
  auto out = attn.forward(x);

  auto q = fdct::linear(x, attn.wq, attn.bq);
  auto k = fdct::linear(x, attn.wk, attn.bk);
  auto v = fdct::linear(x, attn.wv, attn.bv);
  auto manual = fdct::linear(
      fdct::matmul(fdct::softmax(fdct::mul(fdct::matmul(q, fdct::transpose_last2(k)),
                                           1.0 / std::sqrt(6.0)),
                                 2),
                   v),
      attn.wo, attn.bo);
  for (std::size_t i = 0; i < out.values().size(); ++i)
    CHECK(out.values()[i] == doctest::Approx(manual.values()[i]).epsilon(1e-10));
}

TEST_CASE("identical value rows give identical attention outputs") {
  fdct::Rng rng(6);
  ParamRegistry<double> reg;
  auto attn = fdct::MultiHeadAttention<double>::create(reg, "a", rng, 8, 2);
  // make value path constant across tokens: equal input rows
  auto row = randt<double>(rng, {1, 1, 8});
  auto x = fdct::concat<double>({row, row, row}, 1);
  auto out = attn.forward(x);
  for (int d = 0; d < 8; ++d) {
    CHECK(out.at({0, 0, d}) == doctest::Approx(out.at({0, 1, d})).epsilon(1e-10));
    CHECK(out.at({0, 1, d}) == doctest::Approx(out.at({0, 2, d})).epsilon(1e-10));
  }
  CHECK_THROWS_AS(fdct::MultiHeadAttention<double>::create(reg, "b", rng, 8, 3), fdct::ShapeError);
}

TEST_CASE("attention gradient matches finite differences (D=8,h=2,N=3)") {
  fdct::Rng rng(7);
  ParamRegistry<double> reg;
  auto attn = fdct::MultiHeadAttention<double>::create(reg, "a", rng, 8, 2);
  auto x = randt<double>(rng, {1, 3, 8}, 0.7);
  std::vector<fdct::TensorT<double>> leaves{x};
  for (const auto& [name, t] : reg.items()) leaves.push_back(t);
  auto res = oracles::grad_check(
      [&]() {
        auto y = attn.forward(x);
        return fdct::reduce_sum(fdct::mul(y, y));
      },
      leaves, 1e-5, 1e-4);
  CHECK(res.max_rel < 1e-4);
}

TEST_CASE("matched permutation of patches and positions permutes tokens") {
  fdct::Rng rng(8);
  ParamRegistry<double> reg;
  UdtConfig cfg;
  cfg.in_channels = 2;
  cfg.height = cfg.width = 4;
  cfg.patch = 2;
  cfg.dim = 8;
  cfg.depth = 2;
  cfg.heads = 2;
  auto enc = fdct::UdtEncoder<double>::create(reg, rng, cfg);

  auto x = randt<double>(rng, {1, 2, 4, 4});
  auto base = enc.forward(x).tokens;

  // permute the 4 patches by rotating the grid slots and rotate pos rows to match
  const std::vector<std::int64_t> perm{2, 0, 3, 1};
  auto patches = fdct::patchify(x, 2);
  auto permuted_patches = fdct::TensorT<double>::zeros(patches.shape());
  for (std::int64_t n = 0; n < 4; ++n)
    for (std::int64_t f = 0; f < patches.dim(2); ++f)
      permuted_patches.values_mut()[static_cast<std::size_t>(n * patches.dim(2) + f)] =
          patches.at({0, perm[static_cast<std::size_t>(n)], f});
  auto old_pos = enc.pos_embed.values();
  auto& pos = enc.pos_embed.values_mut();
  for (std::int64_t n = 0; n < 4; ++n)
    for (std::int64_t d = 0; d < 8; ++d)
      pos[static_cast<std::size_t>(n * 8 + d)] =
          old_pos[static_cast<std::size_t>(perm[static_cast<std::size_t>(n)] * 8 + d)];

  auto permuted_x = fdct::unpatchify(permuted_patches, 2, 4, 4, 2);
  auto out = enc.forward(permuted_x).tokens;
  for (std::int64_t n = 0; n < 4; ++n)
    for (std::int64_t d = 0; d < 8; ++d)
      CHECK(out.at({0, n, d}) ==
            doctest::Approx(base.at({0, perm[static_cast<std::size_t>(n)], d})).epsilon(1e-8));
}

TEST_CASE("deterministic forward") {
  fdct::Rng rng(9);
  ParamRegistry<float> reg;
  UdtConfig cfg;
  cfg.in_channels = 4;
  cfg.height = cfg.width = 8;
  cfg.patch = 4;
  cfg.dim = 16;
  cfg.depth = 2;
  cfg.heads = 4;
  auto enc = fdct::UdtEncoder<float>::create(reg, rng, cfg);
  auto x = randt<float>(rng, {2, 4, 8, 8});
  auto a = enc.forward(x).tokens;
  auto b = enc.forward(x).tokens;
  CHECK(a.values() == b.values());
}
