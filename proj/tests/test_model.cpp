#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "fdct/model.hpp"
#include "oracles.hpp"

using fdct::ModelConfig;
using fdct::Shape;
using Tensor = fdct::TensorT<double>;

namespace {

ModelConfig micro_config() {
  ModelConfig c;
  c.image_h = c.image_w = 8;
  c.channels = 4;
  c.inn_depth = 2;
  c.udt_patch = 1;
  c.udt_dim = 8;
  c.udt_depth = 1;
  c.udt_heads = 2;
  c.proj_dim = 4;
  c.prototypes = 3;
  c.classes = 2;
  return c;
}

template <typename Real>
fdct::TensorT<Real> rand_images(fdct::Rng& rng, std::int64_t b, std::int64_t hw) {
  auto t = fdct::TensorT<Real>::zeros({b, 3, hw, hw});
  for (auto& v : t.values_mut()) v = Real(rng.uniform());
  return t;
}

// fill every parameter (including zero-initialized projections) with noise
template <typename Real>
void randomize_all(fdct::ParamRegistry<Real>& reg, fdct::Rng& rng, double scale) {
  for (const auto& [name, t] : reg.items()) {
    auto copy = t;
    for (auto& v : copy.values_mut()) v = Real(rng.normal(0.0, scale));
  }
}

}  // namespace

TEST_CASE("model creation is seed-deterministic") {
  auto a = fdct::FdctModel<float>::create(micro_config(), 17);
  auto b = fdct::FdctModel<float>::create(micro_config(), 17);
  auto c = fdct::FdctModel<float>::create(micro_config(), 18);
  REQUIRE(a.params.size() == b.params.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < a.params.items().size(); ++i) {
    CHECK(a.params.items()[i].first == b.params.items()[i].first);
    CHECK(a.params.items()[i].second.values() == b.params.items()[i].second.values());
    if (a.params.items()[i].second.values() != c.params.items()[i].second.values()) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("udt parameters are shared across modalities") {
  auto m = fdct::FdctModel<float>::create(micro_config(), 5);
  int udt_count = 0;
  for (const auto& [name, t] : m.params.items()) {
    CHECK(name.rfind("udt.vis", 0) != 0);
    CHECK(name.rfind("udt.ir", 0) != 0);
    if (name.rfind("udt.", 0) == 0) ++udt_count;
  }
  CHECK(udt_count > 0);
}

TEST_CASE("checkpoint save/load round trip preserves outputs") {
  fdct::Rng rng(7);
  auto m = fdct::FdctModel<float>::create(micro_config(), 7);
  auto iv = rand_images<float>(rng, 2, 8);
  auto ii = rand_images<float>(rng, 2, 8);
  auto logits = m.predict(iv, ii);

  const std::string dir = (std::filesystem::temp_directory_path() / "fdct_ckpt_test").string();
  std::filesystem::remove_all(dir);
  m.params.save(dir);

  auto loaded = fdct::FdctModel<float>::create(micro_config(), 999);  // different init
  loaded.params.load(dir);
  auto logits2 = loaded.predict(iv, ii);
  CHECK(logits.values() == logits2.values());
  std::filesystem::remove_all(dir);
}

TEST_CASE("single-modality diagnostic zeroes one pooled stream") {
  fdct::Rng rng(9);
  auto m = fdct::FdctModel<float>::create(micro_config(), 9);
  auto iv = rand_images<float>(rng, 2, 8);
  auto ii = rand_images<float>(rng, 2, 8);
  auto both = m.predict(iv, ii);
  auto no_ir = m.predict(iv, ii, 1);
  auto no_vis = m.predict(iv, ii, 0);
  CHECK(both.values() != no_ir.values());
  CHECK(no_ir.values() != no_vis.values());
}

TEST_CASE("forward losses populate all requested parts") {
  fdct::Rng rng(11);
  auto m = fdct::FdctModel<double>::create(micro_config(), 11);
  randomize_all(m.params, rng, 0.15);
  m.bank.renormalize();
  auto iv = rand_images<double>(rng, 3, 8);
  auto ii = rand_images<double>(rng, 3, 8);
  typename fdct::FdctModel<double>::ForwardOptions opt;
  auto fwd = m.forward_losses(iv, ii, {0, 1, 0}, opt);
  auto total = fdct::total_loss(fwd.parts, opt.weights);
  CHECK(std::isfinite(total.breakdown.total));
  CHECK(total.breakdown.ita >= 0);
  CHECK(total.breakdown.scma >= 0);
  CHECK(total.breakdown.cpa >= 0);
  CHECK(total.breakdown.decomposition >= 0);
  CHECK(total.breakdown.cross_entropy >= 0);
  CHECK(total.breakdown.total ==
        doctest::Approx(total.breakdown.ita + total.breakdown.scma + total.breakdown.cpa +
                        total.breakdown.decomposition + total.breakdown.cross_entropy)
            .epsilon(1e-9));
  CHECK(fwd.logits.shape() == Shape{3, 2});
  CHECK(fwd.q_v.shape() == Shape{3, 3});
}

TEST_CASE("attention token weighting sums to N per sample") {
  fdct::Rng rng(13);
  auto cfg = micro_config();
  cfg.scma_weighting = "attention";
  auto m = fdct::FdctModel<double>::create(cfg, 13);
  randomize_all(m.params, rng, 0.15);
  m.bank.renormalize();
  auto iv = rand_images<double>(rng, 2, 8);
  auto ii = rand_images<double>(rng, 2, 8);
  std::vector<Tensor> attns;
  m.encode(iv, m.vis, &attns);
  auto w = m.attention_token_weights(attns);
  CHECK(w.shape() == Shape{2, 4});
  for (int b = 0; b < 2; ++b) {
    double s = 0;
    for (int n = 0; n < 4; ++n) {
      CHECK(w.at({b, n}) >= 0.0);
      s += w.at({b, n});
    }
    CHECK(s == doctest::Approx(4.0).epsilon(1e-9));
  }
  // the weighted path must also train end to end
  typename fdct::FdctModel<double>::ForwardOptions opt;
  auto fwd = m.forward_losses(iv, ii, {1, 0}, opt);
  CHECK(std::isfinite(fwd.parts.scma.item()));
}

TEST_CASE("micro model gradcheck on representative parameters") {
  fdct::Rng rng(40);
  auto m = fdct::FdctModel<double>::create(micro_config(), 40);
  randomize_all(m.params, rng, 0.2);
  m.bank.renormalize();
  auto iv = rand_images<double>(rng, 2, 8);
  auto ii = rand_images<double>(rng, 2, 8);
  const std::vector<int> labels{0, 1};

  // capture assignments once; the oracle holds them fixed
  typename fdct::FdctModel<double>::ForwardOptions opt;
  auto base = m.forward_losses(iv, ii, labels, opt);
  typename fdct::FdctModel<double>::ForwardOptions frozen = opt;
  frozen.q_v_fixed = &base.q_v;
  frozen.q_i_fixed = &base.q_i;

  std::vector<Tensor> leaves;
  for (const auto& [name, t] : m.params.items()) {
    if (name == "vis.stem.weight" || name == "ir.lfe.wq" || name == "vis.hfe.l0.i2.project_w" ||
        name == "udt.block0.attn.wv" || name == "udt.patch_proj" || name == "align.tok_v.w" ||
        name == "align.xattn.q" || name == "proto.bank" || name == "cls.weight" ||
        name == "align.inst_i.w2" || name == "udt.final_ln.gain")
      leaves.push_back(t);
  }
  REQUIRE(leaves.size() == 11);

  auto res = oracles::grad_check(
      [&]() {
        auto fwd = m.forward_losses(iv, ii, labels, frozen);
        return fdct::total_loss(fwd.parts, frozen.weights).value;
      },
      leaves, 1e-5, 1e-3);
  CHECK(res.pass_fraction() >= 0.98);
}
