#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fdct/alignment.hpp"
#include "oracles.hpp"

using fdct::ParamRegistry;
using fdct::Shape;
using Tensor = fdct::TensorT<double>;

namespace {

Tensor randt(fdct::Rng& rng, Shape s, double scale = 1.0) {
  Tensor t = Tensor::zeros(std::move(s));
  for (auto& v : t.values_mut()) v = rng.normal(0.0, scale);
  return t;
}

Tensor unit_rows(fdct::Rng& rng, Shape s) {
  auto t = randt(rng, s);
  return fdct::l2_normalize_rows(t);
}

}  // namespace

TEST_CASE("sparsemax simple anchors") {
  auto a = fdct::sparsemax(Tensor::from_data({2}, {0.5, 0.5}));
  CHECK(a.values()[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(a.values()[1] == doctest::Approx(0.5).epsilon(1e-12));

  auto b = fdct::sparsemax(Tensor::from_data({2}, {1.0, 0.0}));
  CHECK(b.values()[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(b.values()[1] == 0.0);

  // crafted dominant row: tau = 2, support size 1
  auto c = fdct::sparsemax(Tensor::from_data({4}, {3.0, 0.0, 0.0, 0.0}));
  CHECK(c.values() == std::vector<double>{1, 0, 0, 0});

  CHECK_THROWS_AS(fdct::sparsemax(Tensor::from_data({2}, {std::nan(""), 0.0})), fdct::DomainError);
}

TEST_CASE("sparsemax equals the brute-force simplex projection") {
  fdct::Rng rng(1);
  for (int trial = 0; trial < 600; ++trial) {
    const int n = 2 + trial % 3;
    std::vector<double> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = rng.normal(0.0, 2.0);
    auto out = fdct::sparsemax(Tensor::from_data({n}, v));
    auto oracle = oracles::simplex_projection_bruteforce(v);
    double sum = 0;
    for (int i = 0; i < n; ++i) {
      CHECK(out.values()[static_cast<std::size_t>(i)] >= 0.0);
      CHECK(std::abs(out.values()[static_cast<std::size_t>(i)] - oracle[static_cast<std::size_t>(i)]) < 1e-6);
      sum += out.values()[static_cast<std::size_t>(i)];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("sparsemax shift invariance") {
  fdct::Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> v{rng.normal(0, 1), rng.normal(0, 1), rng.normal(0, 1), rng.normal(0, 1)};
    const double c = rng.normal(0.0, 3.0);
    auto base = fdct::sparsemax(Tensor::from_data({4}, v));
    std::vector<double> shifted = v;
    for (auto& x : shifted) x += c;
    auto out = fdct::sparsemax(Tensor::from_data({4}, shifted));
    for (int i = 0; i < 4; ++i)
      CHECK(std::abs(out.values()[static_cast<std::size_t>(i)] - base.values()[static_cast<std::size_t>(i)]) < 1e-7);
  }
}

TEST_CASE("sparsemax backward: support-restricted centering") {
  auto x = Tensor::from_data({4}, {3.0, 2.9, 0.0, -1.0}).set_requires_grad(true);
  fdct::Tape<double> tape;
  {
    fdct::TapeScope<double> scope(tape);
    auto y = fdct::sparsemax(x);
    // support is {0,1}; contract with g = [1,0,0,0]
    auto probe = Tensor::from_data({4}, {1, 0, 0, 0});
    fdct::backward(fdct::reduce_sum(fdct::mul(y, probe)));
  }
  // on support: g - mean(g_S) = [1-0.5, 0-0.5], off support: 0
  CHECK(x.grad() == std::vector<double>{0.5, -0.5, 0.0, 0.0});

  // finite differences away from support boundaries
  fdct::Rng rng(3);
  int done = 0;
  for (int trial = 0; trial < 30 && done < 10; ++trial) {
    auto v = randt(rng, {5}, 1.0);
    auto y0 = fdct::sparsemax(v);
    // margin check: skip points whose support could flip under perturbation
    bool safe = true;
    for (double yv : y0.values())
      if (yv > 0 && yv < 1e-2) safe = false;
    if (!safe) continue;
    auto probe = fdct::detach(randt(rng, {5}));
    auto res = oracles::grad_check(
        [&]() { return fdct::reduce_sum(fdct::mul(fdct::sparsemax(v), probe)); }, {v}, 1e-6, 1e-3);
    CHECK(res.max_rel < 1e-3);
    ++done;
  }
  CHECK(done >= 10);
}

TEST_CASE("info_nce closed forms") {
  // B=1: the only candidate is the positive
  auto e = Tensor::from_data({1, 2}, {1.0, 0.0});
  CHECK(fdct::info_nce_pair(e, e, 0.1).item() == doctest::Approx(0.0).epsilon(1e-12));

  // B=2 orthonormal matched pairs at gamma=0.1
  auto a = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  auto loss = fdct::info_nce_pair(a, a, 0.1);
  const double expect = -std::log(std::exp(10.0) / (std::exp(10.0) + 1.0));
  CHECK(loss.item() == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("info_nce rotation invariance") {
  fdct::Rng rng(4);
  auto a = unit_rows(rng, {5, 3});
  auto b = unit_rows(rng, {5, 3});
  const double base = fdct::info_nce_pair(a, b, 0.1).item();

  // random rotation from composed Givens rotations
  const double t1 = rng.uniform(0, 6.28), t2 = rng.uniform(0, 6.28);
  auto rot = Tensor::from_data({3, 3},
                               {std::cos(t1), -std::sin(t1), 0, std::sin(t1), std::cos(t1), 0, 0, 0, 1});
  auto rot2 = Tensor::from_data({3, 3},
                                {1, 0, 0, 0, std::cos(t2), -std::sin(t2), 0, std::sin(t2), std::cos(t2)});
  auto r = fdct::matmul(rot, rot2);
  const double rotated = fdct::info_nce_pair(fdct::matmul(a, r), fdct::matmul(b, r), 0.1).item();
  CHECK(rotated == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("ita loss through projection heads") {
  fdct::Rng rng(5);
  ParamRegistry<double> reg;
  auto heads = fdct::ProjectionHeads<double>::create(reg, rng, 8, 4);
  auto pv = randt(rng, {3, 8});
  auto pi = randt(rng, {3, 8});
  auto loss = fdct::ita_loss(pv, pi, heads, 0.1);
  CHECK(loss.numel() == 1);
  CHECK(loss.item() >= 0.0);

  // temperature monotonicity: make positives strictly most similar
  auto e = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  CHECK(fdct::info_nce_pair(e, e, 0.1).item() < fdct::info_nce_pair(e, e, 0.5).item());

  CHECK_THROWS_AS(fdct::l2_normalize_rows(Tensor::zeros({2, 3})), fdct::ValueError);
}

TEST_CASE("scma attend: single token and crafted sparsity") {
  fdct::Rng rng(6);
  ParamRegistry<double> reg;
  auto heads = fdct::ProjectionHeads<double>::create(reg, rng, 8, 4);

  // N=1: alpha must be [1] regardless of logits
  auto y1 = unit_rows(rng, {1, 1, 4});
  auto z1 = unit_rows(rng, {1, 1, 4});
  Tensor alpha;
  auto a1 = fdct::scma_attend(y1, z1, heads, &alpha);
  CHECK(alpha.values() == std::vector<double>{1.0});
  auto manual = fdct::linear(fdct::matmul(z1, heads.v_hat), heads.o_w, heads.o_b);
  for (std::size_t i = 0; i < manual.values().size(); ++i)
    CHECK(a1.values()[i] == doctest::Approx(manual.values()[i]).epsilon(1e-12));

  // orthonormal tokens with q_hat = 6I, k_hat = I give logit rows like [3,0,0,0]
  auto eye4 = Tensor::zeros({4, 4});
  for (int i = 0; i < 4; ++i) eye4.values_mut()[static_cast<std::size_t>(i * 4 + i)] = 1.0;
  for (std::size_t i = 0; i < 16; ++i) {
    heads.q_hat.values_mut()[i] = 6.0 * eye4.values()[i];
    heads.k_hat.values_mut()[i] = eye4.values()[i];
  }
  auto toks = fdct::reshape(eye4, {1, 4, 4});
  fdct::scma_attend(toks, toks, heads, &alpha);
  int exact_zeros = 0;
  for (int i = 0; i < 4; ++i) {
    double rowsum = 0;
    for (int j = 0; j < 4; ++j) {
      rowsum += alpha.at({0, i, j});
      if (alpha.at({0, i, j}) == 0.0) ++exact_zeros;
    }
    CHECK(rowsum == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(alpha.at({0, i, i}) == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(exact_zeros == 12);

  CHECK_THROWS_AS(fdct::scma_attend(unit_rows(rng, {1, 2, 4}), unit_rows(rng, {1, 3, 4}), heads),
                  fdct::ShapeError);
}

TEST_CASE("token infonce closed form when attended equals anchors") {
  fdct::Rng rng(7);
  const int N = 4, d = 8;
  // orthonormal token rows via distinct basis vectors
  auto t = Tensor::zeros({1, N, d});
  for (int i = 0; i < N; ++i) t.values_mut()[static_cast<std::size_t>(i * d + 2 * i)] = 1.0;
  auto w = Tensor::full({1, N}, 1.0);
  const double g = 0.07;
  auto loss = fdct::token_infonce(t, t, w, g);
  const double expect = -std::log(std::exp(1.0 / g) / (std::exp(1.0 / g) + double(N - 1)));
  CHECK(loss.item() == doctest::Approx(expect).epsilon(1e-9));

  // N=1 degenerate case
  auto single = fdct::token_infonce(fdct::slice(t, 1, 0, 1), fdct::slice(t, 1, 0, 1),
                                    Tensor::full({1, 1}, 1.0), g);
  CHECK(single.item() == doctest::Approx(0.0).epsilon(1e-12));

  CHECK_THROWS_AS(fdct::token_infonce(t, t, Tensor::full({1, N}, -1.0), g), fdct::ValueError);
}

TEST_CASE("scma loss modality-swap symmetry") {
  fdct::Rng rng(8);
  ParamRegistry<double> reg;
  auto heads = fdct::ProjectionHeads<double>::create(reg, rng, 8, 4);
  auto tv = randt(rng, {2, 3, 8});
  auto ti = randt(rng, {2, 3, 8});
  Tensor none;
  const double base = fdct::scma_loss(tv, ti, heads, none, none, 0.07).item();

  // swap roles: exchange the per-modality projections and the argument order
  auto swapped = heads;
  std::swap(swapped.tok_w_v, swapped.tok_w_i);
  std::swap(swapped.tok_b_v, swapped.tok_b_i);
  const double mirrored = fdct::scma_loss(ti, tv, swapped, none, none, 0.07).item();
  CHECK(mirrored == doctest::Approx(base).epsilon(1e-12));
  CHECK(base >= 0.0);
}

TEST_CASE("scma gradient matches finite differences at stable support") {
  fdct::Rng rng(11);
  ParamRegistry<double> reg;
  auto heads = fdct::ProjectionHeads<double>::create(reg, rng, 6, 4);
  auto tv = randt(rng, {1, 3, 6}, 0.8);
  auto ti = randt(rng, {1, 3, 6}, 0.8);
  Tensor none;
  std::vector<Tensor> leaves{tv, ti};
  for (const auto& [name, t] : reg.items()) leaves.push_back(t);
  auto res = oracles::grad_check(
      [&]() { return fdct::scma_loss(tv, ti, heads, none, none, 0.07); }, leaves, 1e-6, 1e-3);
  CHECK(res.pass_fraction() >= 0.95);
}

TEST_CASE("sinkhorn basics") {
  auto q11 = fdct::sinkhorn_assign(Tensor::from_data({1, 1}, {0.37}), 3, 0.05);
  CHECK(q11.values() == std::vector<double>{1.0});

  auto qu = fdct::sinkhorn_assign(Tensor::full({4, 5}, 0.2), 3, 0.05);
  for (double v : qu.values()) CHECK(v == doctest::Approx(0.2).epsilon(1e-12));

  CHECK_THROWS_AS(
      fdct::sinkhorn_assign(Tensor::from_data({1, 2}, {std::numeric_limits<double>::infinity(), 0.0}), 3, 0.05),
      fdct::DomainError);
}

TEST_CASE("sinkhorn convergence on random matrices") {
  // Rows are exact probability vectors for any input. The column balance
  // bound is an empirical convergence property and only holds when the
  // exponent dispersion sim/eps is around unit scale; at larger dispersion
  // three rounds cannot balance the columns (measured, see column check).
  fdct::Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    auto wild = randt(rng, {8, 4});
    auto qw = fdct::sinkhorn_assign(wild, 3, 0.05);
    for (int b = 0; b < 8; ++b) {
      double rs = 0;
      for (int e = 0; e < 4; ++e) rs += qw.at({b, e});
      CHECK(std::abs(rs - 1.0) < 1e-3);
    }

    auto sim = randt(rng, {8, 4}, 0.05);
    auto q = fdct::sinkhorn_assign(sim, 3, 0.05);
    for (int b = 0; b < 8; ++b) {
      double rs = 0;
      for (int e = 0; e < 4; ++e) rs += q.at({b, e});
      CHECK(std::abs(rs - 1.0) < 1e-3);
    }
    for (int e = 0; e < 4; ++e) {
      double cs = 0;
      for (int b = 0; b < 8; ++b) cs += q.at({b, e});
      CHECK(std::abs(cs - 2.0) < 0.1);  // B/E = 2 within 5e-2 * B/E
    }
  }
}

TEST_CASE("sinkhorn prototype-permutation equivariance is exact") {
  fdct::Rng rng(13);
  auto sim = randt(rng, {6, 5});
  auto q = fdct::sinkhorn_assign(sim, 3, 0.05);
  const std::vector<int> perm{3, 0, 4, 1, 2};
  auto permuted = Tensor::zeros({6, 5});
  for (int b = 0; b < 6; ++b)
    for (int e = 0; e < 5; ++e)
      permuted.values_mut()[static_cast<std::size_t>(b * 5 + e)] = sim.at({b, perm[static_cast<std::size_t>(e)]});
  auto qp = fdct::sinkhorn_assign(permuted, 3, 0.05);
  for (int b = 0; b < 6; ++b)
    for (int e = 0; e < 5; ++e)
      CHECK(qp.at({b, e}) == q.at({b, perm[static_cast<std::size_t>(e)]}));  // bitwise
}

TEST_CASE("cpa loss limits") {
  fdct::Rng rng(14);
  ParamRegistry<double> reg;
  auto bank = fdct::PrototypeBank<double>::create(reg, rng, 4, 6);

  // one-hot assignments on the matching prototype, embeddings sitting exactly
  // on those prototypes: loss falls toward 0 as the prediction concentrates
  auto emb = fdct::detach(bank.prototypes);
  auto onehot = Tensor::zeros({4, 4});
  for (int i = 0; i < 4; ++i) onehot.values_mut()[static_cast<std::size_t>(i * 4 + i)] = 1.0;
  fdct::CpaOptions<double> opt;
  opt.q_v_fixed = &onehot;
  opt.q_i_fixed = &onehot;
  double prev = 1e9;
  for (double g3 : {0.2, 0.05, 0.02}) {
    const double l = fdct::cpa_loss(emb, emb, bank, g3, opt).item();
    CHECK(l < prev);
    prev = l;
  }
  CHECK(prev < 0.05);

  // uniform similarities: q and p both uniform, loss = log E exactly
  ParamRegistry<double> reg2;
  fdct::Rng rng2(15);
  auto bank2 = fdct::PrototypeBank<double>::create(reg2, rng2, 4, 6);
  auto& pv = bank2.prototypes.values_mut();
  for (int e = 1; e < 4; ++e)
    for (int j = 0; j < 6; ++j) pv[static_cast<std::size_t>(e * 6 + j)] = pv[static_cast<std::size_t>(j)];
  auto embs = unit_rows(rng2, {3, 6});
  const double l = fdct::cpa_loss(embs, embs, bank2, 0.2).item();
  CHECK(l == doctest::Approx(std::log(4.0)).epsilon(1e-9));

  // Gibbs inequality oracle at E=4: -(1/E) sum log p >= log E, equality iff uniform
  std::vector<std::vector<double>> ps{{0.25, 0.25, 0.25, 0.25}, {0.7, 0.1, 0.1, 0.1}, {0.4, 0.3, 0.2, 0.1}};
  for (const auto& p : ps) {
    double ce = 0;
    for (double x : p) ce += -0.25 * std::log(x);
    if (p[0] == 0.25)
      CHECK(ce == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    else
      CHECK(ce > std::log(4.0));
  }
}

TEST_CASE("cpa gradient matches finite differences with frozen assignments") {
  fdct::Rng rng(16);
  ParamRegistry<double> reg;
  auto bank = fdct::PrototypeBank<double>::create(reg, rng, 5, 4);
  auto y = unit_rows(rng, {3, 4});
  auto z = unit_rows(rng, {3, 4});

  // capture assignments at the base point
  Tensor qv, qi;
  fdct::CpaOptions<double> capture;
  capture.q_v_out = &qv;
  capture.q_i_out = &qi;
  fdct::cpa_loss(y, z, bank, 0.2, capture);

  fdct::CpaOptions<double> frozen;
  frozen.q_v_fixed = &qv;
  frozen.q_i_fixed = &qi;
  auto res = oracles::grad_check(
      [&]() { return fdct::cpa_loss(y, z, bank, 0.2, frozen); },
      {bank.prototypes, y, z}, 1e-6, 1e-3);
  CHECK(res.max_rel < 1e-3);

  fdct::CpaOptions<double> bad;
  bad.q_v_fixed = &y;
  bad.q_i_fixed = &y;
  CHECK_THROWS_AS(fdct::cpa_loss(y, z, bank, 0.2, bad), fdct::ShapeError);
}

TEST_CASE("alignment temperatures validate") {
  fdct::AlignmentTemps temps;
  temps.validate();
  temps.gamma2 = 0.0;
  CHECK_THROWS_AS(temps.validate(), fdct::ValueError);
}
