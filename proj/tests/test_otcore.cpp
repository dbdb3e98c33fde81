// Copyright 2026 The clotvc Authors.
// Licensed under the Apache License, Version 2.0.

#include <doctest.h>

#include "clot/otcore.hpp"
#include "helpers.hpp"

using namespace clot;
using namespace clot::otcore;

namespace {

SinkhornConfig tight_cfg() {
  SinkhornConfig c;
  c.reg = 0.01;
  c.max_iters = 5000;
  c.marginal_tol = 1e-9;
  return c;
}

OtBatch angles(std::initializer_list<double> degs) {
  OtBatch b;
  for (double d : degs) {
    const double r = d * M_PI / 180.0;
    b.vectors.push_back({std::cos(r), std::sin(r)});
  }
  return b;
}

}  // namespace

TEST_CASE("chunking splits an embedding into equal quarters") {
  std::vector<double> e = {1, 2, 3, 4, 5, 6, 7, 8};
  auto b = chunk_embedding(e, 4);
  REQUIRE(b.n() == 4);
  CHECK(b.vectors[0] == std::vector<double>{1, 2});
  CHECK(b.vectors[3] == std::vector<double>{7, 8});
  CHECK_THROWS(chunk_embedding({1, 2, 3}, 4));
  CHECK_THROWS(chunk_embedding({}, 4));
}

TEST_CASE("cosine distance endpoints") {
  CHECK(cosine_distance({1, 0}, {2, 0}) == doctest::Approx(0.0));
  CHECK(cosine_distance({1, 0}, {0, 3}) == doctest::Approx(1.0));
  CHECK(cosine_distance({1, 0}, {-5, 0}) == doctest::Approx(2.0));
  // zero-vector guard stays finite and in range
  const double z = cosine_distance({0, 0}, {1, 0});
  CHECK(std::isfinite(z));
  CHECK(z >= 0.0);
  CHECK(z <= 2.0);
  CHECK_THROWS(cosine_distance({1, 0}, {1, 0, 0}));
}

TEST_CASE("cosine cost is scale invariant and bounded") {
  Rng rng(5);
  auto a = testutil::random_batch(4, 6, rng);
  auto b = testutil::random_batch(4, 6, rng);
  auto c1 = cosine_cost(a, b);
  OtBatch a2 = a, b2 = b;
  for (auto& v : a2.vectors)
    for (double& x : v) x *= 37.0;
  for (auto& v : b2.vectors)
    for (double& x : v) x *= 0.01;
  auto c2 = cosine_cost(a2, b2);
  for (size_t i = 0; i < c1.c.size(); ++i) {
    CHECK(c1.c[i] == doctest::Approx(c2.c[i]).epsilon(1e-9));
    CHECK(c1.c[i] >= 0.0);
    CHECK(c1.c[i] <= 2.0);
  }
}

TEST_CASE("uniform cost yields the uniform plan") {
  CostMatrix cm;
  cm.n = 4;
  cm.c.assign(16, 0.7);
  auto plan = sinkhorn_plan(cm, SinkhornConfig{});
  CHECK(plan.converged);
  for (double m : plan.m) CHECK(m == doctest::Approx(1.0 / 16).epsilon(1e-6));
}

TEST_CASE("sinkhorn plans satisfy the uniform marginals") {
  Rng rng(6);
  std::uniform_real_distribution<double> d(0, 2);
  for (int trial = 0; trial < 50; ++trial) {
    CostMatrix cm;
    cm.n = 4;
    cm.c.resize(16);
    for (double& c : cm.c) c = d(rng);
    SinkhornConfig cfg;
    cfg.max_iters = 100000;  // near-tie instances can need tens of thousands
    auto plan = sinkhorn_plan(cm, cfg);
    CHECK(plan.converged);
    for (int p = 0; p < 4; ++p) {
      double rs = 0, cs = 0;
      for (int q = 0; q < 4; ++q) {
        rs += plan.at(p, q);
        cs += plan.at(q, p);
        CHECK(plan.at(p, q) >= 0.0);
      }
      CHECK(rs == doctest::Approx(0.25).epsilon(1e-5));
      CHECK(cs == doctest::Approx(0.25).epsilon(1e-5));
    }
  }
}

TEST_CASE("sinkhorn is deterministic") {
  Rng rng(7);
  auto a = testutil::random_batch(4, 8, rng);
  auto b = testutil::random_batch(4, 8, rng);
  auto c = cosine_cost(a, b);
  auto p1 = sinkhorn_plan(c, SinkhornConfig{});
  auto p2 = sinkhorn_plan(c, SinkhornConfig{});
  CHECK(p1.m == p2.m);
  CHECK(p1.iters == p2.iters);
}

TEST_CASE("two-point transport matches the closed form") {
  // N=2: optimal plan picks the cheaper of identity/swap pairings
  CostMatrix cm;
  cm.n = 2;
  cm.c = {0.1, 1.5, 1.4, 0.2};  // identity pairing: (0.1+0.2)/2
  auto plan = sinkhorn_plan(cm, tight_cfg());
  const double val = trace_product(plan, cm);
  CHECK(val == doctest::Approx(0.15).epsilon(0.02));
  CHECK(testutil::lp_transport_oracle(cm) == doctest::Approx(0.15));
}

TEST_CASE("entropic transport value approaches the exact optimum") {
  Rng rng(8);
  std::uniform_real_distribution<double> d(0, 2);
  for (int n : {2, 3, 4}) {
    for (int trial = 0; trial < 40; ++trial) {
      CostMatrix cm;
      cm.n = n;
      cm.c.resize(static_cast<size_t>(n) * n);
      for (double& c : cm.c) c = d(rng);
      const double exact = testutil::lp_transport_oracle(cm);
      auto plan = sinkhorn_plan(cm, tight_cfg());
      const double ent = trace_product(plan, cm);
      // the entropic value cannot beat the optimum beyond numerical slack
      CHECK(ent >= exact - 1e-4);
      CHECK(std::fabs(ent - exact) <= std::max(0.02 * exact, 1e-4));
    }
  }
}

TEST_CASE("stronger regularization moves the value toward the uniform plan") {
  Rng rng(9);
  auto a = testutil::random_batch(4, 8, rng);
  auto b = testutil::random_batch(4, 8, rng);
  auto cm = cosine_cost(a, b);
  SinkhornConfig lo = tight_cfg();
  SinkhornConfig hi = tight_cfg();
  hi.reg = 100.0;
  const double v_lo = trace_product(sinkhorn_plan(cm, lo), cm);
  const double v_hi = trace_product(sinkhorn_plan(cm, hi), cm);
  double uniform = 0;
  for (double c : cm.c) uniform += c / 16.0;
  CHECK(v_lo <= v_hi + 1e-9);
  CHECK(std::fabs(v_hi - uniform) < 0.01);
}

TEST_CASE("trace product is the plan-cost inner product") {
  CostMatrix c;
  c.n = 2;
  c.c = {1, 2, 3, 4};
  TransportPlan m;
  m.n = 2;
  m.m = {0.25, 0.25, 0.25, 0.25};
  CHECK(trace_product(m, c) == doctest::Approx(2.5));
}

TEST_CASE("discriminator transport loss on duplicated batches") {
  // X' = X and Y' = Y collapses the loss to W(X,Y)-like cross terms only.
  auto x = angles({0, 90});
  auto y = angles({45, 135});
  auto cfg = tight_cfg();
  const double w_xy = ot_distance(x, y, cfg);
  const double as_written = disc_ot_loss(x, x, y, y, cfg, LossForm::as_written);
  // first + 3 cross - 2 self - 2 self, with W(X,X)=W(Y,Y)~0 and all cross
  // terms equal to W(X,Y)
  CHECK(as_written == doctest::Approx(3 * w_xy).epsilon(0.02));
  const double c45 = 1.0 - std::cos(M_PI / 4);
  CHECK(w_xy == doctest::Approx(c45).epsilon(0.02));
  const double symmetric = disc_ot_loss(x, x, y, y, cfg, LossForm::symmetric);
  CHECK(symmetric == doctest::Approx(4 * w_xy).epsilon(0.02));
}

TEST_CASE("discriminator transport loss collapses when fake matches real") {
  Rng rng(10);
  auto x = testutil::random_batch(4, 8, rng);
  auto xp = testutil::random_batch(4, 8, rng);
  auto cfg = tight_cfg();
  // Substituting Y = X, Y' = X' term by term leaves W(X',X') - W(X,X'):
  // the large cross-batch attraction flips sign, rewarding matched fakes.
  const double v = disc_ot_loss(x, xp, x, xp, cfg, LossForm::as_written);
  const double w_xxp = ot_distance(x, xp, cfg);
  const double w_self = ot_distance(xp, xp, cfg);
  CHECK(v == doctest::Approx(w_self - w_xxp).epsilon(1e-3));
  CHECK(std::fabs(w_self) < 0.05);  // self-transport is near free
}

TEST_CASE("loss is invariant to embedding scale") {
  Rng rng(11);
  auto x = testutil::random_batch(4, 8, rng);
  auto xp = testutil::random_batch(4, 8, rng);
  auto y = testutil::random_batch(4, 8, rng);
  auto yp = testutil::random_batch(4, 8, rng);
  auto cfg = tight_cfg();
  const double v1 = disc_ot_loss(x, xp, y, yp, cfg);
  for (auto* b : {&x, &xp, &y, &yp})
    for (auto& v : b->vectors)
      for (double& e : v) e *= 123.0;
  const double v2 = disc_ot_loss(x, xp, y, yp, cfg);
  CHECK(v1 == doctest::Approx(v2).epsilon(1e-9));
}

TEST_CASE("autodiff value path agrees with the scalar path") {
  Rng rng(12);
  std::normal_distribution<double> d(0, 1);
  std::vector<double> ea(16), eb(16);
  for (double& v : ea) v = d(rng);
  for (double& v : eb) v = d(rng);
  SinkhornConfig cfg;
  ag::Tensor ta = ag::Tensor::from_vec({16}, ea, false);
  ag::Tensor tb = ag::Tensor::from_vec({16}, eb, false);
  ag::Tensor loss = ot_distance_t(chunk_embedding_t(ta, 4), chunk_embedding_t(tb, 4), cfg);
  const double scalar = ot_distance(chunk_embedding(ea, 4), chunk_embedding(eb, 4), cfg);
  CHECK(loss.item() == doctest::Approx(scalar).epsilon(1e-10));
}

TEST_CASE("transport gradient is the envelope derivative of the entropic value") {
  // The loss value excludes the entropy term, but its gradient (frozen plan)
  // is the exact derivative of the full entropic objective.
  Rng rng(13);
  std::normal_distribution<double> d(0, 1);
  std::vector<double> ea(16), eb(16);
  for (double& v : ea) v = d(rng);
  for (double& v : eb) v = d(rng);
  SinkhornConfig cfg;
  cfg.max_iters = 2000;
  cfg.marginal_tol = 1e-12;
  ag::Tensor ta = ag::Tensor::from_vec({16}, ea, true);
  ag::Tensor tb = ag::Tensor::from_vec({16}, eb, false);
  ag::backward(ot_distance_t(chunk_embedding_t(ta, 4), chunk_embedding_t(tb, 4), cfg));
  auto numeric = testutil::numeric_grad(
      [&](const std::vector<double>& v) {
        return testutil::entropic_value(chunk_embedding(v, 4), chunk_embedding(eb, 4),
                                        cfg);
      },
      ea, 1e-5);
  CHECK(testutil::grad_deviation(ta.node()->grad, numeric) < 1e-3);
}

TEST_CASE("four-batch loss gradient matches the entropic-objective oracle") {
  Rng rng(14);
  std::normal_distribution<double> d(0, 1);
  std::vector<double> ex(16), exp_(16), ey(16), eyp(16);
  for (auto* v : {&ex, &exp_, &ey, &eyp})
    for (double& e : *v) e = d(rng);
  SinkhornConfig cfg;
  cfg.max_iters = 2000;
  cfg.marginal_tol = 1e-12;
  auto t = [&](const std::vector<double>& v) {
    return chunk_embedding_t(ag::Tensor::from_vec({16}, v, false), 4);
  };
  ag::Tensor ty = ag::Tensor::from_vec({16}, ey, true);
  ag::backward(disc_ot_loss_t(t(ex), t(exp_), chunk_embedding_t(ty, 4), t(eyp), cfg,
                              LossForm::as_written));
  auto numeric = testutil::numeric_grad(
      [&](const std::vector<double>& v) {
        auto bx = chunk_embedding(ex, 4), bxp = chunk_embedding(exp_, 4);
        auto by = chunk_embedding(v, 4), byp = chunk_embedding(eyp, 4);
        // only the terms containing Y vary with the perturbed embedding
        return testutil::entropic_value(bx, bxp, cfg) +
               testutil::entropic_value(bx, byp, cfg) +
               testutil::entropic_value(bxp, by, cfg) +
               testutil::entropic_value(bxp, byp, cfg) -
               2 * testutil::entropic_value(bx, bxp, cfg) -
               2 * testutil::entropic_value(by, byp, cfg);
      },
      ey, 1e-5);
  CHECK(testutil::grad_deviation(ty.node()->grad, numeric) < 1e-3);
}

TEST_CASE("matrix dump is parseable and complete") {
  CostMatrix c;
  c.n = 2;
  c.c = {0.0, 1.0, 1.0, 0.0};
  auto m = sinkhorn_plan(c, SinkhornConfig{});
  auto s = dump_matrices(c, m);
  CHECK(s.find("cost") != std::string::npos);
  CHECK(s.find("plan") != std::string::npos);
}
