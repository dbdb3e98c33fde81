// Copyright 2026 The clotvc Authors.
// Licensed under the Apache License, Version 2.0.

#include <doctest.h>

#include "clot/tensor.hpp"
#include "helpers.hpp"

using namespace clot;
using ag::Tensor;

namespace {

std::vector<double> rand_vec(size_t n, Rng& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

}  // namespace

TEST_CASE("elementwise arithmetic gradients") {
  Rng rng(1);
  auto x0 = rand_vec(12, rng);
  CHECK(testutil::check_gradients(
            [&](const Tensor& p) {
              Tensor a = ag::scale(p, 1.7);
              Tensor b = ag::add_scalar(ag::mul(p, p), 0.3);
              return ag::sum(ag::add(ag::sub(a, b), ag::mul(a, b)));
            },
            {3, 4}, x0) < 1e-6);
}

TEST_CASE("unary op gradients") {
  Rng rng(2);
  auto x0 = rand_vec(10, rng, 0.2, 1.5);  // positive: valid for log/sqrt
  for (auto op : {+[](const Tensor& t) { return ag::sigmoid(t); },
                  +[](const Tensor& t) { return ag::tanh_(t); },
                  +[](const Tensor& t) { return ag::exp_(t); },
                  +[](const Tensor& t) { return ag::log_(t); },
                  +[](const Tensor& t) { return ag::sqrt_(t); },
                  +[](const Tensor& t) { return ag::square(t); },
                  +[](const Tensor& t) { return ag::swish(t); }}) {
    CHECK(testutil::check_gradients(
              [&](const Tensor& p) { return ag::sum(op(p)); }, {10}, x0) < 1e-6);
  }
}

TEST_CASE("relu and abs gradients away from kinks") {
  std::vector<double> x0 = {-1.5, -0.7, 0.4, 1.2, -0.3, 0.9};
  CHECK(testutil::check_gradients(
            [&](const Tensor& p) { return ag::sum(ag::relu(p)); }, {6}, x0) < 1e-6);
  CHECK(testutil::check_gradients(
            [&](const Tensor& p) { return ag::sum(ag::abs_(p)); }, {6}, x0) < 1e-6);
}

TEST_CASE("reductions") {
  Rng rng(3);
  auto x0 = rand_vec(12, rng);
  CHECK(testutil::check_gradients(
            [&](const Tensor& p) { return ag::mean(p); }, {3, 4}, x0) < 1e-6);
  CHECK(testutil::check_gradients(
            [&](const Tensor& p) { return ag::sum(ag::mean_rows(p)); }, {3, 4}, x0) <
        1e-6);
}

TEST_CASE("matmul and linear gradients") {
  Rng rng(4);
  auto a0 = rand_vec(6, rng);
  Tensor b = Tensor::from_vec({3, 2}, rand_vec(6, rng));
  CHECK(testutil::check_gradients(
            [&](const Tensor& p) { return ag::sum(ag::matmul(p, b)); }, {2, 3}, a0) <
        1e-6);
  Tensor w = Tensor::from_vec({3, 4}, rand_vec(12, rng));
  Tensor bias = Tensor::from_vec({4}, rand_vec(4, rng));
  CHECK(testutil::check_gradients(
            [&](const Tensor& p) {
              return ag::sum(ag::square(ag::linear(p, w, bias)));
            },
            {2, 3}, a0) < 1e-6);
}

TEST_CASE("softmax rows gradient and row sums") {
  Rng rng(5);
  auto x0 = rand_vec(8, rng, -2, 2);
  Tensor p = Tensor::from_vec({2, 4}, x0);
  Tensor s = ag::softmax_rows(p);
  for (int r = 0; r < 2; ++r) {
    double rs = 0;
    for (int c = 0; c < 4; ++c) rs += s.node()->val[r * 4 + c];
    CHECK(rs == doctest::Approx(1.0).epsilon(1e-12));
  }
  Tensor wts = Tensor::from_vec({2, 4}, rand_vec(8, rng));
  CHECK(testutil::check_gradients(
            [&](const Tensor& q) {
              return ag::sum(ag::mul(ag::softmax_rows(q), wts));
            },
            {2, 4}, x0) < 1e-6);
}

TEST_CASE("normalization layer gradients") {
  Rng rng(6);
  auto x0 = rand_vec(2 * 3 * 4, rng);
  Tensor gamma = Tensor::from_vec({2}, {1.1, 0.9});
  Tensor beta = Tensor::from_vec({2}, {0.1, -0.2});
  CHECK(testutil::check_gradients(
            [&](const Tensor& p) {
              return ag::sum(ag::square(ag::instance_norm(p, gamma, beta)));
            },
            {2, 3, 4}, x0) < 1e-4);
  Tensor g4 = Tensor::from_vec({4}, {1.0, 1.2, 0.8, 1.1});
  Tensor b4 = Tensor::from_vec({4}, {0.0, 0.1, -0.1, 0.2});
  CHECK(testutil::check_gradients(
            [&](const Tensor& p) {
              Tensor r = ag::reshape(p, {6, 4});
              return ag::sum(ag::square(ag::layer_norm_rows(r, g4, b4)));
            },
            {2, 3, 4}, x0) < 1e-4);
}

TEST_CASE("glu gradient halves channels") {
  Rng rng(7);
  auto x0 = rand_vec(4 * 2 * 3, rng);
  Tensor p = Tensor::from_vec({4, 2, 3}, x0);
  Tensor g = ag::glu0(p);
  CHECK(g.node()->shape == std::vector<int>{2, 2, 3});
  CHECK(testutil::check_gradients(
            [&](const Tensor& q) { return ag::sum(ag::glu0(q)); }, {4, 2, 3}, x0) <
        1e-6);
}

TEST_CASE("conv2d gradient vs finite differences") {
  Rng rng(8);
  auto x0 = rand_vec(2 * 5 * 6, rng);
  Tensor w = Tensor::from_vec({3, 2, 3, 3}, rand_vec(3 * 2 * 3 * 3, rng, -0.3, 0.3));
  Tensor b = Tensor::from_vec({3}, rand_vec(3, rng));
  CHECK(testutil::check_gradients(
            [&](const Tensor& p) {
              return ag::sum(ag::square(ag::conv2d(p, w, b, 2, 2, 1, 1)));
            },
            {2, 5, 6}, x0) < 1e-5);
  // weight gradient
  auto w0 = rand_vec(3 * 2 * 3 * 3, rng, -0.3, 0.3);
  Tensor x = Tensor::from_vec({2, 5, 6}, rand_vec(2 * 5 * 6, rng));
  CHECK(testutil::check_gradients(
            [&](const Tensor& p) {
              return ag::sum(ag::square(ag::conv2d(x, p, b, 1, 1, 1, 1)));
            },
            {3, 2, 3, 3}, w0) < 1e-5);
}

TEST_CASE("conv1d and depthwise conv1d gradients") {
  Rng rng(9);
  auto x0 = rand_vec(3 * 7, rng);
  Tensor w = Tensor::from_vec({2, 3, 3}, rand_vec(2 * 3 * 3, rng, -0.3, 0.3));
  Tensor b = Tensor::from_vec({2}, rand_vec(2, rng));
  CHECK(testutil::check_gradients(
            [&](const Tensor& p) {
              return ag::sum(ag::square(ag::conv1d(p, w, b, 1, 1)));
            },
            {3, 7}, x0) < 1e-5);
  Tensor dw = Tensor::from_vec({3, 3}, rand_vec(9, rng, -0.3, 0.3));
  Tensor db = Tensor::from_vec({3}, rand_vec(3, rng));
  CHECK(testutil::check_gradients(
            [&](const Tensor& p) {
              return ag::sum(ag::square(ag::depthwise_conv1d(p, dw, db, 1)));
            },
            {3, 7}, x0) < 1e-5);
}

TEST_CASE("structural ops: reshape, transpose, narrow, concat, slices") {
  Rng rng(10);
  auto x0 = rand_vec(12, rng);
  CHECK(testutil::check_gradients(
            [&](const Tensor& p) {
              Tensor r = ag::reshape(p, {4, 3});
              Tensor t = ag::transpose2d(r);
              Tensor n = ag::narrow0(t, 1, 3);
              Tensor c = ag::concat0(n, n);
              Tensor s = ag::slice_cols(c, 1, 3);
              return ag::sum(ag::square(s));
            },
            {3, 4}, x0) < 1e-6);
  CHECK(testutil::check_gradients(
            [&](const Tensor& p) {
              Tensor r = ag::reshape(p, {3, 4});
              Tensor a = ag::slice_cols(r, 0, 2);
              Tensor b = ag::slice_cols(r, 2, 4);
              return ag::sum(ag::mul(ag::concat_cols({a, b}), r));
            },
            {3, 4}, x0) < 1e-6);
}

TEST_CASE("pixel shuffle rearrangements") {
  // [4,2,3] with r=2 -> [1,4,6]; values preserved as a multiset
  Rng rng(11);
  auto x0 = rand_vec(4 * 2 * 3, rng);
  Tensor p = Tensor::from_vec({4, 2, 3}, x0);
  Tensor s = ag::pixel_shuffle2d(p, 2);
  CHECK(s.node()->shape == std::vector<int>{1, 4, 6});
  auto a = x0, b = s.node()->val;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CHECK(a == b);
  CHECK(testutil::check_gradients(
            [&](const Tensor& q) {
              Tensor wts = Tensor::from_vec({1, 4, 6}, std::vector<double>(24, 0.5));
              return ag::sum(ag::mul(ag::pixel_shuffle2d(q, 2), wts));
            },
            {4, 2, 3}, x0) < 1e-6);
}

TEST_CASE("gather with scatter-add backward") {
  Rng rng(12);
  auto x0 = rand_vec(6, rng);
  auto idx = std::make_shared<std::vector<std::int64_t>>(
      std::vector<std::int64_t>{0, 0, 3, 5, 2, 2, 1, 4});
  CHECK(testutil::check_gradients(
            [&](const Tensor& p) {
              return ag::sum(ag::square(ag::gather(p, {2, 4}, idx)));
            },
            {6}, x0) < 1e-6);
}

TEST_CASE("detach blocks gradient flow") {
  Tensor p = Tensor::from_vec({3}, {1.0, 2.0, 3.0}, true);
  Tensor d = ag::mul(p, p).detach();
  Tensor loss = ag::sum(ag::add(ag::mul(d, p), p));
  ag::backward(loss);
  // d is constant: dloss/dp = d + 1
  CHECK(p.node()->grad[0] == doctest::Approx(2.0));
  CHECK(p.node()->grad[1] == doctest::Approx(5.0));
  CHECK(p.node()->grad[2] == doctest::Approx(10.0));
}

TEST_CASE("randn determinism under the same seed") {
  Rng r1(42), r2(42);
  Tensor a = Tensor::randn({5, 5}, r1, 0.1);
  Tensor b = Tensor::randn({5, 5}, r2, 0.1);
  CHECK(a.node()->val == b.node()->val);
}

TEST_CASE("backward accumulates across shared subexpressions") {
  Tensor p = Tensor::from_vec({2}, {0.5, -0.4}, true);
  Tensor s = ag::mul(p, p);
  Tensor loss = ag::sum(ag::add(s, s));  // d/dp = 4p
  ag::backward(loss);
  CHECK(p.node()->grad[0] == doctest::Approx(2.0));
  CHECK(p.node()->grad[1] == doctest::Approx(-1.6));
}
