//
// Copyright 2026 The molgap Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "molgap/ops.hpp"
#include "molgap/rng.hpp"
#include "support/finite_diff.hpp"

using namespace molgap;
using molgap_tests::check_gradients;
using Catch::Approx;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Scalarize an arbitrary op output with fixed random weights so every output
// entry contributes to the finite-difference probe.
Tensor weighted(Tape& tp, const Tensor& out, const Tensor& weights) {
  return sum(tp, mul(tp, out, weights));
}

}  // namespace

TEST_CASE("matmul gradient example") {
  // d/dA sum(A*B) at A=[[1,2]], B=[[3],[4]] is [[3,4]]
  Tensor a = Tensor::from({1, 2}, {1, 2});
  Tensor b = Tensor::from({2, 1}, {3, 4});
  Tape tp;
  tp.watch(a);
  Tensor loss = sum(tp, matmul(tp, a, b));
  tp.backward(loss);
  CHECK(tp.grad(a)[0] == Approx(3.0));
  CHECK(tp.grad(a)[1] == Approx(4.0));

  auto fd = check_gradients({{"a", a}}, [&](Tape& t) { return sum(t, matmul(t, a, b)); });
  CHECK(fd.max_rel_err < 1e-4);
}

TEST_CASE("exp adjoint matches finite differences at 1") {
  Tensor x = Tensor::scalar(1.0);
  auto fd = check_gradients({{"x", x}}, [&](Tape& t) { return sum(t, exp(t, x)); }, 1e-6);
  CHECK(fd.max_rel_err < 1e-6);

  Tape tp;
  tp.watch(x);
  Tensor loss = sum(tp, exp(tp, x));
  tp.backward(loss);
  CHECK(tp.grad(x)[0] == Approx(std::exp(1.0)));
}

TEST_CASE("finite differences across all differentiable ops") {
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL, 5ULL}) {
    Rng rng(seed);
    Tensor a = random_tensor({4, 3}, rng);
    Tensor b = random_tensor({4, 3}, rng);
    Tensor m1 = random_tensor({3, 5}, rng);
    Tensor w = random_tensor({4, 3}, rng);   // fixed scalarization weights
    Tensor w45 = random_tensor({4, 5}, rng);
    Tensor w34 = random_tensor({3, 4}, rng);
    Tensor pos = random_tensor({4, 3}, rng, 0.5, 3.0);
    Tensor off = random_tensor({4, 3}, rng, 0.3, 2.0);  // keeps relu/clamp away from kinks
    Tensor bias = random_tensor({3}, rng);
    Tensor sc = Tensor::scalar(rng.uniform(0.5, 1.5));
    std::vector<int> seg = {2, 0, 2, 1};
    std::vector<int> ids = {1, 1, 3, 0};

    auto run = [&](const char* name, auto fn, std::vector<std::pair<std::string, Tensor>> params) {
      auto fd = check_gradients(std::move(params), fn);
      INFO(name << " seed=" << seed << " worst=" << fd.worst);
      CHECK(fd.max_rel_err < 1e-4);
    };

    run("add", [&](Tape& t) { return weighted(t, add(t, a, b), w); }, {{"a", a}, {"b", b}});
    run("sub", [&](Tape& t) { return weighted(t, sub(t, a, b), w); }, {{"a", a}, {"b", b}});
    run("mul", [&](Tape& t) { return weighted(t, mul(t, a, b), w); }, {{"a", a}, {"b", b}});
    run("relu_off", [&](Tape& t) { return weighted(t, relu(t, off), w); }, {{"off", off}});
    run("softplus", [&](Tape& t) { return weighted(t, softplus(t, a), w); }, {{"a", a}});
    run("exp", [&](Tape& t) { return weighted(t, exp(t, a), w); }, {{"a", a}});
    run("log", [&](Tape& t) { return weighted(t, log(t, pos), w); }, {{"pos", pos}});
    run("sqrt", [&](Tape& t) { return weighted(t, sqrt(t, pos), w); }, {{"pos", pos}});
    run("scale", [&](Tape& t) { return weighted(t, scale(t, a, sc), w); }, {{"a", a}, {"sc", sc}});
    run("add_scalar", [&](Tape& t) { return weighted(t, add_scalar(t, a, 0.7), w); }, {{"a", a}});
    run("mul_scalar", [&](Tape& t) { return weighted(t, mul_scalar(t, a, -1.3), w); }, {{"a", a}});
    run("matmul", [&](Tape& t) { return weighted(t, matmul(t, a, m1), w45); },
        {{"a", a}, {"m1", m1}});
    run("transpose", [&](Tape& t) { return weighted(t, transpose(t, a), w34); }, {{"a", a}});
    run("reshape", [&](Tape& t) { return weighted(t, reshape(t, a, {3, 4}), w34); }, {{"a", a}});
    run("concat_cols",
        [&](Tape& t) {
          Tensor c = concat_cols(t, a, b);
          return sum(t, mul(t, c, concat_cols(t, w, w)));
        },
        {{"a", a}, {"b", b}});
    run("slice_rows",
        [&](Tape& t) { return sum(t, slice_rows(t, a, 1, 2)); }, {{"a", a}});
    run("vstack",
        [&](Tape& t) {
          Tensor v = vstack(t, {a, b});
          return sum(t, mul(t, v, vstack(t, {w, w})));
        },
        {{"a", a}, {"b", b}});
    run("gather_rows",
        [&](Tape& t) { return weighted(t, gather_rows(t, a, ids), w); }, {{"a", a}});
    run("segment_sum",
        [&](Tape& t) {
          Tensor s = segment_sum(t, a, seg, 3);
          return sum(t, mul(t, s, w34.clone()));
        },
        {{"a", a}});
    run("softmax_rows", [&](Tape& t) { return weighted(t, softmax_rows(t, a), w); }, {{"a", a}});
    run("clamp_interior",
        [&](Tape& t) { return weighted(t, clamp(t, off, 0.0, 50.0), w); }, {{"off", off}});
    run("add_rowvec", [&](Tape& t) { return weighted(t, add_rowvec(t, a, bias), w); },
        {{"a", a}, {"bias", bias}});
    run("sum", [&](Tape& t) { return sum(t, a); }, {{"a", a}});
    run("kl_gaussian",
        [&](Tape& t) { return kl_gaussian(t, a, pos, 1.3); }, {{"a", a}, {"pos", pos}});
  }
}

TEST_CASE("segment_sum adjoint matches finite differences on a random 4x2 input") {
  Rng rng(99);
  Tensor v = random_tensor({4, 2}, rng);
  Tensor w = random_tensor({3, 2}, rng);
  std::vector<int> seg = {0, 2, 0, 1};
  auto fd = check_gradients({{"v", v}}, [&](Tape& t) {
    Tensor s = segment_sum(t, v, seg, 3);
    return sum(t, mul(t, s, w));
  });
  CHECK(fd.max_rel_err < 1e-4);
}

TEST_CASE("embedding adjoint matches finite differences on a random table") {
  Rng rng(7);
  Tensor table = random_tensor({5, 3}, rng);
  Tensor w = random_tensor({4, 3}, rng);
  std::vector<int> codes = {4, 0, 0, 2};
  auto fd = check_gradients({{"table", table}}, [&](Tape& t) {
    return sum(t, mul(t, gather_rows(t, table, codes), w));
  });
  CHECK(fd.max_rel_err < 1e-4);
}

TEST_CASE("batch_norm gradients match finite differences") {
  for (std::uint64_t seed : {21ULL, 22ULL, 23ULL}) {
    Rng rng(seed);
    Tensor x = random_tensor({6, 4}, rng);
    Tensor w = random_tensor({6, 4}, rng);
    BatchNorm bn = BatchNorm::make(4);
    for (auto& g : bn.gamma.data()) g = rng.uniform(0.5, 1.5);
    for (auto& b : bn.beta.data()) b = rng.uniform(-0.5, 0.5);
    for (auto& m : bn.running_mean.data()) m = rng.uniform(-0.5, 0.5);
    for (auto& v : bn.running_var.data()) v = rng.uniform(0.5, 1.5);

    for (bool train : {true, false}) {
      BatchNorm scratch = {bn.gamma, bn.beta, bn.running_mean.clone(), bn.running_var.clone()};
      auto fd = check_gradients(
          {{"x", x}, {"gamma", bn.gamma}, {"beta", bn.beta}},
          [&](Tape& t) { return sum(t, mul(t, batch_norm(t, x, scratch, train), w)); });
      INFO("train=" << train << " seed=" << seed << " worst=" << fd.worst);
      CHECK(fd.max_rel_err < 1e-4);
    }
  }
}

TEST_CASE("two-layer network gradients match finite differences") {
  Rng rng(123);
  Tensor x = random_tensor({5, 3}, rng);
  Tensor w1 = random_tensor({3, 4}, rng, -0.7, 0.7);
  Tensor b1 = random_tensor({4}, rng, -0.3, 0.3);
  Tensor w2 = random_tensor({4, 1}, rng, -0.7, 0.7);
  Tensor b2 = random_tensor({1}, rng, -0.3, 0.3);
  Tensor target = random_tensor({5}, rng, 3.0, 9.0);

  auto fd = check_gradients(
      {{"w1", w1}, {"b1", b1}, {"w2", w2}, {"b2", b2}},
      [&](Tape& t) {
        Tensor h = relu(t, linear(t, x, w1, b1));
        Tensor out = reshape(t, linear(t, h, w2, b2), {5});
        return l1_loss(t, out, target);
      },
      1e-5);
  CHECK(fd.max_rel_err < 1e-4);
}

TEST_CASE("fan-out accumulates adjoints") {
  Tensor x = Tensor::scalar(0.8);
  Tape tp;
  tp.watch(x);
  Tensor y = add(tp, mul(tp, x, x), x);  // x^2 + x, via shared use of x
  tp.backward(sum(tp, y));
  CHECK(tp.grad(x)[0] == Approx(2.0 * 0.8 + 1.0));
}
