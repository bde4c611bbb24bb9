// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "hiertag/autodiff.hpp"
#include "test_util.hpp"

using namespace hiertag;
using hiertag::testing::random_tensor;
using hiertag::testing::worst_leaf_error;

namespace {

Var sum_of(Var v) { return sum(v); }

// Weighted sum with fixed random weights, so every output entry gets a
// distinct upstream gradient.
Var weighted_sum(Tape& tape, Var v, std::uint64_t seed = 99) {
  Rng rng(seed);
  return sum(mul(v, tape.constant(random_tensor(v.shape(), rng))));
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("shape and size agree") {
    Tensor t({2, 3}, 1.5);
    CHECK(t.size() == 6);
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
    CHECK(shape_str(t.shape()) == "[2x3]");
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  }

  TEST_CASE("matrix factory is row-major") {
    const Tensor m = Tensor::matrix({{1, 2}, {3, 4}});
    CHECK(m.at(0, 1) == 2);
    CHECK(m.at(1, 0) == 3);
    CHECK_THROWS_AS(Tensor::matrix({{1, 2}, {3}}), DimensionError);
  }
}

TEST_SUITE("ops") {
  TEST_CASE("matmul examples") {
    Tape tape;
    const Var eye = tape.constant(Tensor::matrix({{1, 0}, {0, 1}}));
    const Var m = tape.constant(Tensor::matrix({{1, 2}, {3, 4}}));
    CHECK(matmul(eye, m).value() == m.value());
    const Var row = tape.constant(Tensor::matrix({{1, 0}}));
    const Var col = tape.constant(Tensor::matrix({{0}, {5}}));
    const Tensor r = matmul(row, col).value();
    CHECK(r.shape() == Shape{1, 1});
    CHECK(r[0] == 0.0);
  }

  TEST_CASE("matmul shape mismatch names both shapes") {
    Tape tape;
    const Var a = tape.constant(Tensor({2, 3}));
    const Var b = tape.constant(Tensor({2, 3}));
    try {
      matmul(a, b);
      FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[2x3]") != std::string::npos);
    }
  }

  TEST_CASE("matmul gradient matches central differences") {
    Rng rng(1);
    std::vector<Tensor> leaves{random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)};
    const double err = worst_leaf_error(leaves, [](Tape& t, const std::vector<Var>& v) {
      return weighted_sum(t, matmul(v[0], v[1]));
    });
    CHECK(err < 1e-6);
  }

  TEST_CASE("elementwise values at symmetry points") {
    Tape tape;
    CHECK(sigmoid(tape.constant(Tensor::scalar(0))).value()[0] == doctest::Approx(0.5));
    CHECK(tanh(tape.constant(Tensor::scalar(0))).value()[0] == 0.0);
    CHECK_THROWS_AS(add(tape.constant(Tensor({2})), tape.constant(Tensor({3}))), DimensionError);
    CHECK_THROWS_AS(mul(tape.constant(Tensor({2, 1})), tape.constant(Tensor({1, 2}))),
                    DimensionError);
  }

  TEST_CASE("binary elementwise gradients") {
    Rng rng(2);
    std::vector<Tensor> leaves{random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)};
    for (auto op : {&hiertag::add, &hiertag::sub, &hiertag::mul}) {
      const double err = worst_leaf_error(leaves, [op](Tape& t, const std::vector<Var>& v) {
        return weighted_sum(t, op(v[0], v[1]));
      });
      CHECK(err < 1e-6);
    }
  }

  TEST_CASE("unary elementwise gradients") {
    Rng rng(3);
    std::vector<Tensor> leaves{random_tensor({3, 3}, rng)};
    for (auto op : {&hiertag::sigmoid, &hiertag::tanh}) {
      const double err = worst_leaf_error(leaves, [op](Tape& t, const std::vector<Var>& v) {
        return weighted_sum(t, op(v[0]));
      });
      CHECK(err < 1e-6);
    }
    const double err = worst_leaf_error(leaves, [](Tape& t, const std::vector<Var>& v) {
      return weighted_sum(t, scale(v[0], -2.5));
    });
    CHECK(err < 1e-6);
  }

  TEST_CASE("add_row broadcasts and sums bias gradient over rows") {
    Rng rng(4);
    std::vector<Tensor> leaves{random_tensor({4, 3}, rng), random_tensor({3}, rng)};
    const double err = worst_leaf_error(leaves, [](Tape& t, const std::vector<Var>& v) {
      return weighted_sum(t, add_row(v[0], v[1]));
    });
    CHECK(err < 1e-6);
    Tape tape;
    CHECK_THROWS_AS(add_row(tape.constant(Tensor({2, 3})), tape.constant(Tensor({2}))),
                    DimensionError);
  }

  TEST_CASE("softmax examples") {
    Tape tape;
    const Tensor u = softmax(tape.constant(Tensor::matrix({{0, 0}}))).value();
    CHECK(u[0] == doctest::Approx(0.5));
    const Tensor big = softmax(tape.constant(Tensor::matrix({{1000, 1000}}))).value();
    CHECK(big[0] == doctest::Approx(0.5));
    CHECK(std::isfinite(big[1]));
  }

  TEST_CASE("softmax rows are probability vectors") {
    Rng rng(5);
    Tape tape;
    const Tensor p = softmax(tape.constant(random_tensor({50, 7}, rng, -30, 30))).value();
    for (std::size_t r = 0; r < 50; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 7; ++c) {
        CHECK(p.at(r, c) > 0.0);
        CHECK(p.at(r, c) < 1.0);
        s += p.at(r, c);
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }

  TEST_CASE("softmax Jacobian matches central differences") {
    Rng rng(6);
    std::vector<Tensor> leaves{random_tensor({1, 5}, rng)};
    for (std::uint64_t w = 0; w < 5; ++w) {
      const double err = worst_leaf_error(leaves, [w](Tape& t, const std::vector<Var>& v) {
        return weighted_sum(t, softmax(v[0]), w);
      });
      CHECK(err < 1e-6);
    }
  }

  TEST_CASE("cross entropy examples") {
    Tape tape;
    const std::vector<int> t0{0};
    const Var uniform4 = tape.constant(Tensor::matrix({{0.25, 0.25, 0.25, 0.25}}));
    CHECK(cross_entropy(uniform4, t0).value()[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    const Var perfect = tape.constant(Tensor::matrix({{1, 0, 0}}));
    CHECK(cross_entropy(perfect, t0).value()[0] == 0.0);
    const std::vector<int> t2{2};
    const Var q = tape.constant(Tensor::matrix({{0.1, 0.2, 0.7}}));
    CHECK(cross_entropy(q, t2).value()[0] == doctest::Approx(-std::log(0.7)).epsilon(1e-12));
    // Zero probability at the target is clamped, never infinite.
    const Var zero = tape.constant(Tensor::matrix({{1, 0, 0}}));
    const double clamped = cross_entropy(zero, t2).value()[0];
    CHECK(clamped == doctest::Approx(-std::log(kProbabilityFloor)));
  }

  TEST_CASE("cross entropy is nonnegative, zero iff the target has probability one") {
    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
      Tape tape;
      const Var p = softmax(tape.constant(random_tensor({1, 4}, rng, -5, 5)));
      const std::vector<int> y{static_cast<int>(uniform_index(rng, 4))};
      CHECK(cross_entropy(p, y).value()[0] > 0.0);
    }
  }

  TEST_CASE("fused softmax cross entropy agrees with the unfused composition") {
    Rng rng(8);
    const std::vector<int> targets{0, 3, -1, 2};
    std::vector<Tensor> leaves{random_tensor({4, 5}, rng)};
    Tape tape;
    const Var logits = tape.constant(leaves[0]);
    const double fused = softmax_cross_entropy(logits, targets).value()[0];
    const double plain = cross_entropy(softmax(logits), targets).value()[0];
    CHECK(fused == doctest::Approx(plain).epsilon(1e-12));
    const double err = worst_leaf_error(leaves, [&](Tape&, const std::vector<Var>& v) {
      return softmax_cross_entropy(v[0], targets);
    });
    CHECK(err < 1e-6);
    const double err2 = worst_leaf_error(leaves, [&](Tape&, const std::vector<Var>& v) {
      return cross_entropy(softmax(v[0]), targets);
    });
    CHECK(err2 < 1e-6);
  }

  TEST_CASE("cross entropy with no valid target is a contract error") {
    Tape tape;
    const std::vector<int> none{-1, -1};
    CHECK_THROWS_AS(softmax_cross_entropy(tape.constant(Tensor({2, 3})), none), ContractError);
    const std::vector<int> bad{5, 0};
    CHECK_THROWS_AS(softmax_cross_entropy(tape.constant(Tensor({2, 3})), bad), IndexError);
  }

  TEST_CASE("concat examples and gradient") {
    Tape tape;
    const Var a = tape.constant(Tensor::vector({1, 2}));
    const Var b = tape.constant(Tensor::vector({3}));
    CHECK(concat({a, b}, 0).value() == Tensor::vector({1, 2, 3}));
    const Var c = tape.constant(Tensor({2, 2}));
    const Var d = tape.constant(Tensor({2, 3}));
    CHECK(concat({c, d}, 1).shape() == Shape{2, 5});
    CHECK_THROWS_AS(concat({c, tape.constant(Tensor({3, 3}))}, 1), DimensionError);

    Rng rng(9);
    std::vector<Tensor> leaves{random_tensor({2, 2}, rng), random_tensor({2, 3}, rng),
                               random_tensor({1, 5}, rng)};
    const double err = worst_leaf_error(leaves, [](Tape& t, const std::vector<Var>& v) {
      const Var wide = concat({v[0], v[1]}, 1);
      return weighted_sum(t, concat({wide, v[2]}, 0));
    });
    CHECK(err < 1e-6);
  }

  TEST_CASE("concat gradient slices sum to the upstream gradient") {
    Tape tape;
    const Var a = tape.leaf(Tensor({2, 2}, 1.0));
    const Var b = tape.leaf(Tensor({2, 3}, 1.0));
    tape.backward(sum(concat({a, b}, 1)));
    double total = 0.0;
    const Tensor ga = tape.grad(a);
    const Tensor gb = tape.grad(b);
    for (double g : ga.values()) total += g;
    for (double g : gb.values()) total += g;
    CHECK(total == 10.0);
  }

  TEST_CASE("embedding lookup") {
    Tape tape;
    const Var table = tape.constant(Tensor::matrix({{1, 0}, {0, 1}, {2, 3}}));
    const std::vector<std::size_t> ids{0};
    CHECK(embedding_lookup(table, ids).value() == Tensor::matrix({{1, 0}}));
    const std::vector<std::size_t> none;
    CHECK(embedding_lookup(table, none).shape() == Shape{0, 2});
    const std::vector<std::size_t> bad{3};
    try {
      embedding_lookup(table, bad);
      FAIL("expected IndexError");
    } catch (const IndexError& e) {
      const std::string msg = e.what();
      CHECK(msg.find('3') != std::string::npos);
    }
  }

  TEST_CASE("duplicate ids accumulate gradient additively") {
    Tape tape;
    const Var table = tape.leaf(Tensor({3, 2}, 0.5));
    const std::vector<std::size_t> ids{1, 1, 2};
    tape.backward(sum(embedding_lookup(table, ids)));
    const Tensor g = tape.grad(table);
    CHECK(g.at(0, 0) == 0.0);
    CHECK(g.at(1, 0) == 2.0);
    CHECK(g.at(2, 1) == 1.0);
    Rng rng(10);
    std::vector<Tensor> leaves{random_tensor({4, 3}, rng)};
    const std::vector<std::size_t> many{3, 0, 3, 3, 1};
    const double err = worst_leaf_error(leaves, [&](Tape& t, const std::vector<Var>& v) {
      return weighted_sum(t, embedding_lookup(v[0], many));
    });
    CHECK(err < 1e-6);
  }

  TEST_CASE("row selection ops") {
    Rng rng(11);
    const std::vector<double> mask{1, 0, 1};
    std::vector<Tensor> leaves{random_tensor({3, 2}, rng), random_tensor({3, 2}, rng),
                               random_tensor({5, 2}, rng)};
    const double err = worst_leaf_error(leaves, [&](Tape& t, const std::vector<Var>& v) {
      const Var picked = where_rows(mask, v[0], v[1]);
      const Var weighted = scale_rows(picked, std::vector<double>{0.5, 2.0, -1.0});
      return add(weighted_sum(t, weighted), weighted_sum(t, slice_rows(v[2], 1, 3)));
    });
    CHECK(err < 1e-6);
    Tape tape;
    const Var on = tape.constant(Tensor::matrix({{1}, {2}, {3}}));
    const Var off = tape.constant(Tensor::matrix({{7}, {8}, {9}}));
    CHECK(where_rows(mask, on, off).value() == Tensor::matrix({{1}, {8}, {3}}));
    CHECK_THROWS_AS(slice_rows(on, 2, 2), DimensionError);
  }
}

TEST_SUITE("tape") {
  TEST_CASE("sum of parameter gives all-ones gradient") {
    Parameter w("w", Tensor({2, 3}, 0.7));
    Tape tape;
    tape.backward(sum_of(tape.param(w)));
    for (double g : w.grad.values()) CHECK(g == 1.0);
  }

  TEST_CASE("zero-scaled loss gives zero gradient; unreachable parameters stay zero") {
    Parameter w("w", Tensor({2}, 3.0));
    Parameter unused("u", Tensor({2}, 1.0));
    Tape tape;
    tape.param(unused);
    tape.backward(sum(scale(tape.param(w), 0.0)));
    for (double g : w.grad.values()) CHECK(g == 0.0);
    for (double g : unused.grad.values()) CHECK(g == 0.0);
  }

  TEST_CASE("non-scalar loss is rejected") {
    Tape tape;
    const Var v = tape.leaf(Tensor({2}));
    CHECK_THROWS_AS(tape.backward(v), ContractError);
  }

  TEST_CASE("second backward on one tape is rejected") {
    Parameter w("w", Tensor({2}, 1.0));
    Tape tape;
    const Var loss = sum(tape.param(w));
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), ContractError);
    CHECK(w.grad[0] == 1.0);
  }

  TEST_CASE("gradients accumulate across tapes until zeroed") {
    Parameter w("w", Tensor({1}, 1.0));
    for (int i = 0; i < 2; ++i) {
      Tape tape;
      tape.backward(sum(tape.param(w)));
    }
    CHECK(w.grad[0] == 2.0);
    w.zero_grad();
    Tape tape;
    tape.backward(sum(tape.param(w)));
    CHECK(w.grad[0] == 1.0);
  }

  TEST_CASE("forward values stay finite on finite inputs") {
    Rng rng(12);
    Tape tape;
    const Var x = tape.constant(random_tensor({4, 6}, rng, -50, 50));
    const Var y = softmax(tanh(add(sigmoid(x), x)));
    for (double v : y.value().values()) CHECK(std::isfinite(v));
  }
}
