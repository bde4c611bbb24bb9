// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "hiertag/adam.hpp"
#include "hiertag/grad_check.hpp"
#include "hiertag/model.hpp"
#include "hiertag/training.hpp"
#include "test_util.hpp"

using namespace hiertag;
using hiertag::testing::random_batch;
using hiertag::testing::random_tensor;
using hiertag::testing::tiny_dims;

TEST_SUITE("adam") {
  TEST_CASE("zero gradient leaves parameters unchanged but advances the step") {
    Parameter w("w", Tensor::vector({1.0, -2.0}));
    std::vector<Parameter*> ps{&w};
    AdamState s = make_adam_state(ps);
    for (int i = 0; i < 3; ++i) adam_step(ps, s);
    CHECK(w.value == Tensor::vector({1.0, -2.0}));
    CHECK(s.step == 3);
  }

  TEST_CASE("first step moves each entry by about lr against the gradient sign") {
    Parameter w("w", Tensor::vector({0.0, 0.0, 0.0}));
    w.grad = Tensor::vector({0.3, -7.0, 1e-3});
    std::vector<Parameter*> ps{&w};
    AdamOptions o;
    o.learning_rate = 0.01;
    AdamState s = make_adam_state(ps, o);
    adam_step(ps, s);
    // t = 1: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps).
    for (std::size_t i = 0; i < 3; ++i) {
      const double g = w.grad[i];
      const double expected = -0.01 * g / (std::abs(g) + 1e-8);
      CHECK(w.value[i] == doctest::Approx(expected).epsilon(1e-12));
    }
  }

  TEST_CASE("constant gradient drives a scalar monotonically downhill") {
    Parameter w("w", Tensor::vector({0.0}));
    std::vector<Parameter*> ps{&w};
    AdamState s = make_adam_state(ps);
    // Independent scalar simulation of the recurrences.
    double m = 0.0, v = 0.0, x = 0.0;
    double prev = 0.0;
    for (int t = 1; t <= 200; ++t) {
      w.grad[0] = 2.0;
      adam_step(ps, s);
      m = 0.9 * m + 0.1 * 2.0;
      v = 0.999 * v + 0.001 * 4.0;
      const double mh = m / (1.0 - std::pow(0.9, t));
      const double vh = v / (1.0 - std::pow(0.999, t));
      x -= 1e-3 * mh / (std::sqrt(vh) + 1e-8);
      CHECK(w.value[0] < prev);
      CHECK(w.value[0] == doctest::Approx(x).epsilon(1e-12));
      prev = w.value[0];
    }
    CHECK(s.step == 200);
  }

  TEST_CASE("moments match parameter shapes and registration count is enforced") {
    Parameter a("a", Tensor({2, 3})), b("b", Tensor({4}));
    std::vector<Parameter*> ps{&a, &b};
    AdamState s = make_adam_state(ps);
    CHECK(s.first_moment[0].shape() == a.value.shape());
    CHECK(s.second_moment[1].shape() == b.value.shape());
    std::vector<Parameter*> fewer{&a};
    CHECK_THROWS_AS(adam_step(fewer, s), ContractError);
  }

  TEST_CASE("global norm clipping") {
    Parameter a("a", Tensor({2})), b("b", Tensor({1}));
    a.grad = Tensor::vector({3.0, 0.0});
    b.grad = Tensor::vector({4.0});
    std::vector<Parameter*> ps{&a, &b};
    CHECK(grad_norm(ps) == doctest::Approx(5.0));
    CHECK(clip_grad_norm(ps, 10.0) == doctest::Approx(5.0));
    CHECK(a.grad[0] == 3.0);
    CHECK(clip_grad_norm(ps, 1.0) == doctest::Approx(5.0));
    CHECK(grad_norm(ps) == doctest::Approx(1.0));
    CHECK(a.grad[0] == doctest::Approx(0.6));
  }
}

TEST_SUITE("gradient check") {
  TEST_CASE("relative error uses the floor for tiny gradients") {
    CHECK(relative_error(1.0, 1.0, 1e-6) == 0.0);
    CHECK(relative_error(2.0, 1.0, 1e-6) == doctest::Approx(0.5));
    CHECK(relative_error(1e-12, 0.0, 1e-6) == doctest::Approx(1e-6));
  }

  TEST_CASE("linear model is exact to machine precision") {
    Rng rng(1);
    Parameter w("w", random_tensor({5, 1}, rng));
    const Tensor x = random_tensor({1, 5}, rng);
    std::vector<Parameter*> ps{&w};
    const auto report = gradient_check(
        [&](Tape& t) { return sum(matmul(t.constant(x), t.param(w))); }, ps);
    CHECK(report.passed);
    CHECK(report.max_rel_error < 1e-9);
  }

  TEST_CASE("single GRU cell stays below 1e-5") {
    Rng rng(2);
    GruParams g;
    auto mk = [&](const char* n, Shape s) { return Parameter(n, random_tensor(std::move(s), rng, -1, 1)); };
    g.w_z = mk("w_z", {3, 4});
    g.w_r = mk("w_r", {3, 4});
    g.w_h = mk("w_h", {3, 4});
    g.u_z = mk("u_z", {4, 4});
    g.u_r = mk("u_r", {4, 4});
    g.u_h = mk("u_h", {4, 4});
    g.b_z = mk("b_z", {4});
    g.b_r = mk("b_r", {4});
    g.b_h = mk("b_h", {4});
    const Tensor x = random_tensor({2, 3}, rng);
    Parameter h("h_prev", random_tensor({2, 4}, rng, -1, 1));
    const Tensor w = random_tensor({2, 4}, rng);
    std::vector<Parameter*> ps;
    g.collect(ps);
    ps.push_back(&h);
    GradCheckOptions o;
    o.tolerance = 1e-5;
    const auto report = gradient_check(
        [&](Tape& t) {
          const Var out = gru_cell(t.constant(x), t.param(h), GruVars::bind(t, g));
          return sum(mul(out, t.constant(w)));
        },
        ps, o);
    CHECK(report.passed);
    CHECK(report.max_rel_error < 1e-5);
    CHECK(report.entries.size() == ps.size());
  }

  TEST_CASE("sampling caps entries per parameter deterministically") {
    Rng rng(3);
    Parameter big("big", random_tensor({20, 10}, rng));
    std::vector<Parameter*> ps{&big};
    auto closure = [&](Tape& t) { return sum(tanh(t.param(big))); };
    GradCheckOptions o;
    o.seed = 5;
    const auto a = gradient_check(closure, ps, o);
    const auto b = gradient_check(closure, ps, o);
    CHECK(a.entries[0].checked == 64);
    CHECK(a.entries[0].worst_index == b.entries[0].worst_index);
    CHECK(a.max_rel_error == b.max_rel_error);
  }

  TEST_CASE("a wrong backward rule is reported as a failure") {
    Parameter w("w", Tensor::vector({0.5, -0.3}));
    std::vector<Parameter*> ps{&w};
    // Loss whose recorded backward deliberately doubles the true gradient.
    auto closure = [&](Tape& t) {
      const Var p = t.param(w);
      const double v = p.value()[0] * p.value()[0] + p.value()[1];
      return t.record(Tensor::scalar(v), true, [p](Tape& tape, std::size_t self) {
        const double g = tape.grad_buffer(self)[0];
        Tensor& gp = tape.grad_buffer(p.id);
        gp[0] += g * 4.0 * p.value()[0];
        gp[1] += g;
      });
    };
    const auto report = gradient_check(closure, ps);
    CHECK_FALSE(report.passed);
    CHECK(report.entries[0].worst_index == 0);
  }

  TEST_CASE("full ETH graph at tiny dimensions stays below 1e-4") {
    Rng rng(4);
    const ModelDims d = tiny_dims();
    Model model = Model::init(Architecture::eth, d, 11);
    const Batch batch = random_batch({5, 3}, d.vocab, d.lm_vocab, d.n_pos, d.n_chunk, rng);
    auto params = model.parameters();
    const auto report = gradient_check(
        [&](Tape& t) { return combined_loss(task_loss(model.forward(t, batch), batch)); },
        params);
    CHECK(report.passed);
    CHECK(report.max_rel_error < 1e-4);
  }
}
