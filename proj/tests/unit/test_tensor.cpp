#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "padrec/autograd.hpp"
#include "padrec/grad_check.hpp"
#include "padrec/optim.hpp"

using namespace padrec;
using padrec::test::random_tensor;

TEST_CASE("tensor shape checks") {
  CHECK(shape_size({2, 3, 4}) == 24);
  CHECK(shape_size({}) == 1);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), std::invalid_argument);
  Tensor s = Tensor::scalar(3.5);
  CHECK(s.rows() == 1);
  CHECK(s.cols() == 1);
  CHECK(s.item() == 3.5);
  Tensor r3({2, 2, 2});
  CHECK_THROWS_AS(r3.rows(), std::invalid_argument);
  CHECK(Tensor({4}).rows() == 1);
  CHECK(Tensor({4}).cols() == 4);
}

TEST_CASE("checksum tracks bytes") {
  Tensor a = random_tensor({3, 4}, 1);
  Tensor b = a;
  CHECK(checksum(a) == checksum(b));
  b[5] = std::nextafter(b[5], 10.0);
  CHECK(checksum(a) != checksum(b));
}

TEST_CASE("forward op hand examples") {
  Tape tape;
  CHECK(sigmoid(tape.constant(Tensor::scalar(0.0))).value().item() == 0.5);

  Tensor eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  Tensor a = random_tensor({3, 5}, 2);
  CHECK(matmul(tape.constant(eye), tape.constant(a)).value() == a);

  Var sm = softmax_rows(tape.constant(Tensor::matrix(1, 3, {1, 1, 1})));
  for (double v : sm.value().values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  Var ln = layernorm_rows(tape.constant(Tensor::matrix(1, 4, {1, 2, 3, 4})), 0.0);
  double mu = 0, var = 0;
  for (double v : ln.value().values()) mu += v / 4;
  for (double v : ln.value().values()) var += (v - mu) * (v - mu) / 4;
  CHECK(mu == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(var == doctest::Approx(1.0).epsilon(1e-12));

  Var g = gather_rows(tape.constant(Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6})), std::vector<std::size_t>{2, 0, 2});
  CHECK(g.value() == Tensor::matrix(3, 2, {5, 6, 1, 2, 5, 6}));

  std::array<Var, 2> parts{tape.constant(Tensor::matrix(2, 1, {1, 2})), tape.constant(Tensor::matrix(2, 2, {3, 4, 5, 6}))};
  CHECK(concat_cols(parts).value() == Tensor::matrix(2, 3, {1, 3, 4, 2, 5, 6}));

  Var x = tape.constant(Tensor::matrix(2, 2, {1, -2, 3, -4}));
  CHECK(squared_l2_norm(x).value().item() == 30.0);
  CHECK(l1_norm(x).value().item() == 10.0);
  CHECK(sum(x).value().item() == -2.0);
  CHECK(mean(x).value().item() == -0.5);
  CHECK(transpose(x).value() == Tensor::matrix(2, 2, {1, 3, -2, -4}));
  CHECK(relu(x).value() == Tensor::matrix(2, 2, {1, 0, 3, 0}));
  CHECK(sum_rows(x).value() == Tensor::matrix(1, 2, {4, -6}));
  CHECK(sum_cols(x).value() == Tensor::matrix(2, 1, {-1, -1}));
}

TEST_CASE("forward op errors name the op") {
  Tape tape;
  Var a = tape.constant(Tensor({2, 3}));
  Var b = tape.constant(Tensor({2, 3}));
  try {
    matmul(a, b);
    FAIL("matmul accepted mismatched shapes");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("matmul") != std::string::npos);
    CHECK(std::string(e.what()).find("[2, 3]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, tape.constant(Tensor({3, 2}))), std::invalid_argument);
  CHECK_THROWS_AS(log(tape.constant(Tensor::matrix(1, 2, {1.0, 0.0}))), std::domain_error);
  CHECK_THROWS_AS(log(tape.constant(Tensor::matrix(1, 1, {-1.0}))), std::domain_error);
  CHECK_THROWS_AS(gather_rows(a, std::vector<std::size_t>{2}), std::out_of_range);
  CHECK_THROWS_AS(normalize_rows(tape.constant(Tensor({2, 2}))), std::domain_error);
  CHECK_THROWS_AS(dropout(a, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(softmax_rows(tape.constant(Tensor({2, 0}))), std::invalid_argument);
}

TEST_CASE("backward hand examples") {
  Parameter x("x", Tensor::matrix(1, 3, {0.3, -1.0, 2.0}));
  Tape tape;
  tape.backward(sum(tape.param(x)));
  CHECK(x.grad == Tensor::matrix(1, 3, {1, 1, 1}));

  Parameter w("w", Tensor::scalar(0.0));
  Tape t2;
  t2.backward(sigmoid(t2.param(w)));
  CHECK(w.grad.item() == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("backward errors") {
  Tape tape;
  Parameter p("p", Tensor::matrix(1, 2, {1, 2}));
  Var v = tape.param(p);
  CHECK_THROWS_AS(tape.backward(v), std::invalid_argument);
  Tape other;
  Var foreign = sum(other.param(p));
  CHECK_THROWS_AS(tape.backward(foreign), std::invalid_argument);
  CHECK_THROWS_AS(tape.backward(Var{}), std::invalid_argument);
}

TEST_CASE("fresh pass gradients do not depend on earlier passes") {
  Parameter p("p", random_tensor({3, 3}, 4));
  auto run = [&] {
    Tape tape;
    Var y = tanh(matmul(tape.param(p), tape.param(p)));
    tape.backward(sum(mul(y, y)));
  };
  p.zero_grad();
  run();
  const Tensor first = p.grad;
  for (int i = 0; i < 3; ++i) run();  // accumulate garbage
  p.zero_grad();
  run();
  CHECK(p.grad == first);
}

TEST_CASE("backward linearity") {
  Parameter p("p", random_tensor({4, 3}, 5));
  auto l1 = [](Tape& t, Var x) { return sum(exp(scale(x, 0.3))); };
  auto l2 = [](Tape& t, Var x) { return squared_l2_norm(tanh(x)); };
  auto grad_of = [&](auto build) {
    p.zero_grad();
    Tape t;
    t.backward(build(t, t.param(p)));
    return p.grad;
  };
  const Tensor g1 = grad_of(l1), g2 = grad_of(l2);
  const double a = 0.7, b = -1.3;
  const Tensor g = grad_of([&](Tape& t, Var x) { return add(scale(l1(t, x), a), scale(l2(t, x), b)); });
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(std::abs(g[i] - (a * g1[i] + b * g2[i])) <= 1e-12);
}

TEST_CASE("stop gradient and frozen parameters") {
  Parameter frozen("text", random_tensor({3, 2}, 6), /*train=*/false);
  Parameter w("w", random_tensor({2, 2}, 7));
  const auto before = checksum(frozen.value);
  frozen.zero_grad();
  w.zero_grad();
  Tape tape;
  Var y = matmul(stop_gradient(tape.param(frozen)), tape.param(w));
  tape.backward(sum(mul(y, y)));
  for (double g : frozen.grad.values()) CHECK(g == 0.0);
  AdamW opt;
  std::vector<Parameter*> params{&frozen, &w};
  opt.step(params);
  CHECK(checksum(frozen.value) == before);
}

TEST_CASE("dropout identities") {
  Tensor x = random_tensor({5, 4}, 8);
  Tape train(true, 11);
  CHECK(dropout(train.constant(x), 0.0).value() == x);
  Tape eval(false, 11);
  CHECK(dropout(eval.constant(x), 0.5).value() == x);
  Tape t1(true, 3), t2(true, 3);
  CHECK(dropout(t1.constant(x), 0.4).value() == dropout(t2.constant(x), 0.4).value());
  // inverted scaling: survivors are x / keep
  const Tensor y = dropout(t1.constant(x), 0.5).value();
  for (std::size_t i = 0; i < x.size(); ++i) CHECK((y[i] == 0.0 || y[i] == x[i] * 2.0));
}

TEST_CASE("adamw update rule") {
  SUBCASE("zero grad and zero decay leaves params unchanged") {
    Parameter p("p", Tensor::matrix(1, 3, {1, -2, 3}));
    p.zero_grad();
    AdamW opt({.lr = 1e-2, .weight_decay = 0.0});
    std::vector<Parameter*> ps{&p};
    opt.step(ps);
    CHECK(p.value == Tensor::matrix(1, 3, {1, -2, 3}));
  }
  SUBCASE("one step with beta1 = beta2 = 0") {
    Parameter p("p", Tensor::matrix(1, 2, {1.0, 1.0}));
    p.grad = Tensor::matrix(1, 2, {0.5, -2.0});
    AdamWOptions o{.lr = 0.01, .beta1 = 0.0, .beta2 = 0.0, .eps = 1e-8, .weight_decay = 0.0};
    AdamW opt(o);
    std::vector<Parameter*> ps{&p};
    opt.step(ps);
    CHECK(p.value[0] == doctest::Approx(1.0 - 0.01 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));
    CHECK(p.value[1] == doctest::Approx(1.0 + 0.01 * 2.0 / (2.0 + 1e-8)).epsilon(1e-14));
    CHECK(opt.steps() == 1);
  }
  SUBCASE("decoupled decay with zero grad") {
    Parameter p("p", Tensor::matrix(1, 2, {2.0, -4.0}));
    p.zero_grad();
    AdamW opt({.lr = 0.01, .weight_decay = 0.1});
    std::vector<Parameter*> ps{&p};
    for (int s = 0; s < 3; ++s) opt.step(ps);
    const double f = std::pow(1.0 - 0.01 * 0.1, 3);
    CHECK(p.value[0] == doctest::Approx(2.0 * f).epsilon(1e-14));
    CHECK(p.value[1] == doctest::Approx(-4.0 * f).epsilon(1e-14));
    CHECK(opt.steps() == 3);
  }
  SUBCASE("no-decay parameters only get the adaptive step") {
    Parameter p("p", Tensor::matrix(1, 1, {2.0}), true, false);
    p.zero_grad();
    AdamW opt({.lr = 0.01, .weight_decay = 0.1});
    std::vector<Parameter*> ps{&p};
    opt.step(ps);
    CHECK(p.value[0] == 2.0);
  }
  SUBCASE("missing gradient is an error") {
    Parameter p("p", Tensor::matrix(1, 2, {1, 2}));
    AdamW opt;
    std::vector<Parameter*> ps{&p};
    CHECK_THROWS_AS(opt.step(ps), std::invalid_argument);
  }
  SUBCASE("32-bit mode keeps values float representable") {
    Parameter p("p", random_tensor({2, 3}, 9));
    p.grad = random_tensor({2, 3}, 10);
    AdamW opt;
    opt.set_round_to_float(true);
    std::vector<Parameter*> ps{&p};
    opt.step(ps);
    for (double v : p.value.values()) CHECK(static_cast<double>(static_cast<float>(v)) == v);
  }
}

TEST_CASE("grad_check harness") {
  SUBCASE("quadratic is exact to rounding") {
    Parameter w("w", random_tensor({3, 4}, 12));
    std::vector<Parameter*> ps{&w};
    auto rep = grad_check([&](Tape& t) { return squared_l2_norm(t.param(w)); }, ps);
    CHECK(rep.passed);
    CHECK(rep.max_rel_error < 1e-9);
  }
  SUBCASE("every differentiable op passes") {
    Parameter a("a", random_tensor({4, 3}, 13, 0.7));
    Parameter b("b", random_tensor({3, 5}, 14, 0.7));
    Parameter r("r", random_tensor({1, 5}, 15, 0.7));
    Parameter c("c", random_tensor({4, 1}, 16, 0.7));
    std::vector<Parameter*> ps{&a, &b, &r, &c};
    auto rep = grad_check(
        [&](Tape& t) {
          Var x = matmul(t.param(a), t.param(b));
          x = add_row(x, t.param(r));
          x = mul_col(layernorm_rows(x), t.param(c));
          Var s = softmax_rows(mul_row(x, t.param(r)));
          Var l = log_softmax_rows(tanh(x));
          Var n = normalize_rows(add_scalar(x, 3.0));
          std::array<Var, 2> parts{sigmoid(x), n};
          Var cat = concat_cols(parts);
          Var total = add(sum(mul(s, l)), mean(slice_cols(cat, 2, 8)));
          total = add(total, scale(squared_l2_norm(transpose(relu(x))), 0.1));
          std::vector<std::size_t> ia{0, 0, 3}, ib{1, 2, 2};
          total = add(total, l1_norm(sub(gather_rows(x, ia), gather_rows(x, ib))));
          total = add(total, sum(exp(scale(sum_cols(x), 0.1))));
          total = add(total, sum(log(add_scalar(mul(x, x), 1.0))));
          total = add(total, sum(pairwise_sq_dist(x, tanh(x))));
          total = add(total, sum(pairwise_l1_dist(x, tanh(x))));
          std::array<Var, 2> rows{x, tanh(x)};
          total = add(total, sum(mean_cols(concat_rows(rows))));
          total = add(total, sum(sum_rows(x)));
          return total;
        },
        ps);
    for (const auto& e : rep.entries) INFO(e.name << " " << e.max_rel_error);
    CHECK(rep.max_rel_error < 1e-4);
  }
  SUBCASE("BCE on logits") {
    Parameter z("z", random_tensor({6, 1}, 17));
    std::vector<Parameter*> ps{&z};
    const Tensor y = Tensor::matrix(6, 1, {1, 0, 1, 1, 0, 0});
    auto rep = grad_check([&](Tape& t) { return bce_with_logits(t.param(z), y); }, ps);
    CHECK(rep.max_rel_error < 1e-4);
  }
  SUBCASE("a wrong derivative is caught") {
    Parameter w("w", random_tensor({2, 3}, 19));
    std::vector<Parameter*> ps{&w};
    // cube with derivative 2.9 x^2 instead of 3 x^2
    auto bad_cube = [](Var a) {
      Tensor y(a.value().shape());
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::pow(a.value()[i], 3);
      const std::size_t ia = a.id();
      return a.tape().record("bad_cube", std::move(y), {ia}, [ia](Tape& t, std::size_t self) {
        const Tensor& x = t.value(ia);
        Tensor& ga = t.grad_buffer(ia);
        for (std::size_t i = 0; i < x.size(); ++i) ga[i] += t.grad(self)[i] * 2.9 * x[i] * x[i];
      });
    };
    auto rep = grad_check([&](Tape& t) { return sum(bad_cube(t.param(w))); }, ps);
    CHECK_FALSE(rep.passed);
    CHECK(rep.max_rel_error > 1e-2);
  }
  SUBCASE("non-deterministic loss is rejected") {
    Parameter w("w", random_tensor({2, 2}, 18));
    std::vector<Parameter*> ps{&w};
    int calls = 0;
    CHECK_THROWS_AS(grad_check(
                        [&](Tape& t) {
                          ++calls;
                          return add_scalar(sum(t.param(w)), calls * 1e-3);
                        },
                        ps),
                    std::runtime_error);
  }
}

TEST_CASE("BCE of zero logits is ln 2") {
  Tape t;
  Var z = t.constant(Tensor({8, 1}));
  Tensor y({8, 1});
  for (std::size_t i = 0; i < 8; i += 2) y[i] = 1.0;
  CHECK(bce_with_logits(z, y).value().item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK_THROWS_AS(bce_with_logits(z, Tensor({8, 1}, 0.5)), std::domain_error);
}
