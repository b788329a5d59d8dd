#include <cmath>
#include <random>

#include "doctest.h"
#include "lscm/autodiff.hpp"
#include "lscm/errors.hpp"
#include "lscm/scm.hpp"

using namespace lscm;
using ad::ParamStore;
using ad::ParamVars;
using ad::Tape;
using ad::Var;

namespace {

Matrix randn(std::size_t r, std::size_t c, std::mt19937_64& rng, double s = 1.0) {
  std::normal_distribution<double> g(0.0, s);
  Matrix m(r, c);
  for (auto& v : m.flat()) v = g(rng);
  return m;
}

void check_program(const ad::LossProgram& f, const ParamStore& p, double tol = 1e-6) {
  const auto rep = ad::check_gradients(f, p, 1e-5, tol);
  CAPTURE(rep.worst_param);
  CAPTURE(rep.worst_index);
  CAPTURE(rep.analytic);
  CAPTURE(rep.numeric);
  CHECK(rep.passed);
  CHECK(rep.max_rel_error < tol);
}

}  // namespace

TEST_CASE("half squared norm has gradient p") {
  std::mt19937_64 rng(1);
  ParamStore p;
  p.add("p", randn(3, 4, rng));
  auto f = [](Tape&, const ParamVars& v) { return ad::scale(ad::sum_squares(v["p"]), 0.5); };
  const auto e = ad::grad(f, p);
  CHECK(max_abs_diff(e.grads.at("p"), p.at("p")) < 1e-15);
}

TEST_CASE("quadratic form gradient is 2Ap") {
  std::mt19937_64 rng(2);
  Matrix a = randn(5, 5, rng);
  a = (a + a.transposed()) * 0.5;
  ParamStore p;
  p.add("p", randn(5, 1, rng));
  auto f = [&a](Tape& t, const ParamVars& v) {
    const Var pv = v["p"];
    return ad::sum(ad::mul(pv, ad::matmul(t.constant(a), pv)));
  };
  const auto e = ad::grad(f, p);
  const Matrix expect = matmul(a, p.at("p")) * 2.0;
  CHECK(max_abs_diff(e.grads.at("p"), expect) < 1e-12);
  const auto rep = ad::check_gradients(f, p, 1e-5, 1e-6);
  CHECK(rep.passed);
}

TEST_CASE("linear loss: finite differences are essentially exact") {
  std::mt19937_64 rng(3);
  const Matrix c = randn(4, 3, rng);
  ParamStore p;
  p.add("x", randn(4, 3, rng));
  auto f = [&c](Tape& t, const ParamVars& v) { return ad::sum(ad::mul(v["x"], t.constant(c))); };
  const auto rep = ad::check_gradients(f, p, 1e-3, 1e-8);
  CHECK(rep.max_rel_error < 1e-8);
}

TEST_CASE("corrupted gradient fails the check") {
  std::mt19937_64 rng(4);
  ParamStore p;
  p.add("x", randn(2, 3, rng));
  auto f = [](Tape&, const ParamVars& v) { return ad::sum(ad::tanh(v["x"])); };
  auto g = ad::grad(f, p).grads;
  g.at("x")[4] += 0.1;
  const auto rep = ad::check_gradients(f, p, 1e-5, 1e-4, {}, &g);
  CHECK_FALSE(rep.passed);
  CHECK(rep.worst_param == "x");
  CHECK(rep.worst_index == 4);
}

TEST_CASE("every op passes a finite-difference check") {
  std::mt19937_64 rng(5);
  ParamStore p;
  p.add("a", randn(3, 4, rng));
  p.add("b", randn(3, 4, rng));
  p.add("m", randn(4, 2, rng));
  p.add("s", randn(1, 1, rng));
  p.add("row", randn(1, 4, rng));
  p.add("pos", Matrix{{0.5, 1.5, 2.5}, {0.7, 0.9, 3.0}});
  p.add("q", randn(1, 3, rng));

  SUBCASE("arithmetic") {
    check_program([](Tape&, const ParamVars& v) {
      return ad::sum(ad::add(v["a"], v["b"]) * ad::sub(v["a"], v["b"]) + ad::neg(v["a"]));
    }, p);
    check_program([](Tape&, const ParamVars& v) {
      return ad::sum(ad::mul(v["a"], v["s"]) + ad::add(v["s"], v["b"]) - ad::sub(v["s"], v["a"]));
    }, p);
    check_program([](Tape&, const ParamVars& v) {
      return ad::sum(ad::add_scalar(ad::scale(ad::square(v["a"]), 0.3), 2.0));
    }, p);
    check_program([](Tape&, const ParamVars& v) { return ad::sum(ad::add_row(v["a"], v["row"])); }, p);
  }
  SUBCASE("matrix ops") {
    check_program([](Tape&, const ParamVars& v) {
      return ad::sum_squares(ad::matmul(v["a"], v["m"]));
    }, p);
    check_program([](Tape&, const ParamVars& v) {
      return ad::sum_squares(ad::matmul(ad::transpose(v["m"]), ad::transpose(v["a"])));
    }, p);
    check_program([](Tape&, const ParamVars& v) {
      return ad::sum_squares(ad::reshape(v["a"], 2, 6) * ad::reshape(v["b"], 2, 6));
    }, p);
    check_program([](Tape&, const ParamVars& v) {
      return ad::dot(ad::slice(v["a"], 2, 5), ad::slice(v["b"], 6, 5));
    }, p);
    check_program([](Tape&, const ParamVars& v) {
      return ad::sum_squares(ad::matmul(ad::scatter_strict_lower(v["q"], 3), ad::reshape(ad::slice(v["b"], 0, 6), 3, 2)));
    }, p);
    const Matrix target(3, 4, 0.25);
    check_program([&target](Tape&, const ParamVars& v) { return ad::sq_error_sum(v["a"], target); }, p);
  }
  SUBCASE("transcendental") {
    check_program([](Tape&, const ParamVars& v) { return ad::sum(ad::exp(ad::scale(v["a"], 0.5))); }, p);
    check_program([](Tape&, const ParamVars& v) { return ad::sum(ad::log(v["pos"])); }, p);
    check_program([](Tape&, const ParamVars& v) { return ad::sum_squares(ad::tanh(v["a"])); }, p);
    check_program([](Tape&, const ParamVars& v) { return ad::sum_squares(ad::logistic(v["a"])); }, p);
    check_program([](Tape&, const ParamVars& v) {
      return ad::sum(ad::log_horseshoe_kernel(v["a"], 0.45, 1e-10));
    }, p);
  }
  SUBCASE("normalisation") {
    check_program([](Tape&, const ParamVars& v) { return ad::sum_squares(ad::logsumexp_rows(v["a"])); }, p);
    check_program([](Tape&, const ParamVars& v) {
      return ad::sum_squares(ad::exp(ad::log_normalize_rows(v["a"])) * v["b"]);
    }, p);
    check_program([](Tape&, const ParamVars& v) {
      return ad::sum_squares(ad::exp(ad::log_normalize_cols(v["a"])) * v["b"]);
    }, p);
  }
}

TEST_CASE("stop_gradient and straight_through") {
  std::mt19937_64 rng(6);
  ParamStore p;
  p.add("a", randn(2, 2, rng));
  auto f = [](Tape&, const ParamVars& v) { return ad::sum(ad::mul(ad::stop_gradient(v["a"]), v["a"])); };
  const auto e = ad::grad(f, p);
  CHECK(max_abs_diff(e.grads.at("a"), p.at("a")) < 1e-15);

  const Matrix hard{{0, 1}, {1, 0}};
  auto g = [&hard](Tape& t, const ParamVars& v) {
    const Var st = ad::straight_through(v["a"], hard);
    CHECK(t.value(st) == hard);
    return ad::sum(ad::mul(st, t.constant(Matrix{{1, 2}, {3, 4}})));
  };
  const auto eg = ad::grad(g, p);
  CHECK(eg.value == 5.0);
  CHECK(eg.grads.at("a") == Matrix{{1, 2}, {3, 4}});
}

TEST_CASE("ancestral_sample op: value and gradient") {
  std::mt19937_64 rng(7);
  const std::size_t d = 3, n = 5;
  Matrix w(d, d);
  w(0, 1) = 0.7;
  w(1, 2) = -1.1;
  w(0, 2) = 0.4;
  const Matrix noise = randn(n, d, rng);
  Matrix masks(n, d), values(n, d);
  masks(1, 1) = 1;
  values(1, 1) = 2.5;
  masks(3, 0) = 1;
  masks(3, 2) = 1;
  values(3, 0) = -1.0;
  values(3, 2) = 0.5;

  Tape t;
  const Var wv = t.constant(w);
  const Var ls = t.constant(Matrix{{-0.5}});
  for (const Matrix* clamp : {static_cast<const Matrix*>(nullptr), static_cast<const Matrix*>(&values)}) {
    const Var z = ad::ancestral_sample(wv, ls, noise, masks, clamp);
    const Matrix ref = scm::ancestral_sample_rows(w, {-0.5}, noise, masks, clamp);
    CHECK(max_abs_diff(t.value(z), ref) < 1e-14);
  }

  ParamStore p;
  p.add("w_free", Matrix{{0.7, 0.4, -1.1}});
  p.add("ls", Matrix{{-0.5}});
  // upper triangle of w through a scatter of the transposed lower form
  auto f = [&](Tape& tp, const ParamVars& v) {
    const Var l = ad::scatter_strict_lower(v["w_free"], d);
    const Var z = ad::ancestral_sample(ad::transpose(l), v["ls"], noise, masks, &values);
    return ad::sum_squares(ad::add_scalar(z, 0.3)) + ad::sum(tp.constant(Matrix{{0.0}}));
  };
  check_program(f, p);
}

TEST_CASE("record refuses a differentiable node without an adjoint") {
  Tape t;
  const Var x = t.variable(Matrix{{1.0}});
  CHECK_THROWS(t.record(Matrix{{2.0}}, {x}, nullptr));
  const Var c = t.constant(Matrix{{1.0}});
  CHECK_NOTHROW(t.record(Matrix{{2.0}}, {c}, nullptr));
}

TEST_CASE("shape errors are reported") {
  Tape t;
  const Var a = t.constant(Matrix(2, 3));
  const Var b = t.constant(Matrix(3, 2));
  CHECK_THROWS_AS(ad::add(a, b), ArgumentError);
  CHECK_THROWS_AS(ad::matmul(a, a), ArgumentError);
  CHECK_THROWS_AS(ad::slice(a, 4, 3), ArgumentError);
}

TEST_CASE("adam: zero gradients leave parameters unchanged") {
  ParamStore p;
  p.add("x", Matrix{{1.0, -2.0}});
  auto st = ad::adam_init(p);
  const auto g = p.zeros_like();
  ad::adam_step(p, g, st, 0.1);
  CHECK(p.at("x") == Matrix{{1.0, -2.0}});
  CHECK(st.step == 1);
}

TEST_CASE("adam: constant gradient moves monotonically against it") {
  ParamStore p;
  p.add("x", Matrix{{0.0, 0.0}});
  auto st = ad::adam_init(p);
  ParamStore g;
  g.add("x", Matrix{{1.0, -3.0}});
  double prev0 = 0.0, prev1 = 0.0;
  for (int i = 0; i < 100; ++i) {
    ad::adam_step(p, g, st, 0.01);
    CHECK(p.at("x")[0] < prev0);
    CHECK(p.at("x")[1] > prev1);
    prev0 = p.at("x")[0];
    prev1 = p.at("x")[1];
  }
  // first step of Adam is -lr * sign(g)
  ParamStore q;
  q.add("x", Matrix{{0.0}});
  auto sq = ad::adam_init(q);
  ParamStore gq;
  gq.add("x", Matrix{{5.0}});
  ad::adam_step(q, gq, sq, 0.01);
  CHECK(q.at("x")[0] == doctest::Approx(-0.01).epsilon(1e-6));
  ad::adam_step(q, gq, sq, 0.01, ad::Direction::ascend);
  CHECK(q.at("x")[0] == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("adam on a quadratic bowl at the training learning rate") {
  std::mt19937_64 rng(9);
  ParamStore p;
  p.add("x", randn(1, 6, rng, 0.5));
  const Matrix centre = randn(1, 6, rng, 0.1);
  auto f = [&centre](Tape&, const ParamVars& v) { return ad::sq_error_sum(v["x"], centre); };
  const double initial = ad::evaluate(f, p);
  auto st = ad::adam_init(p);
  for (int i = 0; i < 5000; ++i) ad::adam_step(p, ad::grad(f, p).grads, st, 0.0008);
  CHECK(ad::evaluate(f, p) < 1e-3 * initial);
}

TEST_CASE("adam rejects non-finite gradients without touching state") {
  ParamStore p;
  p.add("x", Matrix{{1.0, 2.0}});
  auto st = ad::adam_init(p);
  ParamStore g;
  g.add("x", Matrix{{0.1, std::nan("")}});
  CHECK_THROWS_AS(ad::adam_step(p, g, st, 0.1), NumericalError);
  CHECK(p.at("x") == Matrix{{1.0, 2.0}});
  CHECK(st.step == 0);
}

TEST_CASE("param store layout") {
  ParamStore a;
  a.add("x", Matrix(2, 2));
  a.add("y", Matrix(1, 3));
  CHECK(a.total_size() == 7);
  CHECK(a.same_layout(a.zeros_like()));
  CHECK_THROWS(a.add("x", Matrix(1, 1)));
  CHECK_THROWS(a.at("nope"));
  ParamStore b;
  b.add("x", Matrix(2, 2));
  CHECK_FALSE(a.same_layout(b));
}
