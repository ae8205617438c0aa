#include <cmath>
#include <random>

#include "alnmt/optim.hpp"
#include "alnmt/tape.hpp"
#include "alnmt/tensor.hpp"
#include "doctest.h"

using namespace alnmt;
using TD = Tensor<double>;

namespace {

TD random_tensor(std::mt19937_64& g, std::size_t r, std::size_t c) {
  std::uniform_real_distribution<double> u(-1, 1);
  TD t(r, c);
  for (auto& v : t.values()) v = u(g);
  return t;
}

/// Gradient check of sum(w ∘ f(p)) for a single parameter p, with a fixed
/// random weighting w so every output element matters.
double primitive_check(Parameter<double>& p, const std::function<Var<double>(Tape<double>&, Var<double>)>& f) {
  std::mt19937_64 g(3);
  TD weights;
  auto loss = [&](Tape<double>& tape) {
    Var<double> out = f(tape, tape.parameter(p));
    if (weights.size() != out.value().size()) weights = random_tensor(g, out.value().rows(), out.value().cols());
    return ops::sum(ops::mul(out, tape.constant(weights)));
  };
  std::vector<Parameter<double>*> ps{&p};
  return check_gradients(loss, ps).max_relative_error;
}

}  // namespace

TEST_CASE("matmul of a 2x2 example") {
  auto a = TD::from_rows({{1, 2}, {3, 4}});
  auto b = TD::from_rows({{5, 6}, {7, 8}});
  auto c = kernels::matmul(a, b);
  CHECK(c(0, 0) == 19);
  CHECK(c(0, 1) == 22);
  CHECK(c(1, 0) == 43);
  CHECK(c(1, 1) == 50);
}

TEST_CASE("shape mismatch is a contract violation") {
  TD a(2, 3), b(2, 3);
  CHECK_THROWS_AS(kernels::matmul(a, b), ContractError);
}

TEST_CASE("softmax of equal logits is uniform, sums to one and ignores shifts") {
  TD x = TD::from_rows({{0, 0, 0, 0}});
  kernels::softmax_rows(x);
  for (auto v : x.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));

  std::mt19937_64 g(1);
  TD y = random_tensor(g, 3, 7);
  TD shifted = y;
  for (auto& v : shifted.values()) v += 123.5;
  kernels::softmax_rows(y);
  kernels::softmax_rows(shifted);
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0;
    for (auto v : y.row(r)) s += v;
    CHECK(std::abs(s - 1) < 1e-6);
  }
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y[i] - shifted[i]) < 1e-12);
}

TEST_CASE("softmax survives huge logits") {
  TD x = TD::from_rows({{1e300, 0, -1e300}});
  kernels::softmax_rows(x);
  CHECK(x[0] == 1.0);
  CHECK(std::isfinite(x[1]));
}

TEST_CASE("layer norm of a constant row is zero") {
  Tape<double> tape;
  Var<double> x = tape.constant(TD::from_rows({{5, 5, 5, 5}}));
  Var<double> gain = tape.constant(TD(1, 4, 1.0));
  Var<double> bias = tape.constant(TD(1, 4, 0.0));
  auto y = ops::layer_norm(x, gain, bias, 1e-6);
  for (auto v : y.value().values()) CHECK(v == 0.0);
}

TEST_CASE("masked positions get no attention weight") {
  Tape<double> tape;
  Var<double> x = tape.constant(TD::from_rows({{1, 2, 3}}));
  auto y = ops::rowwise_softmax(ops::masked_fill(x, {false, true, false}));
  CHECK(y.value()[1] == 0.0);
  CHECK(std::isfinite(y.value()[0]));
  CHECK(y.value()[0] + y.value()[2] == doctest::Approx(1.0));
}

TEST_CASE("backward: d(x*x)/dx = 2x, constants give zero gradients") {
  Parameter<double> x("x", TD::from_rows({{3}}));
  {
    Tape<double> tape;
    Var<double> v = tape.parameter(x);
    tape.backward(ops::sum(ops::mul(v, v)));
  }
  CHECK(x.grad[0] == 6.0);

  Parameter<double> unused("u", TD::from_rows({{1, 2}}));
  Tape<double> tape;
  tape.parameter(unused);
  tape.backward(tape.constant(TD::scalar(4.0)));
  for (auto g : unused.grad.values()) CHECK(g == 0.0);
}

TEST_CASE("backward on a non-scalar is rejected") {
  Tape<double> tape;
  Var<double> v = tape.constant(TD(2, 2, 1.0));
  CHECK_THROWS_AS(tape.backward(v), ContractError);
}

TEST_CASE("every primitive passes the finite-difference check") {
  std::mt19937_64 g(11);
  const double tol = 1e-3;
  Parameter<double> a("a", random_tensor(g, 3, 4));
  TD other = random_tensor(g, 4, 2);
  TD same = random_tensor(g, 3, 4);
  TD row = random_tensor(g, 1, 4);

  CHECK(primitive_check(a, [&](Tape<double>& t, Var<double> p) { return ops::matmul(p, t.constant(other)); }) < tol);
  CHECK(primitive_check(a, [&](Tape<double>& t, Var<double> p) { return ops::matmul_nt(t.constant(same), p); }) < tol);
  CHECK(primitive_check(a, [&](Tape<double>&, Var<double> p) { return ops::transpose(p); }) < tol);
  CHECK(primitive_check(a, [&](Tape<double>& t, Var<double> p) { return ops::add(p, t.constant(same)); }) < tol);
  CHECK(primitive_check(a, [&](Tape<double>& t, Var<double> p) { return ops::mul(p, t.constant(same)); }) < tol);
  CHECK(primitive_check(a, [&](Tape<double>&, Var<double> p) { return ops::scale(p, 0.37); }) < tol);
  CHECK(primitive_check(a, [&](Tape<double>&, Var<double> p) { return ops::rowwise_softmax(p); }) < tol);
  CHECK(primitive_check(a, [&](Tape<double>& t, Var<double> p) {
          return ops::layer_norm(p, t.constant(row), t.constant(TD(1, 4, 0.1)), 1e-6);
        }) < tol);
  CHECK(primitive_check(a, [&](Tape<double>&, Var<double> p) { return ops::relu(p); }) < tol);
  CHECK(primitive_check(a, [&](Tape<double>& t, Var<double> p) {
          std::vector<Var<double>> parts{p, t.constant(same), p};
          return ops::concat<double>(std::span<const Var<double>>(parts));
        }) < tol);
  CHECK(primitive_check(a, [&](Tape<double>&, Var<double> p) {
          std::vector<bool> mask(12, false);
          mask[1] = mask[7] = true;
          return ops::rowwise_softmax(ops::masked_fill(p, mask));
        }) < tol);

  Parameter<double> emb("emb", random_tensor(g, 5, 4));
  const std::vector<int> ids{3, 0, 3, 4};
  CHECK(primitive_check(emb, [&](Tape<double>&, Var<double> p) { return ops::embedding_lookup(p, ids); }) < tol);

  Parameter<double> gain("gain", random_tensor(g, 1, 4));
  CHECK(primitive_check(gain, [&](Tape<double>& t, Var<double> p) {
          return ops::layer_norm(t.constant(same), p, t.constant(row), 1e-6);
        }) < tol);

  Parameter<double> bias("bias", random_tensor(g, 1, 4));
  CHECK(primitive_check(bias, [&](Tape<double>& t, Var<double> p) { return ops::add_row(t.constant(same), p); }) < tol);

  Parameter<double> logits("logits", random_tensor(g, 3, 6));
  const std::vector<int> gold{1, 5, 2};
  CHECK(primitive_check(logits, [&](Tape<double>&, Var<double> p) {
          return ops::smoothed_cross_entropy(p, std::span<const int>(gold), 0.1, 3.0);
        }) < tol);
}

TEST_CASE("smoothed cross entropy matches the direct formula") {
  std::mt19937_64 g(5);
  TD logits = random_tensor(g, 4, 5);
  const std::vector<int> gold{0, 4, 2, 2};
  const double eps = 0.1, norm = 7.0;
  Tape<double> tape;
  double got = ops::smoothed_cross_entropy(tape.constant(logits), std::span<const int>(gold), eps, norm).value()[0];
  double want = 0;
  for (std::size_t r = 0; r < 4; ++r) {
    double z = 0;
    for (std::size_t c = 0; c < 5; ++c) z += std::exp(logits(r, c));
    for (std::size_t c = 0; c < 5; ++c) {
      const double q = (1 - eps) * (static_cast<int>(c) == gold[r]) + eps / 5;
      want -= q * (logits(r, c) - std::log(z));
    }
  }
  CHECK(std::abs(got - want / norm) < 1e-12);
}

TEST_CASE("adam: zero gradient leaves parameters, first step moves by about lr") {
  Adam<double> adam;
  Parameter<double> p("p", TD::from_rows({{1.0, -2.0}}));
  std::vector<Parameter<double>*> ps{&p};
  adam.step(ps, 1, 0.1);
  CHECK(p.value[0] == 1.0);
  CHECK(p.value[1] == -2.0);

  Adam<double> fresh;
  Parameter<double> q("q", TD::from_rows({{0.0}}));
  q.grad[0] = 1.0;
  std::vector<Parameter<double>*> qs{&q};
  fresh.step(qs, 1, 0.1);
  CHECK(q.value[0] == doctest::Approx(-0.1).epsilon(1e-6));
}

TEST_CASE("adam: moments decay under zero gradient") {
  Adam<double> adam;
  Parameter<double> p("p", TD::from_rows({{0.0}}));
  std::vector<Parameter<double>*> ps{&p};
  p.grad[0] = 1.0;
  adam.step(ps, 1, 0.01);
  const double m1 = adam.first_moments()[0][0];
  p.grad[0] = 0.0;
  adam.step(ps, 2, 0.01);
  CHECK(adam.first_moments()[0][0] == doctest::Approx(0.9 * m1));
}

TEST_CASE("adam descends a convex quadratic") {
  Adam<double> adam;
  Parameter<double> p("p", TD::from_rows({{3.0, -4.0, 2.5}}));
  const std::vector<double> target{0.5, 1.0, -1.0};
  std::vector<Parameter<double>*> ps{&p};
  auto loss = [&] {
    double s = 0;
    for (std::size_t i = 0; i < 3; ++i) s += (p.value[i] - target[i]) * (p.value[i] - target[i]);
    return s;
  };
  const std::int64_t warmup = 10;
  double prev = loss();
  for (std::int64_t t = 1; t <= 400; ++t) {
    for (std::size_t i = 0; i < 3; ++i) p.grad[i] = 2 * (p.value[i] - target[i]);
    const double lr = 0.05 * std::min<double>(1.0, static_cast<double>(t) / warmup);
    adam.step(ps, t, lr);
    const double now = loss();
    if (t > warmup && t <= 60) CHECK(now < prev);
    prev = now;
  }
  CHECK(prev < 0.05);
}
