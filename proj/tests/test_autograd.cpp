#include <catch2/catch_amalgamated.hpp>

#include "normkit/autograd.hpp"
#include "normkit/grad_check.hpp"
#include "normkit/norm.hpp"
#include "normkit/ops.hpp"
#include "normkit/random.hpp"

using namespace normkit;

namespace {

Tensor<double> random_tensor(Rng& rng, Shape s) {
  return Tensor<double>::from_fn(s, [&](int64_t, int64_t, int64_t, int64_t) { return rng.normal(); });
}

}  // namespace

TEST_CASE("backward of a linear form gives the data") {
  Rng rng(1);
  auto xv = random_tensor(rng, Shape(1, 2, 2, 3));
  auto w = make_parameter(random_tensor(rng, Shape(1, 2, 2, 3)), "w");
  auto x = make_constant(xv);
  auto loss = sum_all(mul(w, x));
  auto grads = backward(loss, {w});
  CHECK(max_abs_diff(grads.at("w"), xv) == 0.0);
}

TEST_CASE("unreachable parameter receives zero gradient") {
  Rng rng(2);
  auto w = make_parameter(random_tensor(rng, Shape(1, 1, 1, 4)), "w");
  auto p = make_parameter(random_tensor(rng, Shape(1, 1, 1, 4)), "p");
  auto loss = sum_all(mul(w, w));
  auto grads = backward(loss, {w, p});
  CHECK(max_abs_diff(grads.at("p"), Tensor<double>::zeros(Shape(1, 1, 1, 4))) == 0.0);
}

TEST_CASE("non-scalar loss is rejected") {
  auto w = make_parameter(Tensor<double>::full(Shape(1, 1, 1, 2), 1.0), "w");
  CHECK_THROWS_AS(backward(mul(w, w)), ValueError);
}

TEST_CASE("sigmoid combiner gradient at rho=0") {
  // loss = sum(sigmoid(rho)*a + (1-sigmoid(rho))*b); d/drho = 0.25*sum(a-b).
  Rng rng(3);
  auto av = random_tensor(rng, Shape(1, 2, 2, 2));
  auto bv = random_tensor(rng, Shape(1, 2, 2, 2));
  auto rho = make_parameter(Tensor<double>::scalar(0.0), "rho");
  auto loss = sum_all(combine(make_constant(av), make_constant(bv), rho, CombinerKind::Sigmoid));
  auto grads = backward(loss, {rho});
  double expect = 0;
  for (int64_t i = 0; i < av.numel(); ++i) expect += av.at(i) - bv.at(i);
  expect *= 0.25;
  CHECK(grads.at("rho").at(0) == Catch::Approx(expect).margin(1e-12));
}

TEST_CASE("gradients accumulate across fan-out deterministically") {
  Rng rng(4);
  auto w = make_parameter(random_tensor(rng, Shape(1, 1, 2, 2)), "w");
  auto loss = add(sum_all(w), sum_all(w));
  auto grads = backward(loss, {w});
  CHECK(max_abs_diff(grads.at("w"), Tensor<double>::full(Shape(1, 1, 2, 2), 2.0)) == 0.0);

  // repeated backward passes do not accumulate and are bit-identical
  auto again = backward(loss, {w});
  CHECK(bit_equal(again.at("w"), grads.at("w")));
}

TEST_CASE("grad_check on sum of squares") {
  auto x = make_parameter(Tensor<double>(Shape(1, 1, 1, 3), {1, 2, 3}), "x");
  auto f = [&] { return sum_all(mul(x, x)); };
  auto report = grad_check(f, {x}, 1e-5, 1e-6);
  REQUIRE(report.all_pass);
  auto grads = backward(f(), {x});
  CHECK(grads.at("x").at(0) == Catch::Approx(2.0).margin(1e-12));
  CHECK(grads.at("x").at(1) == Catch::Approx(4.0).margin(1e-12));
  CHECK(grads.at("x").at(2) == Catch::Approx(6.0).margin(1e-12));
  CHECK(report.text().find("x ") == 0);
  CHECK(report.text().find("pass") != std::string::npos);
}

TEST_CASE("clip combiner gradient interior and saturated") {
  Rng rng(5);
  auto av = random_tensor(rng, Shape(1, 2, 2, 1));
  auto bv = random_tensor(rng, Shape(1, 2, 2, 1));

  // interior: d loss/d rho equals sum(a-b); matches finite differences
  auto rho = make_parameter(Tensor<double>::scalar(0.5), "rho");
  auto f = [&] {
    return sum_all(combine(make_constant(av), make_constant(bv), rho, CombinerKind::Clip));
  };
  auto report = grad_check(f, {rho}, 1e-5, 1e-6);
  CHECK(report.all_pass);
  double s = 0;
  for (int64_t i = 0; i < av.numel(); ++i) s += av.at(i) - bv.at(i);
  CHECK(backward(f(), {rho}).at("rho").at(0) == Catch::Approx(s).margin(1e-12));

  // saturated: analytic gradient exactly zero, finite difference zero
  auto rho_sat = make_parameter(Tensor<double>::scalar(1.5), "rho_sat");
  auto fsat = [&] {
    return sum_all(combine(make_constant(av), make_constant(bv), rho_sat, CombinerKind::Clip));
  };
  CHECK(backward(fsat(), {rho_sat}).at("rho_sat").at(0) == 0.0);
  auto rep2 = grad_check(fsat, {rho_sat}, 1e-5, 1e-6);
  CHECK(rep2.all_pass);
  CHECK(rep2.max_rel_err == 0.0);
}

TEST_CASE("grad_check flags NaN gradients with a location") {
  auto x = make_parameter(Tensor<double>(Shape(1, 1, 1, 1), {0.0}), "x");
  auto f = [&] {
    // sqrt at 0 has an infinite derivative; exp(log(x)) style NaN trap:
    // use x / x which is NaN at exactly 0 after perturbation to -h side? use
    // a simpler construct: 0/0 via x*x / x when x=0 is rejected by div; so
    // build NaN through log: exp of log is untestable without log op. Use
    // division of constants by x instead.
    return sum_all(div(make_constant(Tensor<double>::scalar(1.0)), x));
  };
  // div by exact zero throws at forward time instead; perturb x away from 0
  detail::set_param_element(x, 0, 1e-300);
  auto report = grad_check(f, {x}, 1e-5, 1e-4);
  CHECK_FALSE(report.all_pass);
  CHECK_FALSE(report.entries[0].note.empty());
}

TEST_CASE("grad_check rejects step outside contract") {
  auto x = make_parameter(Tensor<double>::scalar(1.0), "x");
  auto f = [&] { return sum_all(mul(x, x)); };
  CHECK_THROWS_AS(grad_check(f, {x}, 1e-2, 1e-6), ValueError);
}

TEST_CASE("binary op broadcast gradients") {
  Rng rng(6);
  auto x = make_parameter(random_tensor(rng, Shape(2, 2, 2, 3)), "x");
  auto c = make_parameter(random_tensor(rng, Shape(1, 1, 1, 3)), "c");
  auto s = make_parameter(random_tensor(rng, Shape(1, 1, 1, 1)), "s");
  auto f = [&] { return sum_all(mul(add(mul(x, c), s), x)); };
  auto report = grad_check(f, {x, c, s}, 1e-5, 1e-6);
  CHECK(report.all_pass);
}

TEST_CASE("div exp neg relu sigmoid gradient check") {
  Rng rng(7);
  auto x = make_parameter(random_tensor(rng, Shape(1, 2, 2, 2)), "x");
  auto y = make_parameter(
      Tensor<double>::from_fn(Shape(1, 2, 2, 2),
                              [&](int64_t, int64_t, int64_t, int64_t) {
                                return 1.5 + rng.uniform();
                              }),
      "y");
  auto f = [&] {
    auto r = relu(x);
    auto e = normkit::exp(scale(x, 0.3));
    auto q = div(e, y);
    return sum_all(add(add(q, neg(r)), sigmoid(x)));
  };
  auto skip = [](const std::string& name, int64_t, double v) {
    return name == "x" && std::abs(v) < 1e-4;  // relu kink guard
  };
  auto report = grad_check(f, {x, y}, 1e-5, 1e-6, skip);
  CHECK(report.all_pass);
}

TEST_CASE("concat and slice gradient check") {
  Rng rng(8);
  auto a = make_parameter(random_tensor(rng, Shape(1, 2, 2, 3)), "a");
  auto b = make_parameter(random_tensor(rng, Shape(1, 2, 2, 2)), "b");
  auto f = [&] {
    auto cat = concat_channels(a, b);
    auto mid = slice_channels(cat, 1, 4);
    return sum_all(mul(mid, mid));
  };
  auto report = grad_check(f, {a, b}, 1e-5, 1e-6);
  CHECK(report.all_pass);
}

TEST_CASE("NoGradGuard disables graph construction") {
  auto w = make_parameter(Tensor<double>::scalar(2.0), "w");
  VarPtr<double> out;
  {
    NoGradGuard ng;
    out = mul(w, w);
  }
  CHECK_FALSE(out->requires_grad);
  CHECK(out->parents.empty());
}
