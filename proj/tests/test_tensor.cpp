#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <sstream>

#include "normkit/random.hpp"
#include "normkit/tensor.hpp"
#include "normkit/tensor_io.hpp"

using namespace normkit;

namespace {

Tensor<double> random_tensor(Rng& rng, Shape s, double scale = 1.0) {
  return Tensor<double>::from_fn(s, [&](int64_t, int64_t, int64_t, int64_t) {
    return scale * rng.normal();
  });
}

Shape random_shape(Rng& rng, int64_t lo = 1, int64_t hi = 8) {
  return Shape(rng.uniform_int(lo, hi), rng.uniform_int(lo, hi), rng.uniform_int(lo, hi),
               rng.uniform_int(lo, hi));
}

}  // namespace

TEST_CASE("elementwise add on vectors") {
  Tensor<double> a(Shape(1, 1, 1, 2), {1, 2});
  Tensor<double> b(Shape(1, 1, 1, 2), {3, 4});
  auto r = add(a, b);
  CHECK(r.at(0) == 4.0);
  CHECK(r.at(1) == 6.0);
}

TEST_CASE("mul by scalar one is bit-identical") {
  Rng rng(7);
  auto x = random_tensor(rng, Shape(2, 3, 4, 5));
  auto r = mul(x, 1.0);
  CHECK(bit_equal(r, x));
}

TEST_CASE("div by exact zero is rejected") {
  Tensor<double> a(Shape(1, 1, 1, 2), {1, 1});
  Tensor<double> b(Shape(1, 1, 1, 2), {0, 1});
  CHECK_THROWS_AS(div(a, b), ValueError);
}

TEST_CASE("shape mismatch diagnostic names both shapes") {
  Tensor<double> a(Shape(1, 4, 4, 8));
  Tensor<double> b(Shape(1, 2, 2, 8));
  try {
    add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(1,4,4,8)") != std::string::npos);
    CHECK(msg.find("(1,2,2,8)") != std::string::npos);
  }
}

TEST_CASE("trailing channel broadcast") {
  Tensor<double> a(Shape(1, 2, 1, 2), {1, 2, 3, 4});
  Tensor<double> g(Shape(1, 1, 1, 2), {10, 100});
  auto r = mul(a, g);
  CHECK(r.at(0) == 10.0);
  CHECK(r.at(1) == 200.0);
  CHECK(r.at(2) == 30.0);
  CHECK(r.at(3) == 400.0);
}

TEST_CASE("exp overflow is rejected as non-finite") {
  Tensor<double> a(Shape(1, 1, 1, 1), {1e308});
  CHECK_THROWS_AS(normkit::exp(a), NumericError);
}

TEST_CASE("reduce_moments over H,W") {
  Tensor<double> x(Shape(1, 2, 2, 1), {1, 2, 3, 4});
  auto [mean, var] = reduce_moments(x, AxisSet::over({Axis::H, Axis::W}));
  CHECK(mean.shape() == Shape(1, 1, 1, 1));
  CHECK(mean.at(0) == Catch::Approx(2.5).margin(1e-12));
  CHECK(var.at(0) == Catch::Approx(1.25).margin(1e-12));
}

TEST_CASE("reduce_moments of constant tensor") {
  auto x = Tensor<double>::full(Shape(2, 3, 3, 4), 5.25);
  auto [mean, var] = reduce_moments(x, AxisSet::over({Axis::N, Axis::H, Axis::W, Axis::C}));
  CHECK(mean.at(0) == 5.25);
  CHECK(var.at(0) == 0.0);
}

TEST_CASE("reduce_moments HWC on C=1 equals HW") {
  Rng rng(3);
  auto x = random_tensor(rng, Shape(2, 4, 3, 1));
  auto [m1, v1] = reduce_moments(x, AxisSet::over({Axis::H, Axis::W}));
  auto [m2, v2] = reduce_moments(x, AxisSet::over({Axis::H, Axis::W, Axis::C}));
  CHECK(max_abs_diff(m1, m2) == 0.0);
  CHECK(max_abs_diff(v1, v2) == 0.0);
}

TEST_CASE("reduce_moments rejects empty axis set") {
  Tensor<double> x(Shape(1, 2, 2, 1), {1, 2, 3, 4});
  CHECK_THROWS_AS(reduce_moments(x, AxisSet{}), ValueError);
}

TEST_CASE("reduce_moments channel group matches slice") {
  Rng rng(11);
  auto x = random_tensor(rng, Shape(2, 3, 3, 8));
  ChannelGroup grp{1, 4};  // channels [4, 8)
  auto [mg, vg] = reduce_moments(x, AxisSet::over({Axis::H, Axis::W, Axis::C}), &grp);
  auto sliced = slice_channels(x, 4, 8);
  auto [ms, vs] = reduce_moments(sliced, AxisSet::over({Axis::H, Axis::W, Axis::C}));
  CHECK(max_abs_diff(mg, ms) < 1e-14);
  CHECK(max_abs_diff(vg, vs) < 1e-14);
}

TEST_CASE("variance identity and non-negativity on random tensors") {
  Rng rng(101);
  for (int rep = 0; rep < 50; ++rep) {
    auto s = random_shape(rng);
    auto x = random_tensor(rng, s, rng.uniform(0.5, 3.0));
    AxisSet axes;
    // random nonempty axis set
    do {
      axes.n = rng.uniform() < 0.5;
      axes.h = rng.uniform() < 0.5;
      axes.w = rng.uniform() < 0.5;
      axes.c = rng.uniform() < 0.5;
    } while (axes.empty());
    auto [mean, var] = reduce_moments(x, axes);
    auto x2 = mul(x, x);
    auto [mean2, unused] = reduce_moments(x2, axes);
    for (int64_t i = 0; i < var.numel(); ++i) {
      CHECK(var.at(i) >= 0.0);
      const double alt = mean2.at(i) - mean.at(i) * mean.at(i);
      CHECK(std::abs(var.at(i) - alt) < 1e-10);
    }
  }
}

TEST_CASE("concat and slice") {
  Rng rng(5);
  auto a = random_tensor(rng, Shape(1, 4, 4, 16));
  auto b = random_tensor(rng, Shape(1, 4, 4, 16));
  auto cat = concat_channels(a, b);
  CHECK(cat.shape() == Shape(1, 4, 4, 32));

  auto left = slice_channels(cat, 0, 16);
  auto right = slice_channels(cat, 16, 32);
  CHECK(bit_equal(left, a));
  CHECK(bit_equal(right, b));
  CHECK(bit_equal(concat_channels(left, right), cat));
}

TEST_CASE("concat with spatial mismatch is rejected") {
  Tensor<double> a(Shape(1, 4, 4, 8));
  Tensor<double> b(Shape(1, 2, 2, 8));
  CHECK_THROWS_AS(concat_channels(a, b), ShapeError);
}

TEST_CASE("shape fuzz: concat/slice round trips") {
  Rng rng(99);
  for (int rep = 0; rep < 50; ++rep) {
    auto s = random_shape(rng);
    auto x = random_tensor(rng, s);
    if (s.c >= 2) {
      const int64_t cut = rng.uniform_int(1, s.c - 1);
      auto rejoined = concat_channels(slice_channels(x, 0, cut), slice_channels(x, cut, s.c));
      CHECK(bit_equal(rejoined, x));
    }
    auto padded = pad_crop(x, s.h + 2, s.w + 3);
    CHECK(bit_equal(pad_crop(padded, s.h, s.w), x));
  }
}

TEST_CASE("NKT1 round trip preserves bits") {
  Rng rng(17);
  auto x = random_tensor(rng, Shape(2, 3, 5, 4));
  std::ostringstream buf;
  write_nkt(buf, x);
  std::istringstream in(buf.str());
  auto y = read_nkt<double>(in);
  CHECK(bit_equal(x, y));

  auto xf = x.cast<float>();
  std::ostringstream buff;
  write_nkt(buff, xf);
  std::istringstream inf(buff.str());
  auto yf = read_nkt<float>(inf);
  CHECK(bit_equal(xf, yf));
}

TEST_CASE("NKT1 rejects wrong dtype and bad magic") {
  Tensor<float> x(Shape(1, 1, 1, 2), {1.f, 2.f});
  std::ostringstream buf;
  write_nkt(buf, x);
  std::istringstream in(buf.str());
  CHECK_THROWS_AS(read_nkt<double>(in), IoError);

  std::istringstream garbage("XXXXGARBAGE");
  CHECK_THROWS_AS(read_nkt<float>(garbage), IoError);
}

TEST_CASE("truncated normal sample std matches target") {
  Rng rng(2024);
  const double target = 2.0 / 144.0;
  double sum = 0, sq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double v = rng.truncated_normal(target);
    sum += v;
    sq += v * v;
  }
  const double mean = sum / n;
  const double stddev = std::sqrt(sq / n - mean * mean);
  CHECK(stddev == Catch::Approx(target).epsilon(0.02));
}
