#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "intflow/kernels.hpp"
#include "intflow/rng.hpp"
#include "intflow/tensor.hpp"

using namespace intflow;

namespace {

RealTensor vec(std::vector<double> v) {
  Shape s{static_cast<std::int64_t>(v.size())};
  return make_real(s, std::move(v));
}

// Independent scalar oracle for the direct quantizer: evaluated straight
// from round(x * 2^{k-1}) / 2^{k-1} with explicit tie handling, no shared
// code with q_direct.
double q_direct_oracle(double x, int k) {
  const double scaled = x * std::pow(2.0, k - 1);
  const double f = std::floor(scaled);
  double r;
  if (scaled - f > 0.5)
    r = f + 1.0;
  else if (scaled - f < 0.5)
    r = f;
  else
    r = scaled >= 0.0 ? f + 1.0 : f;  // ties away from zero
  return r / std::pow(2.0, k - 1);
}

}  // namespace

TEST_CASE("grid_step matches the minimum interval") {
  CHECK(grid_step(8) == 0.0078125);
  CHECK(grid_step(1) == 1.0);
  CHECK(grid_step(16) == std::ldexp(1.0, -15));
  CHECK_THROWS_AS(grid_step(0), ConfigError);
}

TEST_CASE("q_direct basics") {
  CHECK(q_direct(vec({0.0}), 8).values[0] == 0.0);
  CHECK(q_direct(vec({0.5}), 8).values[0] == 0.5);  // 0.5 * 128 = 64 exact
  CHECK(q_direct(vec({0.3}), 3).values[0] == 0.25); // round(0.3*4)=1 -> 1/4
}

TEST_CASE("q_direct tie cases round away from zero") {
  // x * 128 in {0.5, -0.5, 1.5}
  CHECK(q_direct(vec({1.0 / 256}), 8).values[0] == 1.0 / 128);
  CHECK(q_direct(vec({-1.0 / 256}), 8).values[0] == -1.0 / 128);
  CHECK(q_direct(vec({3.0 / 256}), 8).values[0] == 2.0 / 128);
}

TEST_CASE("q_direct error paths") {
  RealTensor t = vec({1.0});
  t.values[0] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(q_direct(t, 8), RepresentationError);
  CHECK_THROWS_AS(q_direct(vec({0.1}), 1), ConfigError);
}

TEST_CASE("q_direct idempotence and error bound, randomized") {
  Rng rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    const int k = 2 + static_cast<int>(rng.next_u64() % 14);
    RealTensor x = vec({0, 0, 0, 0});
    for (auto& v : x.values) v = (rng.next_unit() - 0.5) * 8.0;
    const RealTensor q1 = q_direct(x, k);
    const RealTensor q2 = q_direct(q1, k);
    for (std::size_t i = 0; i < x.values.size(); ++i) {
      CHECK(q1.values[i] == q2.values[i]);
      CHECK(std::abs(q1.values[i] - x.values[i]) <= std::ldexp(1.0, -k));
      CHECK(q1.values[i] == q_direct_oracle(x.values[i], k));
    }
  }
}

TEST_CASE("clip") {
  CHECK(clip(vec({5.0}), -1, 1).values[0] == 1.0);
  CHECK(clip(vec({0.3}), -1, 1).values[0] == 0.3);
  const double b = 1.0 - 1.0 / 128;
  const RealTensor r = clip(vec({-2.0, 0.0, 2.0}), -b, b);
  CHECK(r.values[0] == -127.0 / 128);
  CHECK(r.values[1] == 0.0);
  CHECK(r.values[2] == 127.0 / 128);
  CHECK_THROWS_AS(clip(vec({0.0}), 1.0, -1.0), ConfigError);
}

TEST_CASE("to_fixed / from_fixed round trip and errors") {
  const QTensor q = to_fixed(vec({0.5}), 8);
  CHECK(q.mantissas[0] == 64);
  CHECK(q.resolution_exp == -7);
  CHECK(to_fixed(vec({127.0 / 128}), 8).mantissas[0] == 127);
  CHECK_THROWS_AS(to_fixed(vec({0.3}), 8), RepresentationError);
  CHECK_THROWS_AS(to_fixed(vec({1.0}), 8), RepresentationError);  // out of symmetric range

  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 2 + static_cast<int>(rng.next_u64() % 20);
    RealTensor x = vec({0, 0, 0});
    for (auto& v : x.values) {
      const auto lim = mantissa_limit(k);
      const std::int64_t m =
          static_cast<std::int64_t>(rng.next_u64() % (2 * lim + 1)) - lim;
      v = std::ldexp(static_cast<double>(m), -(k - 1));
    }
    const RealTensor back = from_fixed(to_fixed(x, k));
    for (std::size_t i = 0; i < x.values.size(); ++i) CHECK(back.values[i] == x.values[i]);
  }
}

TEST_CASE("to_fixed names the offending index") {
  try {
    to_fixed(vec({0.5, 0.3}), 8);
    FAIL("expected RepresentationError");
  } catch (const RepresentationError& e) {
    CHECK(std::string(e.what()).find("index 1") != std::string::npos);
  }
}

TEST_CASE("FixedScalar value equality across resolutions") {
  const FixedScalar a{64, -7};   // 0.5
  const FixedScalar b{1, -1};    // 0.5
  const FixedScalar c{65, -7};
  CHECK(a == b);
  CHECK(a != c);
  CHECK(FixedScalar{0, -7} == FixedScalar{0, 3});
  CHECK(FixedScalar{26, -9}.representable_in(10));
  CHECK_FALSE(FixedScalar{1, -20}.representable_in(10));
  CHECK(FixedScalar{3, -2}.representable_in(3));
  CHECK_FALSE(FixedScalar{5, -2}.representable_in(3));
}

TEST_CASE("hadamard and matmul on mantissas") {
  const QTensor a = to_fixed(vec({0.5}), 8);
  const QTensor b = to_fixed(vec({0.5}), 8);
  CHECK(hadamard(a, b).values[0] == 0.25);

  QTensor m1 = make_qtensor({1, 1}, {2}, -7, 8);
  QTensor m2 = make_qtensor({1, 1}, {3}, -7, 8);
  const RealTensor p = matmul(m1, m2);
  CHECK(p.values[0] == 6.0 / 16384);  // mantissa 6 at 2^-14

  CHECK_THROWS_AS(matmul(make_qtensor({1, 2}, {1, 1}, 0, 8), make_qtensor({1, 2}, {1, 1}, 0, 8)),
                  ShapeError);
}

TEST_CASE("conv2d identity kernel") {
  Rng rng(3);
  QTensor x = QTensor::zeros({2, 1, 4, 4}, -7, 8);
  for (auto& m : x.mantissas) m = static_cast<std::int32_t>(rng.next_u64() % 255) - 127;
  const QTensor w = make_qtensor({1, 1, 1, 1}, {1}, 0, 2);  // kernel value 1.0
  const RealTensor y = conv2d(x, w, {1, 0});
  REQUIRE(y.shape == Shape{2, 1, 4, 4});
  for (std::size_t i = 0; i < x.mantissas.size(); ++i) CHECK(y.values[i] == x.value(i));
}

TEST_CASE("integer kernels match a double-loop oracle exactly") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const std::int64_t m = 1 + rng.next_u64() % 5, k = 1 + rng.next_u64() % 6,
                       n = 1 + rng.next_u64() % 4;
    QTensor a = QTensor::zeros({m, k}, -7, 8), b = QTensor::zeros({k, n}, -6, 8);
    for (auto& v : a.mantissas) v = static_cast<std::int32_t>(rng.next_u64() % 255) - 127;
    for (auto& v : b.mantissas) v = static_cast<std::int32_t>(rng.next_u64() % 255) - 127;
    const RealTensor got = matmul(a, b);
    const RealTensor oracle = matmul(from_fixed(a), from_fixed(b));
    for (std::size_t i = 0; i < got.values.size(); ++i) CHECK(got.values[i] == oracle.values[i]);
  }
}

TEST_CASE("conv kernels match double-loop oracle exactly") {
  Rng rng(29);
  QTensor x = QTensor::zeros({2, 3, 5, 5}, -7, 8);
  QTensor w = QTensor::zeros({4, 3, 3, 3}, -7, 8);
  for (auto& v : x.mantissas) v = static_cast<std::int32_t>(rng.next_u64() % 255) - 127;
  for (auto& v : w.mantissas) v = static_cast<std::int32_t>(rng.next_u64() % 255) - 127;
  for (const ConvGeom g : {ConvGeom{1, 1}, ConvGeom{2, 1}, ConvGeom{1, 0}}) {
    const RealTensor got = conv2d(x, w, g);
    const RealTensor oracle = conv2d(from_fixed(x), from_fixed(w), g);
    REQUIRE(got.shape == oracle.shape);
    for (std::size_t i = 0; i < got.values.size(); ++i) CHECK(got.values[i] == oracle.values[i]);

    QTensor e = QTensor::zeros(got.shape, -8, 8);
    for (auto& v : e.mantissas) v = static_cast<std::int32_t>(rng.next_u64() % 255) - 127;
    const RealTensor gi = conv2d_input_grad(e, w, g, 5, 5);
    const RealTensor gi_o = conv2d_input_grad(from_fixed(e), from_fixed(w), g, 5, 5);
    for (std::size_t i = 0; i < gi.values.size(); ++i) CHECK(gi.values[i] == gi_o.values[i]);

    const RealTensor gw = conv2d_weight_grad(e, x, g, 3, 3);
    const RealTensor gw_o = conv2d_weight_grad(from_fixed(e), from_fixed(x), g, 3, 3);
    for (std::size_t i = 0; i < gw.values.size(); ++i) CHECK(gw.values[i] == gw_o.values[i]);
  }
}

TEST_CASE("add aligns resolutions exactly") {
  const QTensor a = make_qtensor({2}, {3, -5}, -4, 8);   // 3/16, -5/16
  const QTensor b = make_qtensor({2}, {1, 1}, -2, 8);    // 1/4, 1/4
  const RealTensor s = add(a, b);
  CHECK(s.values[0] == 7.0 / 16);
  CHECK(s.values[1] == -1.0 / 16);
}

TEST_CASE("accumulator worst case fits 64-bit for the reference widths") {
  // k_w = k_a = 8: |mantissa| <= 127, product <= 127^2 < 2^14; a fan-in of
  // 2^20 keeps the sum under 2^34, far inside both int64 and the 2^53 window
  // where doubles hold integers exactly.
  const std::int64_t prod = 127 * 127;
  const std::int64_t fan_in = std::int64_t(1) << 20;
  CHECK(prod * fan_in < (std::int64_t(1) << 53));
  // The full-24-bit check config: products of 2^23 mantissas with desk-scale
  // fan-in (<= 2^6) stay under 2^53 as well.
  const std::int64_t prod24 = (std::int64_t(1) << 23) * (std::int64_t(1) << 23) >> 23;
  CHECK(((std::int64_t(1) << 46)) * 64 < (std::int64_t(1) << 53));
  (void)prod24;
}

TEST_CASE("QTensor invariants enforced") {
  CHECK_THROWS_AS(make_qtensor({2}, {1}, 0, 8), ShapeError);
  CHECK_THROWS_AS(make_qtensor({1}, {128}, 0, 8), RepresentationError);
  CHECK_NOTHROW(make_qtensor({1}, {127}, 0, 8));
  CHECK_THROWS_AS(make_qtensor({1}, {0}, 0, 1), ConfigError);
}
