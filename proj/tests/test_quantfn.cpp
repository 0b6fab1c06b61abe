#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "intflow/quantize.hpp"
#include "intflow/rng.hpp"

using namespace intflow;

namespace {

RealTensor vec(std::vector<double> v) {
  Shape s{static_cast<std::int64_t>(v.size())};
  return make_real(s, std::move(v));
}

// Literal transliteration of the shift quantizer, independent of
// shift_quantize: R, Norm, direct rounding, clip, rescale.
double sq_oracle(double x, double max_abs, int k) {
  const double r = std::pow(2.0, std::round(std::log2(max_abs)));
  const double norm = x / r;
  const double scale = std::pow(2.0, k - 1);
  double q = std::round(norm * scale) / scale;
  const double d = 1.0 / scale;
  q = std::min(std::max(q, -1.0 + d), 1.0 - d);
  return r * q;
}

}  // namespace

TEST_CASE("pow2_scale (R) examples") {
  CHECK(*pow2_scale(vec({1.0})) == 1.0);
  CHECK(*pow2_scale(vec({0.3, -0.1})) == 0.25);  // round(log2 0.3) = -2
  CHECK(*pow2_scale(vec({6.0})) == 8.0);         // round(log2 6) = 3
  CHECK_FALSE(pow2_scale(vec({0.0, 0.0})).has_value());
}

TEST_CASE("stochastic rounding: integers pass through, no draws consumed") {
  Rng rng(1);
  const std::uint64_t before = rng.state();
  CHECK(stochastic_round(vec({2.0, -3.0, 0.0}), rng).values[0] == 2.0);
  CHECK(rng.state() == before);
}

TEST_CASE("stochastic rounding is unbiased at 1.3 and -0.5") {
  Rng rng(42);
  const int n = 100000;
  for (const double x : {1.3, -0.5, 0.75, -2.25}) {
    double sum = 0.0;
    std::set<double> seen;
    for (int i = 0; i < n; ++i) {
      const double r = stochastic_round_scalar(x, rng);
      seen.insert(r);
      sum += r;
      CHECK((r == std::floor(x) || r == std::ceil(x)));
    }
    const double p = x - std::floor(x);
    const double sigma = std::sqrt(p * (1 - p));
    CHECK(std::abs(sum / n - x) <= 4.0 * sigma / std::sqrt(static_cast<double>(n)));
    CHECK(seen.size() == 2);
  }
}

TEST_CASE("constant quantization worked examples") {
  Rng rng(7);
  const RealTensor z = constant_quantize(RealTensor::zeros({3}), 8, 15, Rounding::stochastic, &rng);
  for (double v : z.values) CHECK(v == 0.0);

  const RealTensor a =
      constant_quantize(vec({0.125, -0.0625}), 8, 15, Rounding::stochastic, &rng);
  CHECK(a.values[0] == 127.0 / 16384);  // 128 clips to 127 on the 2^-14 grid
  CHECK(a.values[1] == -64.0 / 16384);

  const RealTensor b = constant_quantize(vec({0.125}), 7, 15, Rounding::stochastic, &rng);
  CHECK(b.values[0] == 63.0 / 16384);  // dr = 64 shrinks the range

  CHECK_THROWS_AS(constant_quantize(vec({1.0}), 16, 15, Rounding::nearest, nullptr), ConfigError);
  CHECK_THROWS_AS(constant_quantize(vec({1.0}), 8, 15, Rounding::stochastic, nullptr),
                  ConfigError);
}

TEST_CASE("constant quantization output set") {
  Rng rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    RealTensor x = vec({0, 0, 0, 0, 0});
    for (auto& v : x.values) v = (rng.next_unit() - 0.5) * std::ldexp(1.0, int(rng.next_u64() % 8) - 4);
    const int dr_bits = 2 + static_cast<int>(rng.next_u64() % 7);
    const std::int64_t dr = std::int64_t(1) << (dr_bits - 1);
    const RealTensor q = constant_quantize(x, dr_bits, 15, Rounding::stochastic, &rng);
    for (double v : q.values) {
      const double m = std::ldexp(v, 14);
      CHECK(m == std::trunc(m));
      CHECK(std::abs(m) <= static_cast<double>(dr - 1));
    }
  }
}

TEST_CASE("shift quantization worked examples") {
  const RealTensor a = shift_quantize(vec({0.5, -0.25}), 8);
  CHECK(a.values[0] == 0.5 * 127.0 / 128);
  CHECK(a.values[1] == -0.25);

  const RealTensor z = shift_quantize(RealTensor::zeros({2}), 8);
  CHECK(z.values[0] == 0.0);

  for (const int n : {-3, 0, 2}) {
    const RealTensor s = shift_quantize(vec({std::ldexp(1.0, n)}), 8);
    CHECK(s.values[0] == std::ldexp(1.0, n) * 127.0 / 128);
  }
}

TEST_CASE("shift quantization equals the literal oracle, preserves sign, scales") {
  Rng rng(23);
  for (int trial = 0; trial < 500; ++trial) {
    const int k = 2 + static_cast<int>(rng.next_u64() % 10);
    RealTensor x = vec({0, 0, 0, 0, 0, 0});
    for (auto& v : x.values) v = (rng.next_unit() - 0.5) * 4.0;
    double max_abs = 0.0;
    for (double v : x.values) max_abs = std::max(max_abs, std::abs(v));
    const RealTensor q = shift_quantize(x, k);
    for (std::size_t i = 0; i < x.values.size(); ++i) {
      CHECK(q.values[i] == sq_oracle(x.values[i], max_abs, k));
      CHECK((q.values[i] == 0.0 || (q.values[i] > 0) == (x.values[i] > 0)));
    }
    // scale invariance: sq(2^j x) = 2^j sq(x)
    const int j = static_cast<int>(rng.next_u64() % 9) - 4;
    RealTensor xs = x;
    for (auto& v : xs.values) v = std::ldexp(v, j);
    const RealTensor qs = shift_quantize(xs, k);
    for (std::size_t i = 0; i < x.values.size(); ++i)
      CHECK(qs.values[i] == std::ldexp(q.values[i], j));
  }
}

TEST_CASE("flag format: worked values") {
  // max|x| = 0.5 so R = 0.5 and Sc = 2^-8.
  const double sc = std::ldexp(1.0, -8);
  const RealTensor x = vec({sc / 128, -127 * sc, 0.5, 0.0, sc * 0.4});
  const FlagTensor f = flag_encode(x, 8);
  CHECK(f.scale_exp == -8);

  CHECK_FALSE(f.flag(0));  // smallest positive representable: +Sc/128
  CHECK_FALSE(f.sign(0));
  CHECK(f.data(0) == 1);
  CHECK(f.decode(0) == sc / 128);

  CHECK(f.flag(1));  // -127 * Sc uses the flag path
  CHECK(f.sign(1));
  CHECK(f.data(1) == 127);
  CHECK(f.decode(1) == -127 * sc);

  // |x/Sc| = 128 >= 1: flag set, magnitude saturates at the 7 data bits.
  CHECK(f.flag(2));
  CHECK(f.data(2) == 127);
  CHECK(f.decode(2) == 127 * sc);

  CHECK(f.codes[3] == 0);  // canonical zero

  // 0.4 * Sc rounds to 51/128 * Sc on the fractional grid
  CHECK_FALSE(f.flag(4));
  CHECK(f.data(4) == 51);
}

TEST_CASE("flag carry: fractional values rounding to exactly Sc") {
  // |x/Sc| = 0.999 rounds (0.999 * 128 = 127.87 -> 128) onto the flag=1 grid.
  const double sc = std::ldexp(1.0, -7 - 7);  // R = 2^-7
  const RealTensor x = vec({std::ldexp(1.0, -7), -0.999 * sc});
  const FlagTensor f = flag_encode(x, 8);
  CHECK(f.flag(1));
  CHECK(f.sign(1));
  CHECK(f.data(1) == 1);
  CHECK(f.decode(1) == -sc);
}

TEST_CASE("flag representable set: exhaustive over all 512 codes") {
  // Build the expected value set from the format definition.
  const int scale_exp = -5;
  const double sc = std::ldexp(1.0, scale_exp);
  std::set<double> expected{0.0};
  for (int n = 1; n <= 127; ++n) {
    expected.insert(n * sc / 128);
    expected.insert(-n * sc / 128);
    expected.insert(n * sc);
    expected.insert(-n * sc);
  }
  FlagTensor f;
  f.shape = {1};
  f.codes = {0};
  f.scale_exp = scale_exp;
  std::set<double> decoded;
  for (std::uint16_t code = 0; code < 512; ++code) {
    f.codes[0] = code;
    decoded.insert(f.decode(0));
  }
  CHECK(decoded == expected);

  // encode(decode(code)) reproduces every canonical code's value exactly,
  // and encoding is idempotent on its own output.
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    RealTensor x = vec({0, 0, 0, 0, 0, 0, 0});
    for (auto& v : x.values) {
      const double mag = std::pow(rng.next_unit(), 3.0);
      v = (rng.next_unit() < 0.5 ? -1 : 1) * mag;
    }
    const FlagTensor f1 = flag_encode(x, 8);
    const RealTensor d1 = flag_decode(f1);
    const FlagTensor f2 = flag_encode(d1, 8);
    const RealTensor d2 = flag_decode(f2);
    for (std::size_t i = 0; i < d1.values.size(); ++i) CHECK(d1.values[i] == d2.values[i]);
  }
}

TEST_CASE("flag zero tensor encodes to canonical zeros") {
  const FlagTensor f = flag_encode(RealTensor::zeros({4}), 8);
  CHECK(f.scale_exp == 0);
  for (std::size_t i = 0; i < 4; ++i) CHECK(f.codes[i] == 0);
}

TEST_CASE("flag wire format golden bytes") {
  FlagTensor f;
  f.shape = {3};
  f.scale_exp = -3;
  f.codes = {0x001, 0x1FF, 0x000};  // +Sc/128, -127*Sc, 0
  const std::vector<std::uint8_t> bytes = flag_serialize(f);
  const std::vector<std::uint8_t> golden = {0xFD, 0x01, 0xFE, 0x03, 0x00};
  CHECK(bytes == golden);

  const FlagTensor back = flag_deserialize(bytes, {3});
  CHECK(back.scale_exp == -3);
  CHECK(back.codes == f.codes);
  CHECK_THROWS_AS(flag_deserialize(std::vector<std::uint8_t>{0xFD, 0x01}, Shape{3}), IoError);
}

TEST_CASE("flag round trip through the wire is loss-free on random tensors") {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    RealTensor x = vec({0, 0, 0, 0, 0, 0, 0, 0, 0});
    for (auto& v : x.values) v = (rng.next_unit() - 0.5) * std::ldexp(1.0, int(rng.next_u64() % 10) - 5);
    const FlagTensor f = flag_encode(x, 8);
    const FlagTensor g = flag_deserialize(flag_serialize(f), f.shape);
    CHECK(g.codes == f.codes);
    CHECK(g.scale_exp == f.scale_exp);
  }
}

TEST_CASE("coverage ratio: thresholds and ordering") {
  {
    RealTensor x = vec({0.5, 0.25, -0.125, 0.0625});
    CHECK(coverage_ratio(x, 8, E2Mode::plain_shift) == 1.0);
    CHECK(coverage_ratio(x, 8, E2Mode::flag) == 1.0);
  }
  {
    // Uniform samples far below the plain 8-bit threshold 2^-8 * R.
    Rng rng(5);
    RealTensor x = RealTensor::zeros({256});
    x.values[0] = 1.0;  // pins R = 1
    for (std::size_t i = 1; i < x.values.size(); ++i)
      x.values[i] = (rng.next_unit() - 0.5) * std::ldexp(2.0, -10);
    const double plain = coverage_ratio(x, 8, E2Mode::plain_shift);
    const double flag = coverage_ratio(x, 8, E2Mode::flag);
    CHECK(plain <= 1.0 / 256 + 1e-12);  // only the pinned element survives
    CHECK(flag > 0.5);
  }
  {
    Rng rng(9);
    for (int trial = 0; trial < 100; ++trial) {
      RealTensor x = RealTensor::zeros({64});
      for (auto& v : x.values) {
        const double mag = std::pow(rng.next_unit(), 4.0);
        v = (rng.next_unit() < 0.5 ? -1 : 1) * mag;
      }
      CHECK(coverage_ratio(x, 8, E2Mode::flag) >=
            coverage_ratio(x, 8, E2Mode::plain_shift));
    }
  }
}

TEST_CASE("BitWidthConfig identities hold by construction") {
  CHECK_NOTHROW(BitWidthConfig::int8_default(E2Mode::flag));
  const BitWidthConfig cfg = BitWidthConfig::int8_default(E2Mode::flag);
  CHECK(cfg.k_gc == 15);
  CHECK(cfg.k_wu == 24);
  BitWidthConfig bad = cfg;
  bad.k_wu = 16;
  CHECK_THROWS_AS(BitWidthConfig::checked(bad), ConfigError);
  bad = cfg;
  bad.k_gc = 14;
  CHECK_THROWS_AS(BitWidthConfig::checked(bad), ConfigError);
  bad = cfg;
  bad.k_w = 1;
  CHECK_THROWS_AS(BitWidthConfig::checked(bad), ConfigError);
  CHECK_NOTHROW(BitWidthConfig::high_precision(24));
}

TEST_CASE("dr schedule") {
  const DrSchedule s = DrSchedule::validated({{0, 8}, {10, 7}, {20, 6}});
  CHECK(s.bits_at(0) == 8);
  CHECK(s.bits_at(9) == 8);
  CHECK(s.bits_at(10) == 7);
  CHECK(s.bits_at(25) == 6);
  CHECK_THROWS_AS(DrSchedule::validated({{0, 8}, {5, 9}}), ConfigError);   // k increases
  CHECK_THROWS_AS(DrSchedule::validated({{0, 8}, {0, 7}}), ConfigError);   // epoch repeats
  CHECK_THROWS_AS(DrSchedule::validated({{2, 8}}), ConfigError);           // must start at 0
}

TEST_CASE("role wrappers") {
  const Quantizer qz(BitWidthConfig::int8_default(E2Mode::flag));
  CHECK(qz.weight(vec({1.5})).values[0] == 127.0 / 128);
  CHECK(qz.activation(vec({0.3})).values[0] == 38.0 / 128);
  Rng rng(1);
  const RealTensor zg = qz.weight_grad(RealTensor::zeros({4}), 8, Rounding::stochastic, &rng);
  for (double v : zg.values) CHECK(v == 0.0);
  const Quantizer qp(BitWidthConfig::int8_default(E2Mode::plain_shift));
  CHECK(qp.config().k_e2 == 16);
  CHECK_FALSE(qp.error_out(vec({0.25})).flag.has_value());
  CHECK(qz.error_out(vec({0.25})).flag.has_value());
}

TEST_CASE("rng fork streams are decorrelated and parent is untouched") {
  Rng a(123);
  const std::uint64_t s = a.state();
  Rng b = a.fork(1);
  Rng c = a.fork(2);
  CHECK(a.state() == s);
  CHECK(b.next_u64() != c.next_u64());
}
