#include "intflow/quantize.hpp"

#include <algorithm>
#include <cmath>

namespace intflow {

BitWidthConfig BitWidthConfig::checked(BitWidthConfig cfg) {
  const int* widths[] = {&cfg.k_w,  &cfg.k_a,      &cfg.k_bn,  &cfg.k_mu,  &cfg.k_sigma,
                         &cfg.k_gamma, &cfg.k_beta, &cfg.k_e1,  &cfg.k_e2,  &cfg.k_gw,
                         &cfg.k_ggamma, &cfg.k_gbeta, &cfg.k_gc, &cfg.k_mom, &cfg.k_acc,
                         &cfg.k_lr, &cfg.k_wu,     &cfg.k_gammau, &cfg.k_betau};
  for (const int* w : widths)
    if (*w < 2 || *w > 32)
      throw ConfigError("bit width " + std::to_string(*w) + " outside [2, 32]");
  if (cfg.k_gc != cfg.k_mom + cfg.k_acc - 1)
    throw ConfigError("width identity violated: k_gc must equal k_mom + k_acc - 1");
  if (cfg.k_ggamma != cfg.k_gc || cfg.k_gbeta != cfg.k_gc)
    throw ConfigError("width identity violated: k_ggamma and k_gbeta must equal k_gc");
  if (cfg.k_wu != cfg.k_gc + cfg.k_lr - 1)
    throw ConfigError("width identity violated: k_wu must equal k_gc + k_lr - 1");
  if (cfg.k_gammau != cfg.k_wu || cfg.k_betau != cfg.k_wu)
    throw ConfigError("width identity violated: k_gammau and k_betau must equal k_wu");
  if (cfg.k_gw > cfg.k_gc)
    throw ConfigError("k_gw may not exceed k_gc (dr must stay within the constant scale)");
  return cfg;
}

BitWidthConfig BitWidthConfig::int8_default(E2Mode mode) {
  BitWidthConfig cfg;
  cfg.e2_mode = mode;
  cfg.k_e2 = (mode == E2Mode::plain_shift) ? 16 : 8;
  return checked(cfg);
}

BitWidthConfig BitWidthConfig::high_precision(int k) {
  BitWidthConfig cfg;
  cfg.k_w = cfg.k_a = cfg.k_bn = cfg.k_mu = cfg.k_sigma = k;
  cfg.k_gamma = cfg.k_beta = cfg.k_e1 = cfg.k_e2 = cfg.k_gw = k;
  cfg.k_mom = 2;
  cfg.k_acc = k;
  cfg.k_gc = cfg.k_ggamma = cfg.k_gbeta = k + 1;
  cfg.k_lr = 2;
  cfg.k_wu = cfg.k_gammau = cfg.k_betau = k + 2;
  cfg.e2_mode = E2Mode::plain_shift;
  return checked(cfg);
}

DrSchedule DrSchedule::validated(std::vector<std::pair<int, int>> pts) {
  if (pts.empty()) throw ConfigError("dr schedule must have at least one breakpoint");
  if (pts.front().first != 0) throw ConfigError("dr schedule must start at epoch 0");
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (pts[i].second < 1) throw ConfigError("dr schedule bit width must be >= 1");
    if (i > 0) {
      if (pts[i].first <= pts[i - 1].first)
        throw ConfigError("dr schedule epochs must be strictly increasing");
      if (pts[i].second > pts[i - 1].second)
        throw ConfigError("dr schedule bit widths must be non-increasing");
    }
  }
  return DrSchedule{std::move(pts)};
}

int DrSchedule::bits_at(int epoch) const {
  int k = points.front().second;
  for (const auto& [e, kk] : points)
    if (e <= epoch) k = kk;
  return k;
}

double FlagTensor::decode(std::size_t i) const {
  const std::uint16_t d = data(i);
  if (d == 0) return 0.0;  // canonical zero; stray sign bits read as zero
  const double mag = flag(i) ? std::ldexp(static_cast<double>(d), scale_exp)
                             : std::ldexp(static_cast<double>(d), scale_exp - data_bits);
  return sign(i) ? -mag : mag;
}

std::optional<double> pow2_scale(const RealTensor& x) {
  double max_abs = 0.0;
  for (double v : x.values) {
    if (!std::isfinite(v)) throw RepresentationError("pow2_scale: non-finite input");
    max_abs = std::max(max_abs, std::abs(v));
  }
  if (max_abs == 0.0) return std::nullopt;
  const int e = static_cast<int>(round_half_away(std::log2(max_abs)));
  return std::ldexp(1.0, e);
}

double stochastic_round_scalar(double x, Rng& rng) {
  const double f = std::floor(x);
  const double p_up = x - f;
  if (p_up == 0.0) return x;
  double r = (rng.next_unit() < p_up) ? f + 1.0 : f;
  if (r == 0.0) r = 0.0;
  return r;
}

RealTensor stochastic_round(const RealTensor& x, Rng& rng) {
  RealTensor out;
  out.shape = x.shape;
  out.values.resize(x.values.size());
  for (std::size_t i = 0; i < x.values.size(); ++i) {
    if (!std::isfinite(x.values[i]))
      throw RepresentationError("stochastic_round: non-finite value at index " +
                                std::to_string(i));
    out.values[i] = stochastic_round_scalar(x.values[i], rng);
  }
  return out;
}

RealTensor constant_quantize(const RealTensor& x, int dr_bits, int k_gc, Rounding mode, Rng* rng) {
  if (dr_bits < 1 || dr_bits > k_gc)
    throw ConfigError("constant_quantize: need 1 <= dr_bits <= k_gc, got dr_bits=" +
                      std::to_string(dr_bits) + ", k_gc=" + std::to_string(k_gc));
  if (mode == Rounding::stochastic && rng == nullptr)
    throw ConfigError("constant_quantize: stochastic mode needs an rng");
  RealTensor out = RealTensor::zeros(x.shape);
  const auto r = pow2_scale(x);
  if (!r) return out;
  const double inv_r = 1.0 / *r;
  const double dr = std::ldexp(1.0, dr_bits - 1);
  const double lim = dr - 1.0;
  for (std::size_t i = 0; i < x.values.size(); ++i) {
    const double t = dr * (x.values[i] * inv_r);
    double s = (mode == Rounding::stochastic) ? stochastic_round_scalar(t, *rng)
                                              : round_half_away(t);
    s = std::min(std::max(s, -lim), lim);
    double v = std::ldexp(s, -(k_gc - 1));
    if (v == 0.0) v = 0.0;
    out.values[i] = v;
  }
  return out;
}

RealTensor shift_quantize(const RealTensor& x, int k) {
  if (k < 2) throw ConfigError("shift_quantize: bit width must be >= 2");
  RealTensor out = RealTensor::zeros(x.shape);
  const auto r = pow2_scale(x);
  if (!r) return out;
  const double inv_r = 1.0 / *r;
  const double bound = 1.0 - grid_step(k);
  for (std::size_t i = 0; i < x.values.size(); ++i) {
    const double q = std::ldexp(round_half_away(std::ldexp(x.values[i] * inv_r, k - 1)), -(k - 1));
    const double c = std::min(std::max(q, -bound), bound);
    double v = *r * c;
    if (v == 0.0) v = 0.0;
    out.values[i] = v;
  }
  return out;
}

FlagTensor flag_encode(const RealTensor& x, int k_e2) {
  if (k_e2 < 2 || k_e2 > 15) throw ConfigError("flag_encode: unsupported k_e2");
  FlagTensor f;
  f.shape = x.shape;
  f.data_bits = k_e2 - 1;
  f.codes.assign(x.values.size(), 0);
  const auto r = pow2_scale(x);
  if (!r) {
    f.scale_exp = 0;
    return f;
  }
  int e = 0;
  std::frexp(*r, &e);  // *r == 2^(e-1) exactly
  f.scale_exp = (e - 1) - (k_e2 - 1);
  const double inv_sc = std::ldexp(1.0, -f.scale_exp);
  const std::int64_t dmax = (std::int64_t(1) << f.data_bits) - 1;
  const std::uint16_t flag_bit = static_cast<std::uint16_t>(1u << (f.data_bits + 1));
  const std::uint16_t sign_bit = static_cast<std::uint16_t>(1u << f.data_bits);
  for (std::size_t i = 0; i < x.values.size(); ++i) {
    const double t = x.values[i] * inv_sc;
    std::uint16_t code = 0;
    if (std::abs(t) >= 1.0) {
      std::int64_t m = static_cast<std::int64_t>(round_half_away(t));
      m = std::min(std::max(m, -dmax), dmax);
      code = static_cast<std::uint16_t>(flag_bit | (m < 0 ? sign_bit : 0) |
                                        static_cast<std::uint16_t>(std::abs(m)));
    } else {
      const std::int64_t m =
          static_cast<std::int64_t>(round_half_away(std::ldexp(t, f.data_bits)));
      const std::int64_t mag = std::abs(m);
      if (mag == dmax + 1) {
        // rounded up to exactly +-Sc: representable on the flag=1 grid
        code = static_cast<std::uint16_t>(flag_bit | (m < 0 ? sign_bit : 0) | 1u);
      } else if (mag != 0) {
        code = static_cast<std::uint16_t>((m < 0 ? sign_bit : 0) |
                                          static_cast<std::uint16_t>(mag));
      }
    }
    f.codes[i] = code;
  }
  return f;
}

RealTensor flag_decode(const FlagTensor& f) {
  RealTensor out;
  out.shape = f.shape;
  out.values.resize(f.codes.size());
  for (std::size_t i = 0; i < f.codes.size(); ++i) out.values[i] = f.decode(i);
  return out;
}

std::vector<std::uint8_t> flag_serialize(const FlagTensor& f) {
  if (f.data_bits != 7)
    throw IoError("flag wire format is defined for 9-bit codes (7 data bits)");
  if (f.scale_exp < -128 || f.scale_exp > 127)
    throw IoError("flag scale exponent " + std::to_string(f.scale_exp) +
                  " does not fit a signed byte");
  const int code_bits = f.data_bits + 2;
  const std::size_t nbits = f.codes.size() * static_cast<std::size_t>(code_bits);
  std::vector<std::uint8_t> out(1 + (nbits + 7) / 8, 0);
  out[0] = static_cast<std::uint8_t>(static_cast<std::int8_t>(f.scale_exp));
  std::size_t bit = 0;
  for (std::uint16_t code : f.codes) {
    for (int b = 0; b < code_bits; ++b, ++bit)
      if ((code >> b) & 1u) out[1 + bit / 8] |= static_cast<std::uint8_t>(1u << (bit % 8));
  }
  return out;
}

FlagTensor flag_deserialize(const std::vector<std::uint8_t>& bytes, Shape shape) {
  FlagTensor f;
  f.shape = std::move(shape);
  f.data_bits = 7;
  const std::size_t n = static_cast<std::size_t>(shape_numel(f.shape));
  const int code_bits = f.data_bits + 2;
  const std::size_t need = 1 + (n * static_cast<std::size_t>(code_bits) + 7) / 8;
  if (bytes.size() != need)
    throw IoError("flag payload is " + std::to_string(bytes.size()) + " bytes, expected " +
                  std::to_string(need));
  f.scale_exp = static_cast<std::int8_t>(bytes[0]);
  f.codes.assign(n, 0);
  std::size_t bit = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::uint16_t code = 0;
    for (int b = 0; b < code_bits; ++b, ++bit)
      if ((bytes[1 + bit / 8] >> (bit % 8)) & 1u) code |= static_cast<std::uint16_t>(1u << b);
    f.codes[i] = code;
  }
  return f;
}

double coverage_ratio(const RealTensor& x, int k, E2Mode mode) {
  if (x.numel() == 0) return 0.0;
  std::int64_t nonzero = 0;
  if (mode == E2Mode::plain_shift) {
    const RealTensor q = shift_quantize(x, k);
    for (double v : q.values) nonzero += (v != 0.0);
  } else {
    const FlagTensor f = flag_encode(x, k);
    for (std::size_t i = 0; i < f.codes.size(); ++i) nonzero += (f.decode(i) != 0.0);
  }
  return static_cast<double>(nonzero) / static_cast<double>(x.numel());
}

RealTensor Quantizer::weight(const RealTensor& x) const {
  const double bound = 1.0 - grid_step(cfg_.k_w);
  return clip(q_direct(x, cfg_.k_w), -bound, bound);
}

Quantizer::ErrorOut Quantizer::error_out(const RealTensor& x) const {
  if (cfg_.e2_mode == E2Mode::plain_shift) return {shift_quantize(x, cfg_.k_e2), std::nullopt};
  FlagTensor f = flag_encode(x, cfg_.k_e2);
  RealTensor v = flag_decode(f);
  return {std::move(v), std::move(f)};
}

}  // namespace intflow
