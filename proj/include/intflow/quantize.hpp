#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "intflow/rng.hpp"
#include "intflow/tensor.hpp"

namespace intflow {

enum class E2Mode : std::uint8_t { plain_shift = 0, flag = 1 };
enum class Rounding : std::uint8_t { stochastic = 0, nearest = 1 };

// Every bit width in the dataflow. The gradient/update chain is tied
// together: k_gc = k_mom + k_acc - 1 and k_wu = k_gc + k_lr - 1 make the
// momentum accumulation and the weight update land exactly on their storage
// grids, with no rounding in the update itself.
struct BitWidthConfig {
  int k_w = 8;
  int k_a = 8;
  int k_bn = 16;
  int k_mu = 16;
  int k_sigma = 16;
  int k_gamma = 8;
  int k_beta = 8;
  int k_e1 = 8;
  int k_e2 = 8;
  int k_gw = 8;
  int k_ggamma = 15;
  int k_gbeta = 15;
  int k_gc = 15;
  int k_mom = 3;
  int k_acc = 13;
  int k_lr = 10;
  int k_wu = 24;
  int k_gammau = 24;
  int k_betau = 24;
  E2Mode e2_mode = E2Mode::flag;

  // Throws ConfigError unless every width identity holds.
  static BitWidthConfig checked(BitWidthConfig cfg);

  // The reference INT8 configuration: 8-bit W/A/E1/GW, 16-bit BN statistics,
  // (k_mom, k_acc, k_lr) = (3, 13, 10) so k_gc = 15 and k_wu = 24.
  static BitWidthConfig int8_default(E2Mode mode);

  // All forward/backward quantizers at k bits; the update chain picks the
  // smallest widths that satisfy the identities while keeping mantissas in
  // 32-bit storage. Used by the high-precision-limit tests.
  static BitWidthConfig high_precision(int k);
};

// Shrinks the constant quantizer's integer range as training progresses:
// dr = 2^{k-1} with k taken from the breakpoint whose epoch has been reached.
struct DrSchedule {
  std::vector<std::pair<int, int>> points;  // (epoch_start, k), epoch strictly increasing

  static DrSchedule single(int k) { return DrSchedule{{{0, k}}}; }
  static DrSchedule validated(std::vector<std::pair<int, int>> pts);
  int bits_at(int epoch) const;
};

// 9-bit coded error tensor: per element flag(1) | sign(1) | data(7), with a
// layer-wise power-of-two scale Sc = 2^scale_exp.
//   flag=1: value = +-data * Sc,        data in [1, 2^data_bits - 1]
//   flag=0: value = +-data * Sc / 2^data_bits, data in [0, 2^data_bits - 1]
// Zero is always flag=0, sign=0, data=0.
struct FlagTensor {
  Shape shape;
  std::vector<std::uint16_t> codes;  // (flag<<8) | (sign<<7) | data
  int scale_exp = 0;
  int data_bits = 7;

  std::int64_t numel() const { return static_cast<std::int64_t>(codes.size()); }
  bool flag(std::size_t i) const { return (codes[i] >> (data_bits + 1)) & 1; }
  bool sign(std::size_t i) const { return (codes[i] >> data_bits) & 1; }
  std::uint16_t data(std::size_t i) const {
    return codes[i] & static_cast<std::uint16_t>((1u << data_bits) - 1);
  }
  double decode(std::size_t i) const;
};

// R(x): the power of two nearest (in log domain) to max|x|. Empty for an
// all-zero tensor; every quantizer short-circuits that case to zero output.
std::optional<double> pow2_scale(const RealTensor& x);

// Elementwise floor/ceil chosen with probability proportional to proximity;
// integers pass through, E[output] = x.
RealTensor stochastic_round(const RealTensor& x, Rng& rng);
double stochastic_round_scalar(double x, Rng& rng);

// Constant quantization: normalize by R(x), round onto the +-(dr-1) integer
// grid (stochastically by default), rescale by the constant 2^{-(k_gc-1)}.
// dr = 2^{dr_bits-1}; requires dr_bits <= k_gc. rng may be null in nearest
// mode.
RealTensor constant_quantize(const RealTensor& x, int dr_bits, int k_gc, Rounding mode, Rng* rng);

// Shift quantization: R(x) * clip(Q(x / R(x), k), -1 + d(k), 1 - d(k)).
RealTensor shift_quantize(const RealTensor& x, int k);

FlagTensor flag_encode(const RealTensor& x, int k_e2);
RealTensor flag_decode(const FlagTensor& f);

// Wire format: scale_exp as one signed byte, then the 9-bit codes packed
// LSB-first into a little-endian bitstream.
std::vector<std::uint8_t> flag_serialize(const FlagTensor& f);
FlagTensor flag_deserialize(const std::vector<std::uint8_t>& bytes, Shape shape);

// Fraction of elements that survive quantization (nonzero afterwards) under
// plain k-bit shift quantization or the flag format.
double coverage_ratio(const RealTensor& x, int k, E2Mode mode);

// Per-role wrappers binding the primitives to a width configuration.
class Quantizer {
 public:
  explicit Quantizer(BitWidthConfig cfg) : cfg_(cfg) {}

  const BitWidthConfig& config() const { return cfg_; }

  // clip[Q(x, k_w), -1 + d(k_w), 1 - d(k_w)]
  RealTensor weight(const RealTensor& x) const;
  RealTensor activation(const RealTensor& x) const { return q_direct(x, cfg_.k_a); }
  RealTensor bn_output(const RealTensor& x) const { return q_direct(x, cfg_.k_bn); }
  RealTensor bn_mean(const RealTensor& x) const { return q_direct(x, cfg_.k_mu); }
  RealTensor bn_std(const RealTensor& x) const { return q_direct(x, cfg_.k_sigma); }
  RealTensor bn_gamma(const RealTensor& x) const { return q_direct(x, cfg_.k_gamma); }
  RealTensor bn_beta(const RealTensor& x) const { return q_direct(x, cfg_.k_beta); }
  RealTensor error_in(const RealTensor& x) const { return shift_quantize(x, cfg_.k_e1); }

  struct ErrorOut {
    RealTensor value;
    std::optional<FlagTensor> flag;
  };
  ErrorOut error_out(const RealTensor& x) const;

  RealTensor weight_grad(const RealTensor& x, int dr_bits, Rounding mode, Rng* rng) const {
    return constant_quantize(x, dr_bits, cfg_.k_gc, mode, rng);
  }
  RealTensor gamma_grad(const RealTensor& x) const { return q_direct(x, cfg_.k_ggamma); }
  RealTensor beta_grad(const RealTensor& x) const { return q_direct(x, cfg_.k_gbeta); }
  RealTensor acc(const RealTensor& x) const { return q_direct(x, cfg_.k_acc); }

 private:
  BitWidthConfig cfg_;
};

}  // namespace intflow
