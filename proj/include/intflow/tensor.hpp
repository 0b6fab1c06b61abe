#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "intflow/fixed.hpp"

namespace intflow {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);
bool same_shape(const Shape& a, const Shape& b);

// Dense row-major tensor of doubles. Post-quantization values are always
// dyadic and therefore exact in this carrier.
struct RealTensor {
  Shape shape;
  std::vector<double> values;

  static RealTensor zeros(Shape s);
  static RealTensor full(Shape s, double v);

  std::int64_t numel() const { return static_cast<std::int64_t>(values.size()); }
  double operator[](std::size_t i) const { return values[i]; }
  double& operator[](std::size_t i) { return values[i]; }
};

// Validates shape/value count and finiteness.
RealTensor make_real(Shape shape, std::vector<double> values);

// Integer-mantissa tensor: value_i = mantissas_i * 2^resolution_exp, with
// every mantissa inside the symmetric bit_width range.
struct QTensor {
  Shape shape;
  std::vector<std::int32_t> mantissas;
  int resolution_exp = 0;
  int bit_width = 2;

  static QTensor zeros(Shape s, int resolution_exp, int bit_width);

  std::int64_t numel() const { return static_cast<std::int64_t>(mantissas.size()); }
  double value(std::size_t i) const {
    return std::ldexp(static_cast<double>(mantissas[i]), resolution_exp);
  }
};

QTensor make_qtensor(Shape shape, std::vector<std::int32_t> mantissas, int resolution_exp,
                     int bit_width);

// Strict storage conversion at the canonical k-bit grid (exponent -(k-1)).
// Never rounds: off-grid or out-of-range input raises RepresentationError
// naming the offending index.
QTensor to_fixed(const RealTensor& x, int k);

// Exact conversion at an explicit resolution; the declared width is at least
// min_bit_width and grows to fit the largest mantissa.
QTensor to_fixed_at(const RealTensor& x, int resolution_exp, int min_bit_width);

RealTensor from_fixed(const QTensor& q);

// True when every value lies exactly on the 2^resolution_exp grid.
bool on_grid(const RealTensor& x, int resolution_exp);

// Elementwise round(x * 2^{k-1}) / 2^{k-1}; no range clipping here.
RealTensor q_direct(const RealTensor& x, int k);

// Elementwise saturation min(max(x, lo), hi).
RealTensor clip(const RealTensor& x, double lo, double hi);

}  // namespace intflow
