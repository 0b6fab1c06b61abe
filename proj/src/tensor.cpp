#include "intflow/tensor.hpp"

#include <cmath>
#include <sstream>

namespace intflow {

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (std::int64_t d : s) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

RealTensor RealTensor::zeros(Shape s) {
  RealTensor t;
  const std::int64_t n = shape_numel(s);
  t.shape = std::move(s);
  t.values.assign(static_cast<std::size_t>(n), 0.0);
  return t;
}

RealTensor RealTensor::full(Shape s, double v) {
  RealTensor t = zeros(std::move(s));
  for (double& x : t.values) x = v;
  return t;
}

RealTensor make_real(Shape shape, std::vector<double> values) {
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     shape_str(shape));
  for (std::size_t i = 0; i < values.size(); ++i)
    if (!std::isfinite(values[i]))
      throw RepresentationError("non-finite value at index " + std::to_string(i));
  RealTensor t;
  t.shape = std::move(shape);
  t.values = std::move(values);
  return t;
}

QTensor QTensor::zeros(Shape s, int resolution_exp, int bit_width) {
  QTensor q;
  const std::int64_t n = shape_numel(s);
  q.shape = std::move(s);
  q.mantissas.assign(static_cast<std::size_t>(n), 0);
  q.resolution_exp = resolution_exp;
  q.bit_width = bit_width;
  return q;
}

QTensor make_qtensor(Shape shape, std::vector<std::int32_t> mantissas, int resolution_exp,
                     int bit_width) {
  if (bit_width < 2 || bit_width > 32)
    throw ConfigError("bit width must be in [2, 32], got " + std::to_string(bit_width));
  if (shape_numel(shape) != static_cast<std::int64_t>(mantissas.size()))
    throw ShapeError("mantissa count " + std::to_string(mantissas.size()) +
                     " does not match shape " + shape_str(shape));
  const std::int64_t lim = bit_width >= 32 ? mantissa_limit(32) : mantissa_limit(bit_width);
  for (std::size_t i = 0; i < mantissas.size(); ++i)
    if (std::abs(static_cast<std::int64_t>(mantissas[i])) > lim)
      throw RepresentationError("mantissa " + std::to_string(mantissas[i]) + " at index " +
                                std::to_string(i) + " exceeds the " + std::to_string(bit_width) +
                                "-bit range");
  QTensor q;
  q.shape = std::move(shape);
  q.mantissas = std::move(mantissas);
  q.resolution_exp = resolution_exp;
  q.bit_width = bit_width;
  return q;
}

QTensor to_fixed(const RealTensor& x, int k) {
  if (k < 2 || k > 32) throw ConfigError("to_fixed: bit width must be in [2, 32]");
  const int res = -(k - 1);
  const std::int64_t lim = mantissa_limit(k);
  std::vector<std::int32_t> m(x.values.size());
  for (std::size_t i = 0; i < x.values.size(); ++i) {
    const double scaled = std::ldexp(x.values[i], -res);
    if (!std::isfinite(scaled) || scaled != std::trunc(scaled))
      throw RepresentationError("value " + std::to_string(x.values[i]) + " at index " +
                                std::to_string(i) + " is off the " + std::to_string(k) +
                                "-bit grid");
    const std::int64_t mi = static_cast<std::int64_t>(scaled);
    if (std::abs(mi) > lim)
      throw RepresentationError("value " + std::to_string(x.values[i]) + " at index " +
                                std::to_string(i) + " is outside the " + std::to_string(k) +
                                "-bit range");
    m[i] = static_cast<std::int32_t>(mi);
  }
  QTensor q;
  q.shape = x.shape;
  q.mantissas = std::move(m);
  q.resolution_exp = res;
  q.bit_width = k;
  return q;
}

QTensor to_fixed_at(const RealTensor& x, int resolution_exp, int min_bit_width) {
  std::vector<std::int32_t> m(x.values.size());
  std::int64_t max_abs = 0;
  for (std::size_t i = 0; i < x.values.size(); ++i) {
    const double scaled = std::ldexp(x.values[i], -resolution_exp);
    if (!std::isfinite(scaled) || scaled != std::trunc(scaled) ||
        std::abs(scaled) > static_cast<double>(mantissa_limit(32)))
      throw RepresentationError("value " + std::to_string(x.values[i]) + " at index " +
                                std::to_string(i) + " is off the 2^" +
                                std::to_string(resolution_exp) + " grid");
    const std::int64_t mi = static_cast<std::int64_t>(scaled);
    max_abs = std::max(max_abs, std::abs(mi));
    m[i] = static_cast<std::int32_t>(mi);
  }
  QTensor q;
  q.shape = x.shape;
  q.mantissas = std::move(m);
  q.resolution_exp = resolution_exp;
  q.bit_width = std::max(min_bit_width, bits_for_mantissa(max_abs));
  return q;
}

RealTensor from_fixed(const QTensor& q) {
  RealTensor t;
  t.shape = q.shape;
  t.values.resize(q.mantissas.size());
  for (std::size_t i = 0; i < q.mantissas.size(); ++i) t.values[i] = q.value(i);
  return t;
}

bool on_grid(const RealTensor& x, int resolution_exp) {
  for (double v : x.values) {
    const double scaled = std::ldexp(v, -resolution_exp);
    if (!std::isfinite(scaled) || scaled != std::trunc(scaled)) return false;
  }
  return true;
}

RealTensor q_direct(const RealTensor& x, int k) {
  if (k < 2) throw ConfigError("q_direct: bit width must be >= 2, got " + std::to_string(k));
  RealTensor out;
  out.shape = x.shape;
  out.values.resize(x.values.size());
  for (std::size_t i = 0; i < x.values.size(); ++i) {
    if (!std::isfinite(x.values[i]))
      throw RepresentationError("q_direct: non-finite value at index " + std::to_string(i));
    const double m = round_half_away(std::ldexp(x.values[i], k - 1));
    double v = std::ldexp(m, -(k - 1));
    if (v == 0.0) v = 0.0;  // canonical zero
    out.values[i] = v;
  }
  return out;
}

RealTensor clip(const RealTensor& x, double lo, double hi) {
  if (lo > hi) throw ConfigError("clip: lo > hi");
  RealTensor out;
  out.shape = x.shape;
  out.values.resize(x.values.size());
  for (std::size_t i = 0; i < x.values.size(); ++i)
    out.values[i] = std::min(std::max(x.values[i], lo), hi);
  return out;
}

}  // namespace intflow
