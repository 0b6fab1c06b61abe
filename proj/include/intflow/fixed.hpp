#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace intflow {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};
class RepresentationError : public Error {
 public:
  using Error::Error;
};
class ConfigError : public Error {
 public:
  using Error::Error;
};
class StateError : public Error {
 public:
  using Error::Error;
};
class IoError : public Error {
 public:
  using Error::Error;
};

// Minimum interval of a k-bit fixed-point grid: 2^{1-k}.
inline double grid_step(int k) {
  if (k < 1) throw ConfigError("grid_step: bit width must be >= 1, got " + std::to_string(k));
  return std::ldexp(1.0, 1 - k);
}

// Largest mantissa magnitude of a k-bit value under the symmetric range.
inline std::int64_t mantissa_limit(int k) {
  if (k < 2 || k > 62) throw ConfigError("mantissa_limit: unsupported bit width " + std::to_string(k));
  return (std::int64_t(1) << (k - 1)) - 1;
}

// Ties round away from zero, uniformly across the project.
inline double round_half_away(double x) { return std::round(x); }

// Smallest width whose symmetric mantissa range holds |m| <= limit.
inline int bits_for_mantissa(std::int64_t max_abs) {
  int k = 2;
  while (max_abs > mantissa_limit(k)) ++k;
  return k;
}

// A scalar held exactly as mantissa * 2^resolution_exp.
struct FixedScalar {
  std::int64_t mantissa = 0;
  int resolution_exp = 0;

  double value() const { return std::ldexp(static_cast<double>(mantissa), resolution_exp); }

  // Same value with the smallest odd mantissa; zero normalizes to exponent 0.
  FixedScalar normalized() const {
    FixedScalar r = *this;
    if (r.mantissa == 0) {
      r.resolution_exp = 0;
      return r;
    }
    while ((r.mantissa & 1) == 0) {
      r.mantissa >>= 1;
      ++r.resolution_exp;
    }
    return r;
  }

  // Re-express on the canonical k-bit grid (exponent -(k-1)).
  FixedScalar aligned_to(int k) const {
    const int target = -(k - 1);
    const int shift = resolution_exp - target;
    FixedScalar r{mantissa, target};
    if (shift >= 0) {
      if (shift > 62 || (mantissa != 0 && std::abs(mantissa) > (mantissa_limit(62) >> shift)))
        throw RepresentationError("fixed scalar does not fit the " + std::to_string(k) + "-bit grid");
      r.mantissa = mantissa << shift;
    } else {
      const std::int64_t div = std::int64_t(1) << (-shift);
      if (mantissa % div != 0)
        throw RepresentationError("fixed scalar " + std::to_string(mantissa) + "*2^" +
                                  std::to_string(resolution_exp) + " is off the " +
                                  std::to_string(k) + "-bit grid");
      r.mantissa = mantissa / div;
    }
    return r;
  }

  bool representable_in(int k) const {
    try {
      return std::abs(aligned_to(k).mantissa) <= mantissa_limit(k);
    } catch (const RepresentationError&) {
      return false;
    }
  }
};

inline bool operator==(const FixedScalar& a, const FixedScalar& b) {
  const FixedScalar na = a.normalized(), nb = b.normalized();
  return na.mantissa == nb.mantissa && (na.mantissa == 0 || na.resolution_exp == nb.resolution_exp);
}
inline bool operator!=(const FixedScalar& a, const FixedScalar& b) { return !(a == b); }

}  // namespace intflow
