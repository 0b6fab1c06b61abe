#include "intflow/optimizer.hpp"

#include <cmath>

namespace intflow {

FixedHyper FixedHyper::make(FixedScalar mom, FixedScalar lr, const BitWidthConfig& cfg) {
  FixedHyper h;
  try {
    h.mom = mom.aligned_to(cfg.k_mom);
    h.lr = lr.aligned_to(cfg.k_lr);
  } catch (const RepresentationError& e) {
    throw ConfigError(std::string("hyperparameter off its grid: ") + e.what());
  }
  if (std::abs(h.mom.mantissa) > mantissa_limit(cfg.k_mom))
    throw ConfigError("momentum does not fit " + std::to_string(cfg.k_mom) + " bits");
  if (std::abs(h.lr.mantissa) > mantissa_limit(cfg.k_lr))
    throw ConfigError("learning rate does not fit " + std::to_string(cfg.k_lr) + " bits");
  if (h.lr.mantissa <= 0) throw ConfigError("learning rate must be positive");
  if (h.mom.mantissa < 0 || h.mom.value() >= 1.0)
    throw ConfigError("momentum must lie in [0, 1)");
  return h;
}

ParamOptState ParamOptState::zeros_grid(Shape shape, const BitWidthConfig& cfg) {
  ParamOptState s;
  s.grid = true;
  s.acc_q = QTensor::zeros(std::move(shape), -(cfg.k_acc - 1), cfg.k_acc);
  return s;
}

ParamOptState ParamOptState::zeros_fp(Shape shape) {
  ParamOptState s;
  s.grid = false;
  s.acc_fp = RealTensor::zeros(std::move(shape));
  return s;
}

WidthReport validate_widths(const BitWidthConfig& cfg) {
  WidthReport r;
  r.derived_k_gc = cfg.k_mom + cfg.k_acc - 1;
  r.derived_k_wu = r.derived_k_gc + cfg.k_lr - 1;
  auto fail = [&r](std::string msg) {
    r.ok = false;
    r.violations.push_back(std::move(msg));
  };
  if (cfg.k_gc != r.derived_k_gc)
    fail("k_gc = " + std::to_string(cfg.k_gc) + " but k_mom + k_acc - 1 = " +
         std::to_string(r.derived_k_gc));
  if (cfg.k_ggamma != cfg.k_gc)
    fail("k_ggamma = " + std::to_string(cfg.k_ggamma) + " must equal k_gc = " +
         std::to_string(cfg.k_gc));
  if (cfg.k_gbeta != cfg.k_gc)
    fail("k_gbeta = " + std::to_string(cfg.k_gbeta) + " must equal k_gc = " +
         std::to_string(cfg.k_gc));
  if (cfg.k_wu != cfg.k_gc + cfg.k_lr - 1)
    fail("k_wu = " + std::to_string(cfg.k_wu) + " but k_gc + k_lr - 1 = " +
         std::to_string(cfg.k_gc + cfg.k_lr - 1));
  if (cfg.k_gammau != cfg.k_wu)
    fail("k_gammau = " + std::to_string(cfg.k_gammau) + " must equal k_wu = " +
         std::to_string(cfg.k_wu));
  if (cfg.k_betau != cfg.k_wu)
    fail("k_betau = " + std::to_string(cfg.k_betau) + " must equal k_wu = " +
         std::to_string(cfg.k_wu));
  return r;
}

RealTensor momentum_step(ParamOptState& state, const QTensor& g_q, const FixedHyper& hyper,
                         const BitWidthConfig& cfg) {
  if (!state.grid) throw StateError("momentum_step: state is not on the quantized path");
  if (!same_shape(state.acc_q.shape, g_q.shape))
    throw ShapeError("momentum_step: gradient shape " + shape_str(g_q.shape) +
                     " vs state shape " + shape_str(state.acc_q.shape));
  if (g_q.resolution_exp != -(cfg.k_gc - 1))
    throw StateError("momentum_step: gradient resolution 2^" +
                     std::to_string(g_q.resolution_exp) + " is not the k_gc grid 2^" +
                     std::to_string(-(cfg.k_gc - 1)));
  if (state.acc_q.resolution_exp != -(cfg.k_acc - 1))
    throw StateError("momentum_step: accumulator is not on the k_acc grid");
  if (hyper.mom.resolution_exp != -(cfg.k_mom - 1))
    throw StateError("momentum_step: momentum constant is not on the k_mom grid");

  // mom (2^-(k_mom-1)) times acc (2^-(k_acc-1)) lands exactly on the k_gc
  // grid; g_q is already there, so the sum is exact integer arithmetic.
  const int acc_res = -(cfg.k_acc - 1);
  const int gc_res = -(cfg.k_gc - 1);
  const std::int64_t lim = mantissa_limit(cfg.k_acc);
  const int shift = cfg.k_mom - 1;  // divisor 2^shift rescales k_gc -> k_acc
  const std::int64_t half = shift > 0 ? (std::int64_t(1) << (shift - 1)) : 0;

  RealTensor pre;
  pre.shape = g_q.shape;
  pre.values.resize(g_q.mantissas.size());
  for (std::size_t i = 0; i < g_q.mantissas.size(); ++i) {
    const std::int64_t acc_i =
        hyper.mom.mantissa * static_cast<std::int64_t>(state.acc_q.mantissas[i]) +
        static_cast<std::int64_t>(g_q.mantissas[i]);
    pre.values[i] = std::ldexp(static_cast<double>(acc_i), gc_res);
    // Q_acc: round half away from zero onto the k_acc grid, then clip.
    std::int64_t m = shift > 0 ? (acc_i >= 0 ? (acc_i + half) >> shift : -((-acc_i + half) >> shift))
                               : acc_i;
    if (m > lim) {
      m = lim;
      ++state.saturation_count;
    } else if (m < -lim) {
      m = -lim;
      ++state.saturation_count;
    }
    state.acc_q.mantissas[i] = static_cast<std::int32_t>(m);
  }
  state.acc_q.resolution_exp = acc_res;
  state.acc_q.bit_width = cfg.k_acc;
  return pre;
}

QTensor apply_update(const QTensor& w, const RealTensor& acc, const FixedHyper& hyper,
                     const BitWidthConfig& cfg, int k_store) {
  if (!same_shape(w.shape, acc.shape))
    throw ShapeError("apply_update: weight shape " + shape_str(w.shape) + " vs acc shape " +
                     shape_str(acc.shape));
  if (w.resolution_exp != -(k_store - 1))
    throw StateError("apply_update: weights are not on the " + std::to_string(k_store) +
                     "-bit storage grid");
  if (hyper.lr.resolution_exp != -(cfg.k_lr - 1))
    throw StateError("apply_update: learning rate is not on the k_lr grid");
  if (k_store != cfg.k_gc + cfg.k_lr - 1)
    throw StateError("apply_update: storage width " + std::to_string(k_store) +
                     " breaks the k_gc + k_lr - 1 identity; the update cannot land on the grid");

  QTensor acc_fixed;
  try {
    acc_fixed = to_fixed_at(acc, -(cfg.k_gc - 1), 2);
  } catch (const RepresentationError& e) {
    throw StateError(std::string("apply_update: accumulation off the k_gc grid (width identity "
                                 "violated upstream): ") +
                     e.what());
  }

  const std::int64_t lim = mantissa_limit(k_store);
  QTensor out = w;
  for (std::size_t i = 0; i < w.mantissas.size(); ++i) {
    const std::int64_t delta = hyper.lr.mantissa * static_cast<std::int64_t>(acc_fixed.mantissas[i]);
    std::int64_t m = static_cast<std::int64_t>(w.mantissas[i]) - delta;
    m = std::min(std::max(m, -lim), lim);
    out.mantissas[i] = static_cast<std::int32_t>(m);
  }
  out.bit_width = k_store;
  return out;
}

void momentum_step_fp(RealTensor& acc, const RealTensor& g, double mom) {
  if (!same_shape(acc.shape, g.shape)) throw ShapeError("momentum_step_fp: shape mismatch");
  for (std::size_t i = 0; i < acc.values.size(); ++i)
    acc.values[i] = mom * acc.values[i] + g.values[i];
}

void apply_update_fp(RealTensor& w, const RealTensor& acc, double lr) {
  if (!same_shape(w.shape, acc.shape)) throw ShapeError("apply_update_fp: shape mismatch");
  for (std::size_t i = 0; i < w.values.size(); ++i) w.values[i] -= lr * acc.values[i];
}

}  // namespace intflow
