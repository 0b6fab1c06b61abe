#pragma once

#include <string>
#include <vector>

#include "intflow/quantize.hpp"

namespace intflow {

// Momentum coefficient and learning rate as exact fixed-point constants,
// held at the canonical exponents of their configured widths so mantissa
// products line up with the gradient and storage grids.
struct FixedHyper {
  FixedScalar mom;  // exponent -(k_mom - 1)
  FixedScalar lr;   // exponent -(k_lr - 1)

  static FixedHyper make(FixedScalar mom, FixedScalar lr, const BitWidthConfig& cfg);
};

// Per-parameter optimizer state. Quantized parameters carry the k_acc-bit
// accumulation; unquantized ones a plain real accumulation.
struct ParamOptState {
  bool grid = false;
  QTensor acc_q;       // valid when grid
  RealTensor acc_fp;   // valid when !grid
  std::int64_t saturation_count = 0;

  static ParamOptState zeros_grid(Shape shape, const BitWidthConfig& cfg);
  static ParamOptState zeros_fp(Shape shape);
};

struct WidthReport {
  bool ok = true;
  std::vector<std::string> violations;
  int derived_k_gc = 0;
  int derived_k_wu = 0;
};

// Checks the closure identities k_gc = k_mom + k_acc - 1 and
// k_wu = k_gc + k_lr - 1 (and the gamma/beta aliases); report-valued.
WidthReport validate_widths(const BitWidthConfig& cfg);

// Acc_i = mom * Acc_{i-1,q} + g_q, returned at full pre-quantization
// precision (exactly on the k_gc grid); the state stores
// Acc_iq = Q_acc(Acc_i) clipped to the k_acc range, counting saturations.
RealTensor momentum_step(ParamOptState& state, const QTensor& g_q, const FixedHyper& hyper,
                         const BitWidthConfig& cfg);

// W' = clip(W - lr * acc, -1 + d(k_store), 1 - d(k_store)). The width
// identities guarantee lr * acc lands exactly on the k_store grid; an
// off-grid delta indicates a violated identity upstream and throws.
QTensor apply_update(const QTensor& w, const RealTensor& acc, const FixedHyper& hyper,
                     const BitWidthConfig& cfg, int k_store);

// Real-valued path for unquantized parameters.
void momentum_step_fp(RealTensor& acc, const RealTensor& g, double mom);
void apply_update_fp(RealTensor& w, const RealTensor& acc, double lr);

}  // namespace intflow
