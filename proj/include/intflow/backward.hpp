#pragma once

#include <utility>

#include "intflow/network.hpp"

namespace intflow {

enum class ErrorStage : std::uint8_t { e0 = 0, e1 = 1, e2 = 2, e3 = 3, e4 = 4 };

// Activation gradient in transit between layers. Layers exchange stage-e4
// tensors at full intermediate precision; the receiving layer's E1 quantizer
// requantizes on entry.
struct ErrorTensor {
  DualTensor t;
  ErrorStage stage = ErrorStage::e4;
  std::optional<FlagTensor> flag;  // e3's code when the flag format produced it

  static ErrorTensor top(RealTensor loss_grad) {
    return ErrorTensor{DualTensor::of(std::move(loss_grad)), ErrorStage::e4, std::nullopt};
  }
};

struct GradientSet {
  bool has_bn = false;
  RealTensor g_w, g_gamma, g_beta;     // pre-quantization
  DualTensor g_wq, g_gammaq, g_betaq;  // as handed to the optimizer
  RealTensor e3_pre, e3_post;          // the error between conv and BN, for coverage/histograms
  std::optional<FlagTensor> e3_flag;
};

struct StepContext {
  int dr_bits = 8;
  Rounding rounding = Rounding::stochastic;
  Rng* rng = nullptr;
};

// Quantizers act as identity in the backward pass.
inline RealTensor ste_gradient(const RealTensor& upstream) { return upstream; }

// One layer of the backward pass; consumes the forward cache, emits the
// error for the layer below and this layer's quantized gradients.
ErrorTensor backward_layer(LayerState& layer, const ErrorTensor& e_in, const Model& model,
                           const StepContext& ctx, GradientSet& grads);

// Softmax cross-entropy over the batch mean; returns the loss and the
// gradient with respect to the logits (rows carry the 1/N factor, so all
// parameter gradients are batch-size independent in scale).
std::pair<double, RealTensor> loss_and_error(const RealTensor& logits,
                                             const std::vector<int>& labels);

}  // namespace intflow
