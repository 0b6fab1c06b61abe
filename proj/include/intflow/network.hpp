#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "intflow/kernels.hpp"
#include "intflow/quantize.hpp"

namespace intflow {

enum class LayerKind : std::uint8_t { dense = 0, conv2d = 1 };
enum class BnBackwardMode : std::uint8_t { frozen = 0, full = 1 };

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  std::int64_t n_in = 0;   // dense fan-in / conv input channels
  std::int64_t n_out = 0;  // dense units / conv filters
  int kernel = 0;
  int stride = 1;
  int pad = 0;
  bool has_bn = true;
  bool quantized = true;
  bool relu = true;

  std::int64_t fan_in() const {
    return kind == LayerKind::dense ? n_in : n_in * kernel * kernel;
  }
  Shape weight_shape() const {
    return kind == LayerKind::dense ? Shape{n_out, n_in}
                                    : Shape{n_out, n_in, kernel, kernel};
  }

  static LayerSpec dense(std::int64_t n_in, std::int64_t n_out, bool has_bn = true,
                         bool quantized = true, bool relu = true);
  static LayerSpec conv(std::int64_t in_ch, std::int64_t out_ch, int kernel, int stride, int pad,
                        bool has_bn = true, bool quantized = true, bool relu = true);
};

// Which dataflows are quantized. Layers with quantized=false (first/last)
// are exempt regardless. The quantized update path consumes the quantized
// gradient grid, so u implies g.
struct QuantPolicy {
  bool w = true, a = true, bn = true, g = true, e1 = true, e2 = true, u = true;

  static QuantPolicy all() { return {}; }
  static QuantPolicy none() { return {false, false, false, false, false, false, false}; }
};

// Tensor in transit between steps: real carrier plus the exact fixed-point
// view when the producing step quantized it. Kernels run on integer
// mantissas whenever both operands carry views.
struct DualTensor {
  RealTensor real;
  std::optional<QTensor> q;

  static DualTensor of(RealTensor r) { return {std::move(r), std::nullopt}; }
};

// A trainable parameter: on the quantized path it lives as a QTensor at its
// storage width; otherwise as plain reals.
struct Param {
  bool grid = false;
  QTensor q;
  RealTensor fp;

  RealTensor real() const { return grid ? from_fixed(q) : fp; }
  const Shape& shape() const { return grid ? q.shape : fp.shape; }
  std::int64_t numel() const { return grid ? q.numel() : const_cast<RealTensor&>(fp).numel(); }
};

struct ForwardCache {
  bool valid = false;
  Shape in_shape;          // input shape before any dense flattening
  DualTensor x0;           // input as consumed
  DualTensor w_used;       // weight view used by the kernel
  RealTensor x1;
  RealTensor mu_q, sigma_q, inv_scale;  // per channel
  RealTensor x_hat;                     // pre-quantization normalized values
  DualTensor x2;
  RealTensor gamma_used, beta_used;     // per channel, as multiplied
  RealTensor act_pre;                   // relu output before activation quantization
  std::vector<std::uint8_t> relu_mask;
};

struct LayerState {
  LayerSpec spec;
  Param w;
  Param gamma, beta;  // meaningful when spec.has_bn
  ForwardCache cache;
};

struct Model {
  std::vector<LayerState> layers;
  BitWidthConfig widths;
  QuantPolicy policy;
  FixedScalar epsilon_q{1, -10};
  BnBackwardMode bn_backward = BnBackwardMode::frozen;
};

// Per-feature (dense) / per-channel (conv) mean and population standard
// deviation over the mini-batch. Throws StateError when the batch dimension
// is < 2.
void batch_stats(const RealTensor& x1, RealTensor& mu, RealTensor& sigma);

// One quantized (or exempt) layer of the forward pass; caches what the
// backward pass needs when training is set.
DualTensor forward_layer(LayerState& layer, const DualTensor& x_in, const Model& model,
                         bool training);

RealTensor model_forward(Model& model, const RealTensor& input, bool training);

// Evaluation path: current-batch statistics, no cache retention, no RNG.
RealTensor inference_forward(Model& model, const RealTensor& input);

}  // namespace intflow
