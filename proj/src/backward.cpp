#include "intflow/backward.hpp"

#include <cmath>

namespace intflow {

namespace {

void bn_dims(const Shape& s, std::int64_t& channels, std::int64_t& batch, std::int64_t& spatial) {
  if (s.size() == 2) {
    batch = s[0];
    channels = s[1];
    spatial = 1;
  } else if (s.size() == 4) {
    batch = s[0];
    channels = s[1];
    spatial = s[2] * s[3];
  } else {
    throw ShapeError("error tensor must be 2-d or 4-d, got " + shape_str(s));
  }
}

RealTensor channel_mul(const RealTensor& x, const RealTensor& v) {
  std::int64_t C, N, sp;
  bn_dims(x.shape, C, N, sp);
  RealTensor out;
  out.shape = x.shape;
  out.values.resize(x.values.size());
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      const double m = v.values[c];
      const std::size_t base = static_cast<std::size_t>((n * C + c) * sp);
      for (std::int64_t i = 0; i < sp; ++i) out.values[base + i] = x.values[base + i] * m;
    }
  return out;
}

void channel_sums(const RealTensor& e1, const RealTensor& x2, RealTensor& g_gamma,
                  RealTensor& g_beta) {
  std::int64_t C, N, sp;
  bn_dims(e1.shape, C, N, sp);
  g_gamma = RealTensor::zeros({C});
  g_beta = RealTensor::zeros({C});
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      const std::size_t base = static_cast<std::size_t>((n * C + c) * sp);
      double sg = 0.0, sb = 0.0;
      for (std::int64_t i = 0; i < sp; ++i) {
        sg += e1.values[base + i] * x2.values[base + i];
        sb += e1.values[base + i];
      }
      g_gamma.values[c] += sg;
      g_beta.values[c] += sb;
    }
}

// Treats mean and std as batch functions of x1: the full Jacobian of
// x_hat = (x1 - mu) / (sigma + eps).
RealTensor bn_full_backward(const RealTensor& e2, const RealTensor& x_hat,
                            const RealTensor& sigma_q, const RealTensor& inv_scale) {
  std::int64_t C, N, sp;
  bn_dims(e2.shape, C, N, sp);
  const double count = static_cast<double>(N * sp);
  RealTensor out;
  out.shape = e2.shape;
  out.values.resize(e2.values.size());
  for (std::int64_t c = 0; c < C; ++c) {
    double s1 = 0.0, s2 = 0.0;
    for (std::int64_t n = 0; n < N; ++n) {
      const std::size_t base = static_cast<std::size_t>((n * C + c) * sp);
      for (std::int64_t i = 0; i < sp; ++i) {
        s1 += e2.values[base + i];
        s2 += e2.values[base + i] * x_hat.values[base + i];
      }
    }
    const double m1 = s1 / count;
    const double m2 = s2 / count;
    const double inv = inv_scale.values[c];
    const double sig = sigma_q.values[c];
    for (std::int64_t n = 0; n < N; ++n) {
      const std::size_t base = static_cast<std::size_t>((n * C + c) * sp);
      for (std::int64_t i = 0; i < sp; ++i) {
        double v = inv * (e2.values[base + i] - m1);
        if (sig > 0.0) v -= x_hat.values[base + i] * m2 / sig;
        out.values[base + i] = v;
      }
    }
  }
  return out;
}

DualTensor quantize_shift_dual(const RealTensor& x, int k) {
  DualTensor out;
  const auto r = pow2_scale(x);
  out.real = shift_quantize(x, k);
  int res = 0;
  if (r) {
    int e = 0;
    std::frexp(*r, &e);
    res = (e - 1) - (k - 1);
  }
  out.q = to_fixed_at(out.real, res, k);
  return out;
}

void apply_mask(DualTensor& t, const std::vector<std::uint8_t>& mask) {
  for (std::size_t i = 0; i < t.real.values.size(); ++i) {
    if (mask[i]) continue;
    t.real.values[i] = 0.0;
    if (t.q) t.q->mantissas[i] = 0;
  }
}

}  // namespace

ErrorTensor backward_layer(LayerState& layer, const ErrorTensor& e_in, const Model& model,
                           const StepContext& ctx, GradientSet& grads) {
  const LayerSpec& spec = layer.spec;
  ForwardCache& cache = layer.cache;
  if (!cache.valid)
    throw StateError("backward_layer: forward cache is missing; run the forward pass first");
  if (e_in.stage != ErrorStage::e4)
    throw StateError("backward_layer: incoming error must be stage e4");
  if (!same_shape(e_in.t.real.shape, cache.x1.shape))
    throw ShapeError("backward_layer: error shape " + shape_str(e_in.t.real.shape) +
                     " does not match layer output " + shape_str(cache.x1.shape));

  const Quantizer qz(model.widths);
  const bool qlayer = spec.quantized;
  const QuantPolicy& pol = model.policy;
  const ConvGeom geom{spec.stride, spec.pad};

  // E1: requantize the incoming error (quantizers are identity under STE, so
  // the upstream gradient passes straight into the quantizer).
  DualTensor e0;
  if (qlayer && pol.e1) {
    e0 = quantize_shift_dual(ste_gradient(e_in.t.real), model.widths.k_e1);
  } else {
    e0.real = e_in.t.real;
  }

  DualTensor e1 = e0;
  apply_mask(e1, cache.relu_mask);

  RealTensor pre3;
  if (spec.has_bn) {
    const RealTensor e2 = channel_mul(e1.real, cache.gamma_used);
    // The frozen-statistics diagonal is the quantized-BN backward; paths
    // whose BN runs unquantized take the standard full Jacobian.
    const BnBackwardMode mode =
        (qlayer && pol.bn) ? model.bn_backward : BnBackwardMode::full;
    pre3 = (mode == BnBackwardMode::frozen)
               ? channel_mul(e2, cache.inv_scale)
               : bn_full_backward(e2, cache.x_hat, cache.sigma_q, cache.inv_scale);
  } else {
    pre3 = e1.real;
  }

  DualTensor e3;
  std::optional<FlagTensor> e3_flag;
  if (qlayer && pol.e2) {
    if (model.widths.e2_mode == E2Mode::flag) {
      FlagTensor f = flag_encode(pre3, model.widths.k_e2);
      e3.real = flag_decode(f);
      e3.q = to_fixed_at(e3.real, f.scale_exp - f.data_bits, model.widths.k_e2);
      e3_flag = std::move(f);
    } else {
      e3 = quantize_shift_dual(pre3, model.widths.k_e2);
    }
  } else {
    e3.real = pre3;
  }

  RealTensor e4;
  const bool int_kernels = e3.q.has_value() && cache.w_used.q.has_value();
  if (spec.kind == LayerKind::dense) {
    e4 = int_kernels ? matmul(*e3.q, *cache.w_used.q) : matmul(e3.real, cache.w_used.real);
  } else {
    const std::int64_t in_h = cache.x0.real.shape[2], in_w = cache.x0.real.shape[3];
    e4 = int_kernels ? conv2d_input_grad(*e3.q, *cache.w_used.q, geom, in_h, in_w)
                     : conv2d_input_grad(e3.real, cache.w_used.real, geom, in_h, in_w);
  }
  e4.shape = cache.in_shape;  // undo any dense flattening for the layer below

  grads = GradientSet{};
  grads.has_bn = spec.has_bn;
  const bool int_grad = e3.q.has_value() && cache.x0.q.has_value();
  if (spec.kind == LayerKind::dense) {
    grads.g_w = int_grad ? matmul_tn(*e3.q, *cache.x0.q) : matmul_tn(e3.real, cache.x0.real);
  } else {
    grads.g_w = int_grad
                    ? conv2d_weight_grad(*e3.q, *cache.x0.q, geom, spec.kernel, spec.kernel)
                    : conv2d_weight_grad(e3.real, cache.x0.real, geom, spec.kernel, spec.kernel);
  }
  if (spec.has_bn) channel_sums(e1.real, cache.x2.real, grads.g_gamma, grads.g_beta);

  const int gc_res = -(model.widths.k_gc - 1);
  if (qlayer && pol.g) {
    grads.g_wq.real = qz.weight_grad(grads.g_w, ctx.dr_bits, ctx.rounding, ctx.rng);
    grads.g_wq.q = to_fixed_at(grads.g_wq.real, gc_res, 2);
    if (spec.has_bn) {
      grads.g_gammaq.real = qz.gamma_grad(grads.g_gamma);
      grads.g_gammaq.q = to_fixed_at(grads.g_gammaq.real, gc_res, 2);
      grads.g_betaq.real = qz.beta_grad(grads.g_beta);
      grads.g_betaq.q = to_fixed_at(grads.g_betaq.real, gc_res, 2);
    }
  } else {
    grads.g_wq.real = grads.g_w;
    if (spec.has_bn) {
      grads.g_gammaq.real = grads.g_gamma;
      grads.g_betaq.real = grads.g_beta;
    }
  }
  grads.e3_pre = std::move(pre3);
  grads.e3_post = e3.real;
  grads.e3_flag = std::move(e3_flag);

  cache.valid = false;  // one backward per forward

  ErrorTensor out;
  out.t.real = std::move(e4);
  out.stage = ErrorStage::e4;
  return out;
}

std::pair<double, RealTensor> loss_and_error(const RealTensor& logits,
                                             const std::vector<int>& labels) {
  if (logits.shape.size() != 2)
    throw ShapeError("loss_and_error: logits must be [N, classes], got " +
                     shape_str(logits.shape));
  const std::int64_t n = logits.shape[0], classes = logits.shape[1];
  if (static_cast<std::int64_t>(labels.size()) != n)
    throw ShapeError("loss_and_error: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(n));
  RealTensor grad = RealTensor::zeros(logits.shape);
  double loss = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::int64_t i = 0; i < n; ++i) {
    const int label = labels[static_cast<std::size_t>(i)];
    if (label < 0 || label >= classes)
      throw Error("label " + std::to_string(label) + " out of range [0, " +
                  std::to_string(classes) + ")");
    const double* row = logits.values.data() + i * classes;
    double mx = row[0];
    for (std::int64_t c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
    double sum = 0.0;
    for (std::int64_t c = 0; c < classes; ++c) sum += std::exp(row[c] - mx);
    const double lse = mx + std::log(sum);
    loss += (lse - row[label]) * inv_n;
    double* grow = grad.values.data() + i * classes;
    for (std::int64_t c = 0; c < classes; ++c)
      grow[c] = (std::exp(row[c] - mx) / sum - (c == label ? 1.0 : 0.0)) * inv_n;
  }
  return {loss, std::move(grad)};
}

}  // namespace intflow
