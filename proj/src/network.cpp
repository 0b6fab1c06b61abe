#include "intflow/network.hpp"

#include <cmath>

namespace intflow {

LayerSpec LayerSpec::dense(std::int64_t n_in, std::int64_t n_out, bool has_bn, bool quantized,
                           bool relu) {
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.n_in = n_in;
  s.n_out = n_out;
  s.has_bn = has_bn;
  s.quantized = quantized;
  s.relu = relu;
  if (n_in < 1 || n_out < 1) throw ConfigError("dense layer needs n_in, n_out >= 1");
  return s;
}

LayerSpec LayerSpec::conv(std::int64_t in_ch, std::int64_t out_ch, int kernel, int stride, int pad,
                          bool has_bn, bool quantized, bool relu) {
  LayerSpec s;
  s.kind = LayerKind::conv2d;
  s.n_in = in_ch;
  s.n_out = out_ch;
  s.kernel = kernel;
  s.stride = stride;
  s.pad = pad;
  s.has_bn = has_bn;
  s.quantized = quantized;
  s.relu = relu;
  if (in_ch < 1 || out_ch < 1 || kernel < 1 || stride < 1 || pad < 0)
    throw ConfigError("invalid conv layer geometry");
  return s;
}

namespace {

// Channel count and per-channel element count of the BN reduction.
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
    throw ShapeError("batch statistics expect a 2-d or 4-d tensor, got " + shape_str(s));
  }
}

// y[n,c,i] = gamma[c] * x[n,c,i] + beta[c]; all operands dyadic on the
// quantized path, products and sums stay exact in doubles.
RealTensor scale_offset(const RealTensor& x, const RealTensor& gamma, const RealTensor& beta) {
  std::int64_t C, N, sp;
  bn_dims(x.shape, C, N, sp);
  RealTensor out;
  out.shape = x.shape;
  out.values.resize(x.values.size());
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      const double g = gamma.values[c], b = beta.values[c];
      const std::size_t base = static_cast<std::size_t>((n * C + c) * sp);
      for (std::int64_t i = 0; i < sp; ++i)
        out.values[base + i] = g * x.values[base + i] + b;
    }
  return out;
}

DualTensor flatten_for_dense(const DualTensor& x) {
  DualTensor out = x;
  if (out.real.shape.size() > 2) {
    const std::int64_t n = out.real.shape[0];
    const std::int64_t rest = out.real.numel() / n;
    out.real.shape = {n, rest};
    if (out.q) out.q->shape = {n, rest};
  }
  return out;
}

}  // namespace

void batch_stats(const RealTensor& x1, RealTensor& mu, RealTensor& sigma) {
  std::int64_t C, N, sp;
  bn_dims(x1.shape, C, N, sp);
  if (N < 2) throw StateError("batch statistics need a batch of >= 2, got " + std::to_string(N));
  mu = RealTensor::zeros({C});
  sigma = RealTensor::zeros({C});
  const std::int64_t count = N * sp;
  for (std::int64_t c = 0; c < C; ++c) {
    double sum = 0.0;
    for (std::int64_t n = 0; n < N; ++n) {
      const std::size_t base = static_cast<std::size_t>((n * C + c) * sp);
      for (std::int64_t i = 0; i < sp; ++i) sum += x1.values[base + i];
    }
    const double mean = sum / static_cast<double>(count);
    double sq = 0.0;
    for (std::int64_t n = 0; n < N; ++n) {
      const std::size_t base = static_cast<std::size_t>((n * C + c) * sp);
      for (std::int64_t i = 0; i < sp; ++i) {
        const double d = x1.values[base + i] - mean;
        sq += d * d;
      }
    }
    mu.values[c] = mean;
    sigma.values[c] = std::sqrt(std::max(sq / static_cast<double>(count), 0.0));
  }
}

DualTensor forward_layer(LayerState& layer, const DualTensor& x_in, const Model& model,
                         bool training) {
  const LayerSpec& spec = layer.spec;
  const Quantizer qz(model.widths);
  const bool qlayer = spec.quantized;
  const QuantPolicy& pol = model.policy;

  const Shape in_shape = x_in.real.shape;
  DualTensor x0 = spec.kind == LayerKind::dense ? flatten_for_dense(x_in) : x_in;
  if (spec.kind == LayerKind::dense) {
    if (x0.real.shape.size() != 2 || x0.real.shape[1] != spec.n_in)
      throw ShapeError("dense layer expects [N," + std::to_string(spec.n_in) + "], got " +
                       shape_str(in_shape));
  } else if (x0.real.shape.size() != 4 || x0.real.shape[1] != spec.n_in) {
    throw ShapeError("conv layer expects [N," + std::to_string(spec.n_in) + ",H,W], got " +
                     shape_str(in_shape));
  }

  // A quantized layer consumes a k_a input; quantize at the boundary when the
  // producer did not (raw input after the unquantized first layer).
  if (qlayer && pol.a && !x0.q) {
    x0.real = qz.activation(x0.real);
    x0.q = to_fixed_at(x0.real, -(model.widths.k_a - 1), model.widths.k_a);
  }

  DualTensor w_used;
  if (qlayer && pol.w) {
    w_used.real = qz.weight(layer.w.real());
    w_used.q = to_fixed_at(w_used.real, -(model.widths.k_w - 1), model.widths.k_w);
  } else {
    w_used.real = layer.w.real();
  }

  RealTensor x1;
  const ConvGeom geom{spec.stride, spec.pad};
  if (x0.q && w_used.q) {
    x1 = spec.kind == LayerKind::dense ? matmul_nt(*x0.q, *w_used.q)
                                       : conv2d(*x0.q, *w_used.q, geom);
  } else {
    x1 = spec.kind == LayerKind::dense ? matmul_nt(x0.real, w_used.real)
                                       : conv2d(x0.real, w_used.real, geom);
  }

  RealTensor x3;
  RealTensor mu_q, sigma_q, inv_scale, x_hat, gamma_used, beta_used;
  DualTensor x2;
  if (spec.has_bn) {
    RealTensor mu, sigma;
    batch_stats(x1, mu, sigma);
    const bool qbn = qlayer && pol.bn;
    mu_q = qbn ? qz.bn_mean(mu) : std::move(mu);
    sigma_q = qbn ? qz.bn_std(sigma) : std::move(sigma);
    const double eps = model.epsilon_q.value();
    inv_scale = RealTensor::zeros(sigma_q.shape);
    for (std::size_t c = 0; c < inv_scale.values.size(); ++c)
      inv_scale.values[c] = 1.0 / (sigma_q.values[c] + eps);

    std::int64_t C, N, sp;
    bn_dims(x1.shape, C, N, sp);
    x_hat = RealTensor::zeros(x1.shape);
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t c = 0; c < C; ++c) {
        const std::size_t base = static_cast<std::size_t>((n * C + c) * sp);
        for (std::int64_t i = 0; i < sp; ++i)
          x_hat.values[base + i] = (x1.values[base + i] - mu_q.values[c]) * inv_scale.values[c];
      }
    if (qbn) {
      x2.real = qz.bn_output(x_hat);
      x2.q = to_fixed_at(x2.real, -(model.widths.k_bn - 1), model.widths.k_bn);
      gamma_used = qz.bn_gamma(layer.gamma.real());
      beta_used = qz.bn_beta(layer.beta.real());
    } else {
      x2.real = x_hat;
      gamma_used = layer.gamma.real();
      beta_used = layer.beta.real();
    }
    x3 = scale_offset(x2.real, gamma_used, beta_used);
  } else {
    x3 = x1;
  }

  std::vector<std::uint8_t> mask(x3.values.size(), 1);
  RealTensor act = x3;
  if (spec.relu) {
    for (std::size_t i = 0; i < act.values.size(); ++i) {
      if (act.values[i] > 0.0) continue;
      act.values[i] = 0.0;
      mask[i] = 0;
    }
  }

  DualTensor x4;
  if (qlayer && pol.a) {
    x4.real = qz.activation(act);
    x4.q = to_fixed_at(x4.real, -(model.widths.k_a - 1), model.widths.k_a);
  } else {
    x4.real = act;
  }

  if (training) {
    ForwardCache& c = layer.cache;
    c.valid = true;
    c.in_shape = in_shape;
    c.x0 = std::move(x0);
    c.w_used = std::move(w_used);
    c.x1 = std::move(x1);
    c.mu_q = std::move(mu_q);
    c.sigma_q = std::move(sigma_q);
    c.inv_scale = std::move(inv_scale);
    c.x_hat = std::move(x_hat);
    c.x2 = std::move(x2);
    c.gamma_used = std::move(gamma_used);
    c.beta_used = std::move(beta_used);
    c.act_pre = std::move(act);
    c.relu_mask = std::move(mask);
  }
  return x4;
}

RealTensor model_forward(Model& model, const RealTensor& input, bool training) {
  if (model.layers.empty()) throw StateError("model has no layers");
  DualTensor x = DualTensor::of(input);
  for (LayerState& layer : model.layers) x = forward_layer(layer, x, model, training);
  return x.real;
}

RealTensor inference_forward(Model& model, const RealTensor& input) {
  return model_forward(model, input, false);
}

}  // namespace intflow
