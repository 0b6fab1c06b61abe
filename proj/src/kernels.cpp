#include "intflow/kernels.hpp"

#include <cmath>

namespace intflow {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

void require_dims(const Shape& s, std::size_t n, const char* what) {
  require(s.size() == n, std::string(what) + ": expected " + std::to_string(n) +
                             " dimensions, got shape " + shape_str(s));
}

// Scales an integer accumulation back to real values, exponents add.
RealTensor scaled(Shape shape, std::vector<std::int64_t> acc, int exp) {
  RealTensor out;
  out.shape = std::move(shape);
  out.values.resize(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i)
    out.values[i] = std::ldexp(static_cast<double>(acc[i]), exp);
  return out;
}

RealTensor carried(Shape shape, std::vector<double> acc) {
  RealTensor out;
  out.shape = std::move(shape);
  out.values = std::move(acc);
  return out;
}

template <class T, class Acc>
std::vector<Acc> matmul_core(const T* a, const T* b, std::int64_t m, std::int64_t k,
                             std::int64_t n) {
  std::vector<Acc> out(static_cast<std::size_t>(m * n), Acc(0));
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t t = 0; t < k; ++t) {
      const Acc av = static_cast<Acc>(a[i * k + t]);
      if (av == Acc(0)) continue;
      const T* brow = b + t * n;
      Acc* orow = out.data() + i * n;
      for (std::int64_t j = 0; j < n; ++j) orow[j] += av * static_cast<Acc>(brow[j]);
    }
  return out;
}

template <class T, class Acc>
std::vector<Acc> matmul_nt_core(const T* a, const T* b, std::int64_t m, std::int64_t k,
                                std::int64_t n) {
  std::vector<Acc> out(static_cast<std::size_t>(m * n));
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) {
      Acc acc(0);
      const T* ar = a + i * k;
      const T* br = b + j * k;
      for (std::int64_t t = 0; t < k; ++t) acc += static_cast<Acc>(ar[t]) * static_cast<Acc>(br[t]);
      out[i * n + j] = acc;
    }
  return out;
}

template <class T, class Acc>
std::vector<Acc> matmul_tn_core(const T* a, const T* b, std::int64_t k, std::int64_t m,
                                std::int64_t n) {
  std::vector<Acc> out(static_cast<std::size_t>(m * n), Acc(0));
  for (std::int64_t t = 0; t < k; ++t)
    for (std::int64_t i = 0; i < m; ++i) {
      const Acc av = static_cast<Acc>(a[t * m + i]);
      if (av == Acc(0)) continue;
      const T* brow = b + t * n;
      Acc* orow = out.data() + i * n;
      for (std::int64_t j = 0; j < n; ++j) orow[j] += av * static_cast<Acc>(brow[j]);
    }
  return out;
}

template <class T, class Acc>
std::vector<Acc> conv_core(const T* x, const T* w, std::int64_t N, std::int64_t C, std::int64_t H,
                           std::int64_t W, std::int64_t F, std::int64_t KH, std::int64_t KW,
                           std::int64_t OH, std::int64_t OW, int stride, int pad) {
  std::vector<Acc> out(static_cast<std::size_t>(N * F * OH * OW), Acc(0));
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t f = 0; f < F; ++f)
      for (std::int64_t oh = 0; oh < OH; ++oh)
        for (std::int64_t ow = 0; ow < OW; ++ow) {
          Acc acc(0);
          for (std::int64_t c = 0; c < C; ++c) {
            const T* xc = x + ((n * C + c) * H) * W;
            const T* wc = w + ((f * C + c) * KH) * KW;
            for (std::int64_t kh = 0; kh < KH; ++kh) {
              const std::int64_t h = oh * stride - pad + kh;
              if (h < 0 || h >= H) continue;
              for (std::int64_t kw = 0; kw < KW; ++kw) {
                const std::int64_t wd = ow * stride - pad + kw;
                if (wd < 0 || wd >= W) continue;
                acc += static_cast<Acc>(xc[h * W + wd]) * static_cast<Acc>(wc[kh * KW + kw]);
              }
            }
          }
          out[((n * F + f) * OH + oh) * OW + ow] = acc;
        }
  return out;
}

template <class T, class Acc>
std::vector<Acc> conv_input_grad_core(const T* e, const T* w, std::int64_t N, std::int64_t F,
                                      std::int64_t OH, std::int64_t OW, std::int64_t C,
                                      std::int64_t KH, std::int64_t KW, std::int64_t H,
                                      std::int64_t W, int stride, int pad) {
  std::vector<Acc> out(static_cast<std::size_t>(N * C * H * W), Acc(0));
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t f = 0; f < F; ++f) {
      const T* ef = e + ((n * F + f) * OH) * OW;
      for (std::int64_t oh = 0; oh < OH; ++oh)
        for (std::int64_t ow = 0; ow < OW; ++ow) {
          const Acc ev = static_cast<Acc>(ef[oh * OW + ow]);
          if (ev == Acc(0)) continue;
          for (std::int64_t c = 0; c < C; ++c) {
            const T* wc = w + ((f * C + c) * KH) * KW;
            Acc* oc = out.data() + ((n * C + c) * H) * W;
            for (std::int64_t kh = 0; kh < KH; ++kh) {
              const std::int64_t h = oh * stride - pad + kh;
              if (h < 0 || h >= H) continue;
              for (std::int64_t kw = 0; kw < KW; ++kw) {
                const std::int64_t wd = ow * stride - pad + kw;
                if (wd < 0 || wd >= W) continue;
                oc[h * W + wd] += ev * static_cast<Acc>(wc[kh * KW + kw]);
              }
            }
          }
        }
    }
  return out;
}

template <class T, class Acc>
std::vector<Acc> conv_weight_grad_core(const T* e, const T* x, std::int64_t N, std::int64_t F,
                                       std::int64_t OH, std::int64_t OW, std::int64_t C,
                                       std::int64_t H, std::int64_t W, std::int64_t KH,
                                       std::int64_t KW, int stride, int pad) {
  std::vector<Acc> out(static_cast<std::size_t>(F * C * KH * KW), Acc(0));
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t f = 0; f < F; ++f) {
      const T* ef = e + ((n * F + f) * OH) * OW;
      for (std::int64_t oh = 0; oh < OH; ++oh)
        for (std::int64_t ow = 0; ow < OW; ++ow) {
          const Acc ev = static_cast<Acc>(ef[oh * OW + ow]);
          if (ev == Acc(0)) continue;
          for (std::int64_t c = 0; c < C; ++c) {
            const T* xc = x + ((n * C + c) * H) * W;
            Acc* oc = out.data() + ((f * C + c) * KH) * KW;
            for (std::int64_t kh = 0; kh < KH; ++kh) {
              const std::int64_t h = oh * stride - pad + kh;
              if (h < 0 || h >= H) continue;
              for (std::int64_t kw = 0; kw < KW; ++kw) {
                const std::int64_t wd = ow * stride - pad + kw;
                if (wd < 0 || wd >= W) continue;
                oc[kh * KW + kw] += ev * static_cast<Acc>(xc[h * W + wd]);
              }
            }
          }
        }
    }
  return out;
}

}  // namespace

std::int64_t conv_out_dim(std::int64_t in, std::int64_t kernel, int stride, int pad) {
  const std::int64_t span = in + 2 * pad - kernel;
  if (kernel < 1 || stride < 1 || pad < 0 || span < 0)
    throw ShapeError("invalid convolution geometry (in=" + std::to_string(in) +
                     ", k=" + std::to_string(kernel) + ", s=" + std::to_string(stride) +
                     ", p=" + std::to_string(pad) + ")");
  return span / stride + 1;
}

RealTensor add(const QTensor& a, const QTensor& b) {
  require(same_shape(a.shape, b.shape),
          "add: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  const int res = std::min(a.resolution_exp, b.resolution_exp);
  const int sa = a.resolution_exp - res, sb = b.resolution_exp - res;
  if (sa > 52 || sb > 52) throw RepresentationError("add: resolution gap too large for exact sum");
  RealTensor out;
  out.shape = a.shape;
  out.values.resize(a.mantissas.size());
  for (std::size_t i = 0; i < a.mantissas.size(); ++i) {
    const std::int64_t m =
        (static_cast<std::int64_t>(a.mantissas[i]) << sa) + (static_cast<std::int64_t>(b.mantissas[i]) << sb);
    out.values[i] = std::ldexp(static_cast<double>(m), res);
  }
  return out;
}

RealTensor add(const RealTensor& a, const RealTensor& b) {
  require(same_shape(a.shape, b.shape),
          "add: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  RealTensor out;
  out.shape = a.shape;
  out.values.resize(a.values.size());
  for (std::size_t i = 0; i < a.values.size(); ++i) out.values[i] = a.values[i] + b.values[i];
  return out;
}

RealTensor hadamard(const QTensor& a, const QTensor& b) {
  require(same_shape(a.shape, b.shape),
          "hadamard: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  std::vector<std::int64_t> acc(a.mantissas.size());
  for (std::size_t i = 0; i < a.mantissas.size(); ++i)
    acc[i] = static_cast<std::int64_t>(a.mantissas[i]) * b.mantissas[i];
  return scaled(a.shape, std::move(acc), a.resolution_exp + b.resolution_exp);
}

RealTensor hadamard(const RealTensor& a, const RealTensor& b) {
  require(same_shape(a.shape, b.shape),
          "hadamard: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  RealTensor out;
  out.shape = a.shape;
  out.values.resize(a.values.size());
  for (std::size_t i = 0; i < a.values.size(); ++i) out.values[i] = a.values[i] * b.values[i];
  return out;
}

RealTensor matmul(const QTensor& a, const QTensor& b) {
  require_dims(a.shape, 2, "matmul lhs");
  require_dims(b.shape, 2, "matmul rhs");
  require(a.shape[1] == b.shape[0],
          "matmul: inner dims " + shape_str(a.shape) + " x " + shape_str(b.shape));
  auto acc = matmul_core<std::int32_t, std::int64_t>(a.mantissas.data(), b.mantissas.data(),
                                                     a.shape[0], a.shape[1], b.shape[1]);
  return scaled({a.shape[0], b.shape[1]}, std::move(acc), a.resolution_exp + b.resolution_exp);
}

RealTensor matmul(const RealTensor& a, const RealTensor& b) {
  require_dims(a.shape, 2, "matmul lhs");
  require_dims(b.shape, 2, "matmul rhs");
  require(a.shape[1] == b.shape[0],
          "matmul: inner dims " + shape_str(a.shape) + " x " + shape_str(b.shape));
  auto acc =
      matmul_core<double, double>(a.values.data(), b.values.data(), a.shape[0], a.shape[1], b.shape[1]);
  return carried({a.shape[0], b.shape[1]}, std::move(acc));
}

RealTensor matmul_nt(const QTensor& a, const QTensor& b) {
  require_dims(a.shape, 2, "matmul_nt lhs");
  require_dims(b.shape, 2, "matmul_nt rhs");
  require(a.shape[1] == b.shape[1],
          "matmul_nt: inner dims " + shape_str(a.shape) + " x " + shape_str(b.shape) + "^T");
  auto acc = matmul_nt_core<std::int32_t, std::int64_t>(a.mantissas.data(), b.mantissas.data(),
                                                        a.shape[0], a.shape[1], b.shape[0]);
  return scaled({a.shape[0], b.shape[0]}, std::move(acc), a.resolution_exp + b.resolution_exp);
}

RealTensor matmul_nt(const RealTensor& a, const RealTensor& b) {
  require_dims(a.shape, 2, "matmul_nt lhs");
  require_dims(b.shape, 2, "matmul_nt rhs");
  require(a.shape[1] == b.shape[1],
          "matmul_nt: inner dims " + shape_str(a.shape) + " x " + shape_str(b.shape) + "^T");
  auto acc = matmul_nt_core<double, double>(a.values.data(), b.values.data(), a.shape[0],
                                            a.shape[1], b.shape[0]);
  return carried({a.shape[0], b.shape[0]}, std::move(acc));
}

RealTensor matmul_tn(const QTensor& a, const QTensor& b) {
  require_dims(a.shape, 2, "matmul_tn lhs");
  require_dims(b.shape, 2, "matmul_tn rhs");
  require(a.shape[0] == b.shape[0],
          "matmul_tn: inner dims " + shape_str(a.shape) + "^T x " + shape_str(b.shape));
  auto acc = matmul_tn_core<std::int32_t, std::int64_t>(a.mantissas.data(), b.mantissas.data(),
                                                        a.shape[0], a.shape[1], b.shape[1]);
  return scaled({a.shape[1], b.shape[1]}, std::move(acc), a.resolution_exp + b.resolution_exp);
}

RealTensor matmul_tn(const RealTensor& a, const RealTensor& b) {
  require_dims(a.shape, 2, "matmul_tn lhs");
  require_dims(b.shape, 2, "matmul_tn rhs");
  require(a.shape[0] == b.shape[0],
          "matmul_tn: inner dims " + shape_str(a.shape) + "^T x " + shape_str(b.shape));
  auto acc = matmul_tn_core<double, double>(a.values.data(), b.values.data(), a.shape[0],
                                            a.shape[1], b.shape[1]);
  return carried({a.shape[1], b.shape[1]}, std::move(acc));
}

namespace {

struct ConvDims {
  std::int64_t N, C, H, W, F, KH, KW, OH, OW;
};

ConvDims conv_dims(const Shape& x, const Shape& w, ConvGeom g) {
  if (x.size() != 4 || w.size() != 4)
    throw ShapeError("conv2d: need 4-d input and kernel, got " + shape_str(x) + " and " +
                     shape_str(w));
  if (x[1] != w[1])
    throw ShapeError("conv2d: channel mismatch " + shape_str(x) + " vs " + shape_str(w));
  ConvDims d;
  d.N = x[0];
  d.C = x[1];
  d.H = x[2];
  d.W = x[3];
  d.F = w[0];
  d.KH = w[2];
  d.KW = w[3];
  d.OH = conv_out_dim(d.H, d.KH, g.stride, g.pad);
  d.OW = conv_out_dim(d.W, d.KW, g.stride, g.pad);
  return d;
}

}  // namespace

RealTensor conv2d(const QTensor& x, const QTensor& w, ConvGeom g) {
  const ConvDims d = conv_dims(x.shape, w.shape, g);
  auto acc = conv_core<std::int32_t, std::int64_t>(x.mantissas.data(), w.mantissas.data(), d.N, d.C,
                                                   d.H, d.W, d.F, d.KH, d.KW, d.OH, d.OW, g.stride,
                                                   g.pad);
  return scaled({d.N, d.F, d.OH, d.OW}, std::move(acc), x.resolution_exp + w.resolution_exp);
}

RealTensor conv2d(const RealTensor& x, const RealTensor& w, ConvGeom g) {
  const ConvDims d = conv_dims(x.shape, w.shape, g);
  auto acc = conv_core<double, double>(x.values.data(), w.values.data(), d.N, d.C, d.H, d.W, d.F,
                                       d.KH, d.KW, d.OH, d.OW, g.stride, g.pad);
  return carried({d.N, d.F, d.OH, d.OW}, std::move(acc));
}

namespace {

void check_input_grad_shapes(const Shape& e, const Shape& w, ConvGeom g, std::int64_t in_h,
                             std::int64_t in_w) {
  if (e.size() != 4 || w.size() != 4)
    throw ShapeError("conv2d_input_grad: need 4-d tensors, got " + shape_str(e) + " and " +
                     shape_str(w));
  if (e[1] != w[0])
    throw ShapeError("conv2d_input_grad: filter mismatch " + shape_str(e) + " vs " + shape_str(w));
  if (conv_out_dim(in_h, w[2], g.stride, g.pad) != e[2] ||
      conv_out_dim(in_w, w[3], g.stride, g.pad) != e[3])
    throw ShapeError("conv2d_input_grad: output geometry does not match input size");
}

void check_weight_grad_shapes(const Shape& e, const Shape& x, ConvGeom g, std::int64_t kh,
                              std::int64_t kw) {
  if (e.size() != 4 || x.size() != 4)
    throw ShapeError("conv2d_weight_grad: need 4-d tensors, got " + shape_str(e) + " and " +
                     shape_str(x));
  if (e[0] != x[0]) throw ShapeError("conv2d_weight_grad: batch mismatch");
  if (conv_out_dim(x[2], kh, g.stride, g.pad) != e[2] ||
      conv_out_dim(x[3], kw, g.stride, g.pad) != e[3])
    throw ShapeError("conv2d_weight_grad: output geometry does not match input size");
}

}  // namespace

RealTensor conv2d_input_grad(const QTensor& e, const QTensor& w, ConvGeom g, std::int64_t in_h,
                             std::int64_t in_w) {
  check_input_grad_shapes(e.shape, w.shape, g, in_h, in_w);
  auto acc = conv_input_grad_core<std::int32_t, std::int64_t>(
      e.mantissas.data(), w.mantissas.data(), e.shape[0], e.shape[1], e.shape[2], e.shape[3],
      w.shape[1], w.shape[2], w.shape[3], in_h, in_w, g.stride, g.pad);
  return scaled({e.shape[0], w.shape[1], in_h, in_w}, std::move(acc),
                e.resolution_exp + w.resolution_exp);
}

RealTensor conv2d_input_grad(const RealTensor& e, const RealTensor& w, ConvGeom g,
                             std::int64_t in_h, std::int64_t in_w) {
  check_input_grad_shapes(e.shape, w.shape, g, in_h, in_w);
  auto acc = conv_input_grad_core<double, double>(e.values.data(), w.values.data(), e.shape[0],
                                                  e.shape[1], e.shape[2], e.shape[3], w.shape[1],
                                                  w.shape[2], w.shape[3], in_h, in_w, g.stride,
                                                  g.pad);
  return carried({e.shape[0], w.shape[1], in_h, in_w}, std::move(acc));
}

RealTensor conv2d_weight_grad(const QTensor& e, const QTensor& x, ConvGeom g, std::int64_t kh,
                              std::int64_t kw) {
  check_weight_grad_shapes(e.shape, x.shape, g, kh, kw);
  auto acc = conv_weight_grad_core<std::int32_t, std::int64_t>(
      e.mantissas.data(), x.mantissas.data(), e.shape[0], e.shape[1], e.shape[2], e.shape[3],
      x.shape[1], x.shape[2], x.shape[3], kh, kw, g.stride, g.pad);
  return scaled({e.shape[1], x.shape[1], kh, kw}, std::move(acc),
                e.resolution_exp + x.resolution_exp);
}

RealTensor conv2d_weight_grad(const RealTensor& e, const RealTensor& x, ConvGeom g,
                              std::int64_t kh, std::int64_t kw) {
  check_weight_grad_shapes(e.shape, x.shape, g, kh, kw);
  auto acc = conv_weight_grad_core<double, double>(e.values.data(), x.values.data(), e.shape[0],
                                                   e.shape[1], e.shape[2], e.shape[3], x.shape[1],
                                                   x.shape[2], x.shape[3], kh, kw, g.stride, g.pad);
  return carried({e.shape[1], x.shape[1], kh, kw}, std::move(acc));
}

}  // namespace intflow
