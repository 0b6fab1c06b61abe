#pragma once

#include "intflow/tensor.hpp"

namespace intflow {

// Arithmetic on QTensor pairs runs on integer mantissas with 64-bit
// accumulation; resolutions add for products. Results are reported as
// RealTensor whose values are exactly representable for the widths this
// project configures. RealTensor overloads run the same loop order in
// doubles for the unquantized paths.

struct ConvGeom {
  int stride = 1;
  int pad = 0;
};

RealTensor add(const QTensor& a, const QTensor& b);
RealTensor add(const RealTensor& a, const RealTensor& b);

RealTensor hadamard(const QTensor& a, const QTensor& b);
RealTensor hadamard(const RealTensor& a, const RealTensor& b);

// a:[m,k] x b:[k,n] -> [m,n]
RealTensor matmul(const QTensor& a, const QTensor& b);
RealTensor matmul(const RealTensor& a, const RealTensor& b);

// a:[m,k] x b:[n,k]^T -> [m,n]
RealTensor matmul_nt(const QTensor& a, const QTensor& b);
RealTensor matmul_nt(const RealTensor& a, const RealTensor& b);

// a:[k,m]^T x b:[k,n] -> [m,n]
RealTensor matmul_tn(const QTensor& a, const QTensor& b);
RealTensor matmul_tn(const RealTensor& a, const RealTensor& b);

// x:[N,C,H,W], w:[F,C,kh,kw] -> [N,F,OH,OW]
RealTensor conv2d(const QTensor& x, const QTensor& w, ConvGeom g);
RealTensor conv2d(const RealTensor& x, const RealTensor& w, ConvGeom g);

// e:[N,F,OH,OW], w:[F,C,kh,kw] -> [N,C,H,W] (transposed convolution)
RealTensor conv2d_input_grad(const QTensor& e, const QTensor& w, ConvGeom g, std::int64_t in_h,
                             std::int64_t in_w);
RealTensor conv2d_input_grad(const RealTensor& e, const RealTensor& w, ConvGeom g,
                             std::int64_t in_h, std::int64_t in_w);

// e:[N,F,OH,OW], x:[N,C,H,W] -> [F,C,kh,kw]
RealTensor conv2d_weight_grad(const QTensor& e, const QTensor& x, ConvGeom g, std::int64_t kh,
                              std::int64_t kw);
RealTensor conv2d_weight_grad(const RealTensor& e, const RealTensor& x, ConvGeom g,
                              std::int64_t kh, std::int64_t kw);

std::int64_t conv_out_dim(std::int64_t in, std::int64_t kernel, int stride, int pad);

}  // namespace intflow
