#pragma once

#include <span>
#include <vector>

#include "crcfp/autograd.hpp"

// Differentiable tensor operators. All tensors are NHWC.
namespace crcfp::ops {

/// Continuous position on a pixel grid; integer values are cell centres.
struct Point {
  double y = 0.0;
  double x = 0.0;
};

/// 2-D convolution. `weight` has shape {kh, kw, cin, cout}, `bias` {1,1,1,cout}.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);

/// Per-pixel affine map (a 1x1 convolution). `weight` is {1,1,cin,cout}.
Var pointwise_linear(const Var& x, const Var& weight, const Var& bias);

Var relu(const Var& x);
Var add(const Var& a, const Var& b);
Var scale(const Var& x, double s);

/// Element-wise product with a constant. A mask with one channel is
/// broadcast over all channels of `x`.
Var mul_const(const Var& x, const Tensor& mask);

/// Softmax over the channel axis of every pixel.
Var softmax_channels(const Var& logits);

/// Bilinear resize with half-pixel centres (align_corners = false).
Var resize_bilinear(const Var& x, int out_h, int out_w);
Tensor resize_bilinear(const Tensor& x, int out_h, int out_w);

/// Bilinear samples of batch item `b` at `points`, returned as {1,1,N,C}.
/// Positions are clamped to the grid.
Var sample_bilinear(const Var& x, int b, std::span<const Point> points);
Tensor sample_bilinear(const Tensor& x, int b, std::span<const Point> points);

/// sum_i weights[i] * scalars[i]; undefined entries are skipped.
Var weighted_sum(std::span<const Var> scalars, std::span<const double> weights);

/// Mean of all elements as a scalar.
Var mean(const Var& x);

}  // namespace crcfp::ops
