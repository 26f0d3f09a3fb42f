#pragma once

#include <array>
#include <span>

#include "dnet/tensor.hpp"

namespace dnet {

enum class Mode { training, inference };
enum class PoolKind { max, average };

// 2-D convolution parameters. kernel is OutC x InC x Kh x Kw; bias (OutC) is
// optional (leave undefined to skip).
struct ConvParams {
  Tensor kernel;
  Tensor bias;
  std::array<int, 2> stride{1, 1};
  std::array<int, 2> padding{0, 0};
};

// Per-channel batch norm state. gamma/beta are learned; running_mean/var are
// inference-time statistics updated during training forwards.
struct BatchNormParams {
  Tensor gamma;
  Tensor beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double epsilon = 1e-5;
  double momentum = 0.1;

  static BatchNormParams make(int channels);
};

// Cross-correlation with zero padding. Output extent per axis is
// floor((in + 2*pad - k) / stride) + 1 and must be >= 1.
Tensor conv2d(const Tensor& x, const ConvParams& p);

// Training mode normalizes with biased batch statistics over N*H*W per
// channel (requires N*H*W >= 2) and updates the running stats with an
// unbiased variance (EMA, factor = momentum). Inference mode uses the
// running stats only.
Tensor batch_norm2d(const Tensor& x, BatchNormParams& p, Mode mode);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// Max or average pooling, floor output sizing, window must fit in the input.
// Max ties resolve to the first element in window scan order (row-major).
Tensor pool2d(const Tensor& x, PoolKind kind, std::array<int, 2> window,
              std::array<int, 2> stride);

// N x C x H x W -> N x C mean over the full spatial plane.
Tensor global_avg_pool(const Tensor& x);

// x: N x F, weight: F x G, bias: G -> N x G.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Concatenates rank-4 tensors along the channel axis; N, H, W must agree.
Tensor concat_channels(std::span<const Tensor> xs);

// Inverse-ish of concat: picks channels [c_begin, c_end).
Tensor slice_channels(const Tensor& x, int c_begin, int c_end);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor sum(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

// Mean binary cross-entropy over a batch of probabilities in [0,1] against
// hard 0/1 labels. Probabilities are clamped to [1e-7, 1 - 1e-7] before the
// logs; the clamp also zeroes the gradient outside that range.
Tensor bce_loss(const Tensor& scores, const Tensor& labels);

}  // namespace dnet
