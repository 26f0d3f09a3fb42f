#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dnet/ops.hpp"

namespace dnet {

// One dense-connectivity layer: BN -> ReLU -> 3x3 conv (stride 1, pad 1)
// producing growth_rate channels. The same composite (with OutC == InC)
// serves as the transform inside a residual block.
struct DenseLayerParams {
  BatchNormParams bn;
  ConvParams conv;
};

// 1x1 compression conv (BN -> ReLU -> conv) followed by 2x2/stride-2
// average pooling.
struct TransitionParams {
  BatchNormParams bn;
  ConvParams conv;
};

struct DenseBlockSpec {
  int num_layers = 0;   // L >= 1
  int growth_rate = 0;  // k >= 1
  int in_channels = 0;  // C0 of the block input
};

struct PoolSpec {
  PoolKind kind = PoolKind::max;
  std::array<int, 2> window{2, 2};
  std::array<int, 2> stride{2, 2};
};

struct StemSpec {
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int padding = 1;
  std::optional<PoolSpec> pool;  // applied right after the stem conv
};

// Full classifier description: stem, dense blocks with compression
// transitions between consecutive blocks, then global average pooling, a
// 1-unit linear head and a sigmoid.
struct ModelSpec {
  std::string name;
  int in_channels = 3;
  StemSpec stem;
  std::vector<DenseBlockSpec> blocks;
  double compression = 0.5;  // theta in (0, 1]

  // 2 blocks of 2 layers, growth 4, 3x3 stride-1 stem to 8 channels.
  static ModelSpec tiny();
  // blocks (6,12,48,32), growth 32, 7x7 stride-2 stem to 64 channels
  // followed by 3x3 stride-2 max pooling; sized for 96x96 inputs.
  static ModelSpec densenet201_like();
  static ModelSpec preset(const std::string& name);  // rejects unknown names

  int head_in_channels() const;  // channels entering the classifier head
};

// Rejects inconsistent specs (bad counts, compression out of range, channel
// chain mismatches), naming the first failing stage.
void validate_spec(const ModelSpec& spec);

// Parameter names follow a fixed contract (1-based indices):
//   stem.conv.weight / stem.conv.bias
//   block{i}.layer{j}.bn.gamma / .bn.beta / .conv.weight / .conv.bias
//   trans{i}.bn.gamma / .bn.beta / .conv.weight / .conv.bias
//   head.linear.weight / head.linear.bias
// Buffers use the same prefixes with .bn.running_mean / .bn.running_var.
struct Model {
  ModelSpec spec;
  Mode mode = Mode::training;

  ConvParams stem_conv;
  std::vector<std::vector<DenseLayerParams>> blocks;
  std::vector<TransitionParams> transitions;
  Tensor head_weight;
  Tensor head_bias;

  std::vector<std::pair<std::string, Tensor>> named_params;  // build order
  std::vector<std::pair<std::string, std::vector<double>*>> named_buffers();
  std::int64_t param_count() const;
};

// He-uniform conv/linear weights (bound sqrt(6/fan_in)) from a single
// mt19937_64 stream in parameter order; gamma=1, beta=0, biases=0,
// running mean/var = 0/1. Same seed => bit-identical model.
Model build_model(const ModelSpec& spec, std::uint64_t seed);

Tensor dense_layer_forward(const Tensor& x, DenseLayerParams& p, Mode mode);

// x^l = H^l(concat(x^0..x^{l-1})) realized incrementally; returns the
// concatenation of the block input with all L layer outputs
// (C0 + L * growth channels). An empty layer list returns x unchanged.
Tensor dense_block_forward(const Tensor& x, std::vector<DenseLayerParams>& layers, Mode mode);

Tensor transition_forward(const Tensor& x, TransitionParams& p, Mode mode);

// Identity-skip residual unit: x + H(x), H = BN -> ReLU -> 3x3 conv with
// OutC == InC.
Tensor residual_block_forward(const Tensor& x, DenseLayerParams& p, Mode mode);

// batch: N x in_channels x H x W -> scores in (0,1), shape {N}. Stage
// failures (e.g. spatial underflow) are reported with the stage name.
Tensor model_forward(Model& m, const Tensor& batch);

}  // namespace dnet
