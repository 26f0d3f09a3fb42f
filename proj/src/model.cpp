#include "dnet/model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "dnet/rng.hpp"

namespace dnet {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

int compressed(int channels, double theta) {
  return static_cast<int>(std::floor(theta * static_cast<double>(channels)));
}

Tensor he_uniform(Shape shape, int fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(v), true);
}

DenseLayerParams make_dense_layer(int in_c, int out_c, Rng& rng) {
  DenseLayerParams p;
  p.bn = BatchNormParams::make(in_c);
  p.conv.kernel = he_uniform({out_c, in_c, 3, 3}, in_c * 9, rng);
  p.conv.bias = Tensor::zeros({out_c}, true);
  p.conv.stride = {1, 1};
  p.conv.padding = {1, 1};
  return p;
}

}  // namespace

ModelSpec ModelSpec::tiny() {
  ModelSpec s;
  s.name = "tiny";
  s.in_channels = 3;
  s.stem = {8, 3, 1, 1, std::nullopt};
  s.blocks = {{2, 4, 8}, {2, 4, 8}};
  s.compression = 0.5;
  return s;
}

ModelSpec ModelSpec::densenet201_like() {
  ModelSpec s;
  s.name = "densenet201-like";
  s.in_channels = 3;
  s.stem = {64, 7, 2, 3, PoolSpec{PoolKind::max, {3, 3}, {2, 2}}};
  s.blocks = {{6, 32, 64}, {12, 32, 128}, {48, 32, 256}, {32, 32, 896}};
  s.compression = 0.5;
  return s;
}

ModelSpec ModelSpec::preset(const std::string& name) {
  if (name == "tiny") return tiny();
  if (name == "densenet201-like") return densenet201_like();
  fail("unknown preset '" + name + "' (available: tiny, densenet201-like)");
}

int ModelSpec::head_in_channels() const {
  const auto& b = blocks.back();
  return b.in_channels + b.num_layers * b.growth_rate;
}

void validate_spec(const ModelSpec& spec) {
  if (spec.in_channels < 1) fail("spec: in_channels must be >= 1");
  if (spec.stem.out_channels < 1) fail("spec stem: out_channels must be >= 1");
  if (spec.stem.kernel < 1 || spec.stem.stride < 1 || spec.stem.padding < 0)
    fail("spec stem: bad conv geometry");
  if (spec.blocks.empty()) fail("spec: needs at least one block");
  if (spec.compression <= 0.0 || spec.compression > 1.0)
    fail("spec: compression must be in (0,1]");
  int channels = spec.stem.out_channels;
  for (size_t i = 0; i < spec.blocks.size(); ++i) {
    const auto& b = spec.blocks[i];
    std::ostringstream stage;
    stage << "spec block" << (i + 1);
    if (b.num_layers < 1) fail(stage.str() + ": num_layers must be >= 1");
    if (b.growth_rate < 1) fail(stage.str() + ": growth_rate must be >= 1");
    if (b.in_channels != channels) {
      std::ostringstream os;
      os << stage.str() << ": in_channels is " << b.in_channels << " but the preceding stage"
         << " produces " << channels;
      fail(os.str());
    }
    channels = b.in_channels + b.num_layers * b.growth_rate;
    if (i + 1 < spec.blocks.size()) {
      channels = compressed(channels, spec.compression);
      if (channels < 1) {
        std::ostringstream os;
        os << "spec trans" << (i + 1) << ": compression leaves no channels";
        fail(os.str());
      }
    }
  }
}

Model build_model(const ModelSpec& spec, std::uint64_t seed) {
  validate_spec(spec);
  Model m;
  m.spec = spec;
  Rng rng(seed);

  auto name_of = [](const std::string& prefix, const char* leaf) { return prefix + "." + leaf; };
  auto add_param = [&m](std::string name, const Tensor& t) {
    m.named_params.emplace_back(std::move(name), t);
  };

  m.stem_conv.kernel =
      he_uniform({spec.stem.out_channels, spec.in_channels, spec.stem.kernel, spec.stem.kernel},
                 spec.in_channels * spec.stem.kernel * spec.stem.kernel, rng);
  m.stem_conv.bias = Tensor::zeros({spec.stem.out_channels}, true);
  m.stem_conv.stride = {spec.stem.stride, spec.stem.stride};
  m.stem_conv.padding = {spec.stem.padding, spec.stem.padding};
  add_param("stem.conv.weight", m.stem_conv.kernel);
  add_param("stem.conv.bias", m.stem_conv.bias);

  int channels = spec.stem.out_channels;
  for (size_t bi = 0; bi < spec.blocks.size(); ++bi) {
    const auto& bs = spec.blocks[bi];
    std::vector<DenseLayerParams> layers;
    int in_c = bs.in_channels;
    for (int li = 0; li < bs.num_layers; ++li) {
      DenseLayerParams layer = make_dense_layer(in_c, bs.growth_rate, rng);
      std::ostringstream prefix;
      prefix << "block" << (bi + 1) << ".layer" << (li + 1);
      add_param(name_of(prefix.str(), "bn.gamma"), layer.bn.gamma);
      add_param(name_of(prefix.str(), "bn.beta"), layer.bn.beta);
      add_param(name_of(prefix.str(), "conv.weight"), layer.conv.kernel);
      add_param(name_of(prefix.str(), "conv.bias"), layer.conv.bias);
      layers.push_back(std::move(layer));
      in_c += bs.growth_rate;
    }
    m.blocks.push_back(std::move(layers));
    channels = in_c;
    if (bi + 1 < spec.blocks.size()) {
      TransitionParams t;
      const int out_c = compressed(channels, spec.compression);
      t.bn = BatchNormParams::make(channels);
      t.conv.kernel = he_uniform({out_c, channels, 1, 1}, channels, rng);
      t.conv.bias = Tensor::zeros({out_c}, true);
      t.conv.stride = {1, 1};
      t.conv.padding = {0, 0};
      std::ostringstream prefix;
      prefix << "trans" << (bi + 1);
      add_param(name_of(prefix.str(), "bn.gamma"), t.bn.gamma);
      add_param(name_of(prefix.str(), "bn.beta"), t.bn.beta);
      add_param(name_of(prefix.str(), "conv.weight"), t.conv.kernel);
      add_param(name_of(prefix.str(), "conv.bias"), t.conv.bias);
      m.transitions.push_back(std::move(t));
      channels = out_c;
    }
  }

  m.head_weight = he_uniform({channels, 1}, channels, rng);
  m.head_bias = Tensor::zeros({1}, true);
  add_param("head.linear.weight", m.head_weight);
  add_param("head.linear.bias", m.head_bias);
  return m;
}

std::vector<std::pair<std::string, std::vector<double>*>> Model::named_buffers() {
  std::vector<std::pair<std::string, std::vector<double>*>> out;
  for (size_t bi = 0; bi < blocks.size(); ++bi)
    for (size_t li = 0; li < blocks[bi].size(); ++li) {
      std::ostringstream prefix;
      prefix << "block" << (bi + 1) << ".layer" << (li + 1) << ".bn.";
      out.emplace_back(prefix.str() + "running_mean", &blocks[bi][li].bn.running_mean);
      out.emplace_back(prefix.str() + "running_var", &blocks[bi][li].bn.running_var);
    }
  for (size_t ti = 0; ti < transitions.size(); ++ti) {
    std::ostringstream prefix;
    prefix << "trans" << (ti + 1) << ".bn.";
    out.emplace_back(prefix.str() + "running_mean", &transitions[ti].bn.running_mean);
    out.emplace_back(prefix.str() + "running_var", &transitions[ti].bn.running_var);
  }
  return out;
}

std::int64_t Model::param_count() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : named_params) n += t.numel();
  return n;
}

Tensor dense_layer_forward(const Tensor& x, DenseLayerParams& p, Mode mode) {
  return conv2d(relu(batch_norm2d(x, p.bn, mode)), p.conv);
}

Tensor dense_block_forward(const Tensor& x, std::vector<DenseLayerParams>& layers, Mode mode) {
  Tensor state = x;
  for (auto& layer : layers) {
    Tensor grown = dense_layer_forward(state, layer, mode);
    std::array<Tensor, 2> parts{state, grown};
    state = concat_channels(parts);
  }
  return state;
}

Tensor transition_forward(const Tensor& x, TransitionParams& p, Mode mode) {
  Tensor y = conv2d(relu(batch_norm2d(x, p.bn, mode)), p.conv);
  return pool2d(y, PoolKind::average, {2, 2}, {2, 2});
}

Tensor residual_block_forward(const Tensor& x, DenseLayerParams& p, Mode mode) {
  if (p.conv.kernel.dim(0) != x.dim(1)) {
    std::ostringstream os;
    os << "residual_block: transform maps to " << p.conv.kernel.dim(0)
       << " channels but the skip carries " << x.dim(1);
    throw std::invalid_argument(os.str());
  }
  return add(x, dense_layer_forward(x, p, mode));
}

namespace {

template <class Fn>
Tensor run_stage(const char* stage, Fn&& fn) {
  try {
    return fn();
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(std::string("stage ") + stage + ": " + e.what());
  }
}

}  // namespace

Tensor model_forward(Model& m, const Tensor& batch) {
  if (!batch.defined() || batch.rank() != 4 || batch.dim(1) != m.spec.in_channels) {
    std::ostringstream os;
    os << "model_forward: batch must be N x " << m.spec.in_channels << " x H x W, got "
       << (batch.defined() ? shape_str(batch.shape()) : std::string("<undefined>"));
    throw std::invalid_argument(os.str());
  }
  const Mode mode = m.mode;
  Tensor y = run_stage("stem", [&] {
    Tensor t = conv2d(batch, m.stem_conv);
    if (m.spec.stem.pool)
      t = pool2d(t, m.spec.stem.pool->kind, m.spec.stem.pool->window, m.spec.stem.pool->stride);
    return t;
  });
  for (size_t bi = 0; bi < m.blocks.size(); ++bi) {
    std::ostringstream stage;
    stage << "block" << (bi + 1);
    y = run_stage(stage.str().c_str(),
                  [&] { return dense_block_forward(y, m.blocks[bi], mode); });
    if (bi < m.transitions.size()) {
      std::ostringstream tstage;
      tstage << "trans" << (bi + 1);
      y = run_stage(tstage.str().c_str(),
                    [&] { return transition_forward(y, m.transitions[bi], mode); });
    }
  }
  return run_stage("head", [&] {
    Tensor pooled = global_avg_pool(y);
    Tensor logits = linear(pooled, m.head_weight, m.head_bias);
    return reshape(sigmoid(logits), {batch.dim(0)});
  });
}

}  // namespace dnet
