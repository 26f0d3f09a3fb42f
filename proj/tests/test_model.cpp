#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "dnet/model.hpp"
#include "dnet/rng.hpp"
#include "oracles.hpp"

using dnet::BatchNormParams;
using dnet::DenseLayerParams;
using dnet::Mode;
using dnet::Model;
using dnet::ModelSpec;
using dnet::Tensor;
using dnet::TransitionParams;

namespace {

Tensor random_image(dnet::Shape shape, dnet::Rng& rng, bool requires_grad = false) {
  std::vector<double> v(static_cast<size_t>(dnet::shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(0.0, 1.0);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

DenseLayerParams make_layer(int in_channels, int growth, dnet::Rng& rng) {
  DenseLayerParams p;
  p.bn = BatchNormParams::make(in_channels);
  std::vector<double> k(static_cast<size_t>(growth) * in_channels * 9);
  for (auto& v : k) v = rng.uniform(-0.3, 0.3);
  p.conv.kernel = Tensor({growth, in_channels, 3, 3}, std::move(k), true);
  p.conv.bias = Tensor::zeros({growth}, true);
  p.conv.stride = {1, 1};
  p.conv.padding = {1, 1};
  return p;
}

}  // namespace

TEST_SUITE_BEGIN("model");

// ---- dense layer ------------------------------------------------------------

TEST_CASE("dense layer with zero conv emits growth_rate zero channels") {
  dnet::Rng rng(2);
  DenseLayerParams p = make_layer(3, 4, rng);
  for (auto& v : p.conv.kernel.mutable_values()) v = 0.0;
  Tensor x = random_image({2, 3, 5, 5}, rng);
  Tensor y = dnet::dense_layer_forward(x, p, Mode::training);
  REQUIRE(y.shape() == dnet::Shape{2, 4, 5, 5});
  for (double v : y.values()) CHECK(v == 0.0);
}

TEST_CASE("dense layer equals the hand-chained BN -> relu -> conv") {
  dnet::Rng rng(4);
  DenseLayerParams p = make_layer(3, 4, rng);
  DenseLayerParams q = p;  // tensors alias; running stats deep-copy
  Tensor x = random_image({2, 3, 5, 5}, rng);
  for (Mode mode : {Mode::training, Mode::inference}) {
    Tensor got = dnet::dense_layer_forward(x, p, mode);
    Tensor want = dnet::conv2d(dnet::relu(dnet::batch_norm2d(x, q.bn, mode)), q.conv);
    REQUIRE(got.shape() == want.shape());
    for (size_t i = 0; i < want.values().size(); ++i)
      CHECK(got.values()[i] == want.values()[i]);
  }
}

// ---- dense block ------------------------------------------------------------

TEST_CASE("dense block with no layers returns its input") {
  dnet::Rng rng(6);
  Tensor x = random_image({1, 3, 4, 4}, rng);
  std::vector<DenseLayerParams> layers;
  Tensor y = dnet::dense_block_forward(x, layers, Mode::training);
  REQUIRE(y.shape() == x.shape());
  for (size_t i = 0; i < x.values().size(); ++i) CHECK(y.values()[i] == x.values()[i]);
}

TEST_CASE("dense block output carries C0 + L*k channels") {
  dnet::Rng rng(8);
  const int c0 = 8, growth = 4, num_layers = 3;
  std::vector<DenseLayerParams> layers;
  int in = c0;
  for (int l = 0; l < num_layers; ++l) {
    layers.push_back(make_layer(in, growth, rng));
    in += growth;
  }
  Tensor x = random_image({2, c0, 4, 4}, rng);
  Tensor y = dnet::dense_block_forward(x, layers, Mode::training);
  CHECK(y.shape() == dnet::Shape{2, c0 + num_layers * growth, 4, 4});
}

TEST_CASE("dense block with zero convs passes the input through untouched") {
  dnet::Rng rng(10);
  const int c0 = 5, growth = 3;
  std::vector<DenseLayerParams> layers;
  int in = c0;
  for (int l = 0; l < 2; ++l) {
    layers.push_back(make_layer(in, growth, rng));
    for (auto& v : layers.back().conv.kernel.mutable_values()) v = 0.0;
    in += growth;
  }
  Tensor x = random_image({1, c0, 3, 3}, rng);
  Tensor y = dnet::dense_block_forward(x, layers, Mode::training);
  REQUIRE(y.shape() == dnet::Shape{1, c0 + 2 * growth, 3, 3});
  Tensor head = dnet::slice_channels(y, 0, c0);
  for (size_t i = 0; i < x.values().size(); ++i) CHECK(head.values()[i] == x.values()[i]);
  Tensor tail = dnet::slice_channels(y, c0, c0 + 2 * growth);
  for (double v : tail.values()) CHECK(v == 0.0);
}

TEST_CASE("dense block layer l consumes the concat of x0..x{l-1}") {
  // Replay the block by hand: every layer must see exactly the running
  // concatenation, so an independent incremental reconstruction matches.
  dnet::Rng rng(12);
  const int c0 = 4, growth = 2, num_layers = 3;
  std::vector<DenseLayerParams> layers;
  int in = c0;
  for (int l = 0; l < num_layers; ++l) {
    layers.push_back(make_layer(in, growth, rng));
    in += growth;
  }
  std::vector<DenseLayerParams> copy = layers;
  Tensor x = random_image({2, c0, 3, 3}, rng);
  Tensor got = dnet::dense_block_forward(x, layers, Mode::inference);

  Tensor acc = x;
  for (int l = 0; l < num_layers; ++l) {
    Tensor out = dnet::dense_layer_forward(acc, copy[static_cast<size_t>(l)], Mode::inference);
    std::vector<Tensor> parts{acc, out};
    acc = dnet::concat_channels(parts);
  }
  REQUIRE(got.shape() == acc.shape());
  for (size_t i = 0; i < acc.values().size(); ++i) CHECK(got.values()[i] == acc.values()[i]);
}

// ---- transition -------------------------------------------------------------

TEST_CASE("transition compresses channels and halves the spatial extent") {
  dnet::Rng rng(14);
  TransitionParams p;
  p.bn = BatchNormParams::make(10);
  std::vector<double> k(5 * 10);
  for (auto& v : k) v = rng.uniform(-0.5, 0.5);
  p.conv.kernel = Tensor({5, 10, 1, 1}, std::move(k), true);
  p.conv.bias = Tensor::zeros({5}, true);
  Tensor x = random_image({2, 10, 6, 6}, rng);
  Tensor y = dnet::transition_forward(x, p, Mode::training);
  CHECK(y.shape() == dnet::Shape{2, 5, 3, 3});
}

TEST_CASE("transition rejects a 1x1 spatial input (pool cannot fit)") {
  dnet::Rng rng(16);
  TransitionParams p;
  p.bn = BatchNormParams::make(4);
  p.conv.kernel = Tensor::zeros({2, 4, 1, 1});
  p.conv.bias = Tensor::zeros({2});
  Tensor x = random_image({1, 4, 1, 1}, rng);
  CHECK_THROWS_AS(dnet::transition_forward(x, p, Mode::inference), std::invalid_argument);
}

// ---- residual block ---------------------------------------------------------

TEST_CASE("residual block with zero transform is the exact identity") {
  dnet::Rng rng(18);
  DenseLayerParams p = make_layer(3, 3, rng);
  for (auto& v : p.conv.kernel.mutable_values()) v = 0.0;
  Tensor x = random_image({2, 3, 4, 4}, rng);
  Tensor y = dnet::residual_block_forward(x, p, Mode::training);
  REQUIRE(y.shape() == x.shape());
  for (size_t i = 0; i < x.values().size(); ++i) CHECK(y.values()[i] == x.values()[i]);
}

TEST_CASE("residual block output is input plus the transform") {
  dnet::Rng rng(20);
  DenseLayerParams p = make_layer(3, 3, rng);
  DenseLayerParams q = p;
  Tensor x = random_image({1, 3, 4, 4}, rng);
  Tensor y = dnet::residual_block_forward(x, p, Mode::inference);
  Tensor h = dnet::dense_layer_forward(x, q, Mode::inference);
  for (size_t i = 0; i < x.values().size(); ++i)
    CHECK(y.values()[i] == x.values()[i] + h.values()[i]);
}

TEST_CASE("residual block rejects a transform that changes the channel count") {
  dnet::Rng rng(22);
  DenseLayerParams p = make_layer(3, 4, rng);  // 3 -> 4 cannot be added back
  Tensor x = random_image({1, 3, 4, 4}, rng);
  CHECK_THROWS_AS(dnet::residual_block_forward(x, p, Mode::inference), std::invalid_argument);
}

TEST_CASE("residual block gradients pass finite differences") {
  dnet::Rng rng(24);
  DenseLayerParams p = make_layer(2, 2, rng);
  Tensor x = random_image({2, 2, 4, 4}, rng, true);
  auto build = [&] {
    Tensor y = dnet::residual_block_forward(x, p, Mode::inference);
    return dnet::sum(dnet::mul(y, y));
  };
  auto fd = oracle::fd_check(build, {x, p.bn.gamma, p.bn.beta, p.conv.kernel, p.conv.bias}, 1e-4);
  CHECK_MESSAGE(fd.ok(1e-4), fd.worst_at);
}

// ---- specs and construction -------------------------------------------------

TEST_CASE("presets resolve by name and reject unknown names") {
  CHECK(ModelSpec::preset("tiny").name == "tiny");
  CHECK(ModelSpec::preset("densenet201-like").name == "densenet201-like");
  CHECK_THROWS_AS(ModelSpec::preset("resnet50"), std::invalid_argument);
}

TEST_CASE("tiny preset matches its closed-form parameter count") {
  Model m = dnet::build_model(ModelSpec::tiny(), 1);
  // stem 3x3: 8*3*9 + 8; two blocks of two layers (k=4); one transition
  // 16 -> 8; head on 16 features.
  const std::int64_t stem = 8 * 3 * 9 + 8;
  const std::int64_t layer1 = (2 * 8) + (4 * 8 * 9 + 4);    // bn(8) + conv 8->4
  const std::int64_t layer2 = (2 * 12) + (4 * 12 * 9 + 4);  // bn(12) + conv 12->4
  const std::int64_t trans = (2 * 16) + (8 * 16 + 8);       // bn(16) + 1x1 16->8
  const std::int64_t head = 16 + 1;
  const std::int64_t want = stem + 2 * (layer1 + layer2) + trans + head;
  CHECK(want == 1945);
  CHECK(m.param_count() == want);
  CHECK(m.spec.head_in_channels() == 16);
}

TEST_CASE("build_model is bit-identical for equal seeds and differs across seeds") {
  Model a = dnet::build_model(ModelSpec::tiny(), 99);
  Model b = dnet::build_model(ModelSpec::tiny(), 99);
  Model c = dnet::build_model(ModelSpec::tiny(), 100);
  REQUIRE(a.named_params.size() == b.named_params.size());
  bool any_diff = false;
  for (size_t i = 0; i < a.named_params.size(); ++i) {
    CHECK(a.named_params[i].first == b.named_params[i].first);
    const auto va = a.named_params[i].second.values();
    const auto vb = b.named_params[i].second.values();
    const auto vc = c.named_params[i].second.values();
    REQUIRE(va.size() == vb.size());
    for (size_t j = 0; j < va.size(); ++j) {
      CHECK(va[j] == vb[j]);
      if (va[j] != vc[j]) any_diff = true;
    }
  }
  CHECK(any_diff);
}

TEST_CASE("fresh models have unit gammas, zero biases, and unit running var") {
  Model m = dnet::build_model(ModelSpec::tiny(), 7);
  for (const auto& [name, t] : m.named_params) {
    if (name.ends_with(".bn.gamma"))
      for (double v : t.values()) CHECK(v == 1.0);
    if (name.ends_with(".bn.beta") || name.ends_with(".conv.bias") ||
        name.ends_with(".linear.bias"))
      for (double v : t.values()) CHECK(v == 0.0);
    CHECK(t.requires_grad());
    CHECK(t.is_leaf());
  }
  for (const auto& [name, buf] : m.named_buffers()) {
    const double want = name.ends_with(".running_var") ? 1.0 : 0.0;
    for (double v : *buf) CHECK(v == want);
  }
}

TEST_CASE("he-uniform weights stay within the fan-in bound") {
  Model m = dnet::build_model(ModelSpec::tiny(), 11);
  for (const auto& [name, t] : m.named_params) {
    if (!name.ends_with(".conv.weight") && !name.ends_with(".linear.weight")) continue;
    std::int64_t fan_in = 1;
    const auto& s = t.shape();
    if (s.size() == 4)
      fan_in = static_cast<std::int64_t>(s[1]) * s[2] * s[3];
    else
      fan_in = s[0];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double v : t.values()) {
      CHECK(std::fabs(v) <= bound);
    }
  }
}

TEST_CASE("validate_spec rejects broken channel chains naming the stage") {
  ModelSpec s = ModelSpec::tiny();
  s.blocks[1].in_channels = 9;  // transition actually emits 8
  try {
    dnet::validate_spec(s);
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("block2") != std::string::npos);
  }
  ModelSpec t = ModelSpec::tiny();
  t.compression = 0.0;
  CHECK_THROWS_AS(dnet::validate_spec(t), std::invalid_argument);
  ModelSpec u = ModelSpec::tiny();
  u.blocks.clear();
  CHECK_THROWS_AS(dnet::validate_spec(u), std::invalid_argument);
}

// ---- model_forward ----------------------------------------------------------

TEST_CASE("model_forward yields one score per row, strictly inside (0,1)") {
  dnet::Rng rng(26);
  Model m = dnet::build_model(ModelSpec::tiny(), 5);
  Tensor x = random_image({3, 3, 12, 12}, rng);
  Tensor y = dnet::model_forward(m, x);
  REQUIRE(y.shape() == dnet::Shape{3});
  for (double v : y.values()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("inference scores are row-independent") {
  dnet::Rng rng(28);
  Model m = dnet::build_model(ModelSpec::tiny(), 6);
  m.mode = Mode::inference;
  Tensor a = random_image({1, 3, 10, 10}, rng);
  Tensor b = random_image({1, 3, 10, 10}, rng);

  // duplicated rows score identically
  std::vector<double> dup(a.values().begin(), a.values().end());
  dup.insert(dup.end(), a.values().begin(), a.values().end());
  Tensor both({2, 3, 10, 10}, std::move(dup));
  Tensor sd = dnet::model_forward(m, both);
  CHECK(sd.values()[0] == sd.values()[1]);

  // batch of two equals the two singles, bit for bit
  std::vector<double> ab(a.values().begin(), a.values().end());
  ab.insert(ab.end(), b.values().begin(), b.values().end());
  Tensor batch({2, 3, 10, 10}, std::move(ab));
  Tensor sb = dnet::model_forward(m, batch);
  CHECK(sb.values()[0] == dnet::model_forward(m, a).values()[0]);
  CHECK(sb.values()[1] == dnet::model_forward(m, b).values()[0]);
}

TEST_CASE("model_forward backpropagates into every parameter") {
  dnet::Rng rng(30);
  Model m = dnet::build_model(ModelSpec::tiny(), 8);
  Tensor x = random_image({2, 3, 8, 8}, rng);
  Tensor y = dnet::model_forward(m, x);
  dnet::sum(y).backward();
  for (const auto& [name, t] : m.named_params) {
    INFO(name);
    CHECK(t.has_grad());
  }
}

TEST_CASE("the large preset builds and classifies a 96x96 batch") {
  Model m = dnet::build_model(ModelSpec::densenet201_like(), 3);
  m.mode = Mode::inference;
  CHECK(m.spec.head_in_channels() == 1920);
  dnet::Rng rng(32);
  Tensor x = random_image({1, 3, 96, 96}, rng);
  Tensor y = dnet::model_forward(m, x);
  REQUIRE(y.shape() == dnet::Shape{1});
  CHECK(y.values()[0] > 0.0);
  CHECK(y.values()[0] < 1.0);
}

TEST_CASE("spatial underflow surfaces the failing stage by name") {
  Model m = dnet::build_model(ModelSpec::densenet201_like(), 4);
  m.mode = Mode::inference;
  Tensor x = Tensor::full({1, 3, 8, 8}, 0.5);  // 8 -> 4 -> 1, dies at trans1 pooling
  try {
    dnet::model_forward(m, x);
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("trans1") != std::string::npos);
  }
}

TEST_SUITE_END();
