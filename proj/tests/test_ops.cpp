#include <doctest.h>

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

#include "dnet/ops.hpp"
#include "dnet/rng.hpp"
#include "oracles.hpp"

using dnet::BatchNormParams;
using dnet::ConvParams;
using dnet::Mode;
using dnet::PoolKind;
using dnet::Tensor;

namespace {

Tensor random_tensor(dnet::Shape shape, dnet::Rng& rng, bool requires_grad = false,
                     double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<size_t>(dnet::shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

}  // namespace

TEST_SUITE_BEGIN("ops");

// ---- conv2d -----------------------------------------------------------------

TEST_CASE("conv2d 3x3 input, 2x2 ones kernel") {
  Tensor x({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  ConvParams p;
  p.kernel = Tensor({1, 1, 2, 2}, {1, 1, 1, 1});
  Tensor y = dnet::conv2d(x, p);
  REQUIRE(y.shape() == dnet::Shape{1, 1, 2, 2});
  CHECK(y.values()[0] == 12.0);
  CHECK(y.values()[1] == 16.0);
  CHECK(y.values()[2] == 24.0);
  CHECK(y.values()[3] == 28.0);
}

TEST_CASE("conv2d identity 1x1 kernel reproduces the input") {
  dnet::Rng rng(7);
  Tensor x = random_tensor({2, 1, 4, 5}, rng);
  ConvParams p;
  p.kernel = Tensor({1, 1, 1, 1}, {1.0});
  Tensor y = dnet::conv2d(x, p);
  REQUIRE(y.shape() == x.shape());
  for (size_t i = 0; i < x.values().size(); ++i) CHECK(y.values()[i] == x.values()[i]);
}

TEST_CASE("conv2d zero input, zero bias gives zero output") {
  dnet::Rng rng(8);
  Tensor x = Tensor::zeros({1, 3, 4, 4});
  ConvParams p;
  p.kernel = random_tensor({2, 3, 3, 3}, rng);
  p.bias = Tensor::zeros({2});
  p.padding = {1, 1};
  Tensor y = dnet::conv2d(x, p);
  for (double v : y.values()) CHECK(v == 0.0);
}

TEST_CASE("conv2d rejects channel mismatch naming both shapes") {
  Tensor x = Tensor::zeros({1, 3, 4, 4});
  ConvParams p;
  p.kernel = Tensor::zeros({2, 4, 3, 3});
  try {
    dnet::conv2d(x, p);
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[1,3,4,4]") != std::string::npos);
    CHECK(msg.find("[2,4,3,3]") != std::string::npos);
  }
}

TEST_CASE("conv2d rejects kernels that exceed the padded input") {
  Tensor x = Tensor::zeros({1, 1, 3, 3});
  ConvParams p;
  p.kernel = Tensor::zeros({1, 1, 5, 5});
  CHECK_THROWS_AS(dnet::conv2d(x, p), std::invalid_argument);
  p.padding = {1, 1};  // padded height 5: fits exactly
  CHECK_NOTHROW(dnet::conv2d(x, p));
}

TEST_CASE("conv2d output extent uses floor division") {
  // (5 + 0 - 2)/2 + 1 = floor(1.5) + 1 = 2
  Tensor x = Tensor::zeros({1, 1, 5, 5});
  ConvParams p;
  p.kernel = Tensor::zeros({1, 1, 2, 2});
  p.stride = {2, 2};
  Tensor y = dnet::conv2d(x, p);
  CHECK(y.shape() == dnet::Shape{1, 1, 2, 2});
}

TEST_CASE("conv2d forward and gradients match the quadruple-loop oracle exactly") {
  dnet::Rng rng(21);
  for (int trial = 0; trial < 8; ++trial) {
    oracle::ConvCase c{2,
                       1 + static_cast<int>(rng.below(3)),
                       3 + static_cast<int>(rng.below(3)),
                       3 + static_cast<int>(rng.below(3)),
                       1 + static_cast<int>(rng.below(3)),
                       1 + static_cast<int>(rng.below(3)),
                       1 + static_cast<int>(rng.below(3)),
                       1 + static_cast<int>(rng.below(2)),
                       1 + static_cast<int>(rng.below(2)),
                       static_cast<int>(rng.below(2)),
                       static_cast<int>(rng.below(2))};
    Tensor x = random_tensor({c.N, c.C, c.H, c.W}, rng, true);
    Tensor k = random_tensor({c.OC, c.C, c.KH, c.KW}, rng, true);
    Tensor b = random_tensor({c.OC}, rng, true);
    ConvParams p;
    p.kernel = k;
    p.bias = b;
    p.stride = {c.sh, c.sw};
    p.padding = {c.ph, c.pw};
    Tensor y = dnet::conv2d(x, p);

    const std::vector<double> xs(x.values().begin(), x.values().end());
    const std::vector<double> ks(k.values().begin(), k.values().end());
    const std::vector<double> bs(b.values().begin(), b.values().end());
    const auto want = oracle::conv_forward(c, xs, ks, &bs);
    REQUIRE(want.size() == y.values().size());
    for (size_t i = 0; i < want.size(); ++i) CHECK(y.values()[i] == want[i]);

    dnet::sum(y).backward();
    const std::vector<double> ones(want.size(), 1.0);
    const auto grads = oracle::conv_backward(c, xs, ks, ones);
    for (size_t i = 0; i < grads.dx.size(); ++i) CHECK(x.grad()[i] == grads.dx[i]);
    for (size_t i = 0; i < grads.dk.size(); ++i) CHECK(k.grad()[i] == grads.dk[i]);
    for (size_t i = 0; i < grads.db.size(); ++i) CHECK(b.grad()[i] == grads.db[i]);
  }
}

TEST_CASE("conv2d gradients pass finite differences") {
  dnet::Rng rng(31);
  Tensor x = random_tensor({2, 2, 4, 4}, rng, true);
  Tensor k = random_tensor({3, 2, 3, 3}, rng, true);
  Tensor b = random_tensor({3}, rng, true);
  auto build = [&] {
    ConvParams p;
    p.kernel = k;
    p.bias = b;
    p.padding = {1, 1};
    return dnet::sum(dnet::mul(dnet::conv2d(x, p), dnet::conv2d(x, p)));
  };
  auto fd = oracle::fd_check(build, {x, k, b}, 1e-4);
  CHECK_MESSAGE(fd.ok(1e-4), fd.worst_at);
}

// ---- batch_norm2d -----------------------------------------------------------

TEST_CASE("batch norm maps constant input to zeros in training mode") {
  BatchNormParams p = BatchNormParams::make(2);
  Tensor x = Tensor::full({2, 2, 2, 2}, 3.25);
  Tensor y = dnet::batch_norm2d(x, p, Mode::training);
  for (double v : y.values()) CHECK(v == 0.0);
}

TEST_CASE("batch norm with gamma 0 emits beta everywhere") {
  BatchNormParams p = BatchNormParams::make(1);
  p.gamma.mutable_values()[0] = 0.0;
  p.beta.mutable_values()[0] = 4.5;
  dnet::Rng rng(3);
  Tensor x = random_tensor({1, 1, 3, 3}, rng);
  Tensor y = dnet::batch_norm2d(x, p, Mode::training);
  for (double v : y.values()) CHECK(v == 4.5);
}

TEST_CASE("batch norm {1,3} plane matches the scalar oracle") {
  BatchNormParams p = BatchNormParams::make(1);
  Tensor x({1, 1, 1, 2}, {1.0, 3.0});
  Tensor y = dnet::batch_norm2d(x, p, Mode::training);
  // scalar oracle: mean 2, biased var 1, (x - mean)/sqrt(var + eps)
  const double want = 1.0 / std::sqrt(1.0 + 1e-5);
  CHECK(y.values()[0] == doctest::Approx(-want).epsilon(1e-12));
  CHECK(y.values()[1] == doctest::Approx(want).epsilon(1e-12));
  CHECK(std::fabs(y.values()[1] - 1.0) < 1e-4);  // approximately +/- 1
}

TEST_CASE("batch norm updates running stats with unbiased variance") {
  BatchNormParams p = BatchNormParams::make(1);
  Tensor x({1, 1, 1, 4}, {1.0, 2.0, 3.0, 4.0});
  dnet::batch_norm2d(x, p, Mode::training);
  // mean 2.5; biased var 1.25; unbiased var 1.25 * 4/3
  CHECK(p.running_mean[0] == doctest::Approx(0.9 * 0.0 + 0.1 * 2.5).epsilon(1e-15));
  CHECK(p.running_var[0] ==
        doctest::Approx(0.9 * 1.0 + 0.1 * (1.25 * 4.0 / 3.0)).epsilon(1e-15));
}

TEST_CASE("batch norm inference uses running stats, not batch stats") {
  BatchNormParams p = BatchNormParams::make(1);
  p.running_mean[0] = 1.0;
  p.running_var[0] = 4.0;
  Tensor x({1, 1, 1, 2}, {3.0, 5.0});
  Tensor y = dnet::batch_norm2d(x, p, Mode::inference);
  CHECK(y.values()[0] == doctest::Approx((3.0 - 1.0) / std::sqrt(4.0 + 1e-5)));
  CHECK(y.values()[1] == doctest::Approx((5.0 - 1.0) / std::sqrt(4.0 + 1e-5)));
  // inference must not touch the running stats
  CHECK(p.running_mean[0] == 1.0);
  CHECK(p.running_var[0] == 4.0);
}

TEST_CASE("batch norm training rejects single-element statistics") {
  BatchNormParams p = BatchNormParams::make(1);
  Tensor x({1, 1, 1, 1}, {2.0});
  CHECK_THROWS_AS(dnet::batch_norm2d(x, p, Mode::training), std::invalid_argument);
  CHECK_NOTHROW(dnet::batch_norm2d(x, p, Mode::inference));
}

TEST_CASE("batch norm rejects channel mismatch") {
  BatchNormParams p = BatchNormParams::make(3);
  Tensor x = Tensor::zeros({1, 2, 2, 2});
  CHECK_THROWS_AS(dnet::batch_norm2d(x, p, Mode::training), std::invalid_argument);
}

TEST_CASE("batch norm gradients pass finite differences in both modes") {
  dnet::Rng rng(17);
  for (Mode mode : {Mode::training, Mode::inference}) {
    BatchNormParams p = BatchNormParams::make(3);
    p.gamma = random_tensor({3}, rng, true, 0.5, 1.5);
    p.beta = random_tensor({3}, rng, true, -0.5, 0.5);
    p.running_mean = {0.1, -0.2, 0.3};
    p.running_var = {1.1, 0.9, 1.3};
    Tensor x = random_tensor({2, 3, 3, 3}, rng, true);
    auto build = [&] {
      Tensor y = dnet::batch_norm2d(x, p, mode);
      return dnet::sum(dnet::mul(y, y));
    };
    auto fd = oracle::fd_check(build, {x, p.gamma, p.beta}, 1e-4);
    CHECK_MESSAGE(fd.ok(1e-4), fd.worst_at);
  }
}

// ---- relu / sigmoid ---------------------------------------------------------

TEST_CASE("relu clamps negatives and zero") {
  Tensor x({3}, {-1.0, 0.0, 2.0});
  Tensor y = dnet::relu(x);
  CHECK(y.values()[0] == 0.0);
  CHECK(y.values()[1] == 0.0);
  CHECK(y.values()[2] == 2.0);

  Tensor neg = dnet::relu(Tensor({2}, {-5.0, -0.1}));
  for (double v : neg.values()) CHECK(v == 0.0);
  Tensor pos({2}, {5.0, 0.1});
  Tensor same = dnet::relu(pos);
  for (int i = 0; i < 2; ++i) CHECK(same.values()[i] == pos.values()[i]);
}

TEST_CASE("relu gradient passes only where x > 0") {
  Tensor x({3}, {-1.0, 0.0, 2.0}, true);
  dnet::sum(dnet::relu(x)).backward();
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 0.0);
  CHECK(x.grad()[2] == 1.0);
}

TEST_CASE("sigmoid hits the analytic points and saturates safely") {
  Tensor x({3}, {0.0, 1000.0, -1000.0});
  Tensor y = dnet::sigmoid(x);
  CHECK(y.values()[0] == 0.5);
  CHECK(y.values()[1] == 1.0);
  CHECK(y.values()[2] == 0.0);
}

TEST_CASE("sigmoid symmetry s(-x) == 1 - s(x)") {
  dnet::Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    const double v = rng.uniform(-20.0, 20.0);
    Tensor a({1}, {v});
    Tensor b({1}, {-v});
    CHECK(dnet::sigmoid(b).values()[0] ==
          doctest::Approx(1.0 - dnet::sigmoid(a).values()[0]).epsilon(1e-12));
  }
}

TEST_CASE("relu and sigmoid pass finite differences") {
  dnet::Rng rng(23);
  Tensor x = random_tensor({2, 7}, rng, true, -2.0, 2.0);
  // keep coordinates away from relu's kink so central differences are valid
  for (auto& v : x.mutable_values())
    if (std::fabs(v) < 0.05) v = 0.1;
  auto build_relu = [&] { return dnet::sum(dnet::mul(dnet::relu(x), dnet::relu(x))); };
  auto fd1 = oracle::fd_check(build_relu, {x}, 1e-4);
  CHECK_MESSAGE(fd1.ok(1e-4), fd1.worst_at);
  auto build_sig = [&] { return dnet::sum(dnet::mul(dnet::sigmoid(x), dnet::sigmoid(x))); };
  auto fd2 = oracle::fd_check(build_sig, {x}, 1e-4);
  CHECK_MESSAGE(fd2.ok(1e-4), fd2.worst_at);
}

// ---- pool2d -----------------------------------------------------------------

TEST_CASE("pooling examples on a 2x2 input") {
  Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor mx = dnet::pool2d(x, PoolKind::max, {2, 2}, {1, 1});
  CHECK(mx.shape() == dnet::Shape{1, 1, 1, 1});
  CHECK(mx.values()[0] == 4.0);
  Tensor av = dnet::pool2d(x, PoolKind::average, {2, 2}, {1, 1});
  CHECK(av.values()[0] == 2.5);
}

TEST_CASE("max pool ties route gradient to the first window element") {
  Tensor x = Tensor::full({1, 1, 4, 4}, 1.0, true);
  Tensor y = dnet::pool2d(x, PoolKind::max, {2, 2}, {2, 2});
  for (double v : y.values()) CHECK(v == 1.0);
  dnet::sum(y).backward();
  // brute-force window scan: first occurrence is each window's top-left
  for (int h = 0; h < 4; ++h)
    for (int w = 0; w < 4; ++w) {
      const double want = (h % 2 == 0 && w % 2 == 0) ? 1.0 : 0.0;
      CHECK(x.grad()[h * 4 + w] == want);
    }
}

TEST_CASE("pool rejects windows larger than the input") {
  Tensor x = Tensor::zeros({1, 1, 2, 2});
  CHECK_THROWS_AS(dnet::pool2d(x, PoolKind::max, {3, 3}, {1, 1}), std::invalid_argument);
}

TEST_CASE("pool gradients pass finite differences") {
  dnet::Rng rng(29);
  Tensor x = random_tensor({2, 2, 5, 5}, rng, true);
  auto build_avg = [&] {
    Tensor y = dnet::pool2d(x, PoolKind::average, {2, 2}, {2, 2});
    return dnet::sum(dnet::mul(y, y));
  };
  auto fd1 = oracle::fd_check(build_avg, {x}, 1e-4);
  CHECK_MESSAGE(fd1.ok(1e-4), fd1.worst_at);
  // separate the max-pool input values so central differences cannot flip
  // any window's argmax
  std::vector<double> grid(100);
  for (size_t i = 0; i < grid.size(); ++i) grid[i] = 0.01 * static_cast<double>(i);
  for (size_t i = grid.size(); i > 1; --i) std::swap(grid[i - 1], grid[rng.below(i)]);
  Tensor xm({2, 2, 5, 5}, std::move(grid), true);
  auto build_max = [&] {
    Tensor y = dnet::pool2d(xm, PoolKind::max, {3, 3}, {2, 2});
    return dnet::sum(dnet::mul(y, y));
  };
  auto fd2 = oracle::fd_check(build_max, {xm}, 1e-4);
  CHECK_MESSAGE(fd2.ok(1e-4), fd2.worst_at);
}

TEST_CASE("global average pooling flattens to N x C") {
  Tensor x({1, 2, 2, 2}, {1, 2, 3, 4, 10, 20, 30, 40});
  Tensor y = dnet::global_avg_pool(x);
  REQUIRE(y.shape() == dnet::Shape{1, 2});
  CHECK(y.values()[0] == 2.5);
  CHECK(y.values()[1] == 25.0);
}

// ---- linear -----------------------------------------------------------------

TEST_CASE("linear identity weight reproduces the input") {
  Tensor x({2, 2}, {1, 2, 3, 4});
  Tensor w({2, 2}, {1, 0, 0, 1});
  Tensor b({2}, {0, 0});
  Tensor y = dnet::linear(x, w, b);
  for (int i = 0; i < 4; ++i) CHECK(y.values()[i] == x.values()[i]);
}

TEST_CASE("linear broadcasts the bias over zero input") {
  Tensor x = Tensor::zeros({3, 2});
  Tensor w = Tensor::zeros({2, 4});
  Tensor b({4}, {1, 2, 3, 4});
  Tensor y = dnet::linear(x, w, b);
  for (int n = 0; n < 3; ++n)
    for (int g = 0; g < 4; ++g) CHECK(y.values()[n * 4 + g] == b.values()[g]);
}

TEST_CASE("linear worked example") {
  Tensor x({1, 2}, {1, 2});
  Tensor w({2, 2}, {1, 0, 0, 1});
  Tensor b({2}, {10, 10});
  Tensor y = dnet::linear(x, w, b);
  CHECK(y.values()[0] == 11.0);
  CHECK(y.values()[1] == 12.0);
}

TEST_CASE("linear rejects mismatched extents") {
  CHECK_THROWS_AS(dnet::linear(Tensor::zeros({1, 3}), Tensor::zeros({2, 2}),
                               Tensor::zeros({2})),
                  std::invalid_argument);
  CHECK_THROWS_AS(dnet::linear(Tensor::zeros({1, 2}), Tensor::zeros({2, 2}),
                               Tensor::zeros({3})),
                  std::invalid_argument);
}

TEST_CASE("linear gradients pass finite differences") {
  dnet::Rng rng(37);
  Tensor x = random_tensor({3, 4}, rng, true);
  Tensor w = random_tensor({4, 2}, rng, true);
  Tensor b = random_tensor({2}, rng, true);
  auto build = [&] {
    Tensor y = dnet::linear(x, w, b);
    return dnet::sum(dnet::mul(y, y));
  };
  auto fd = oracle::fd_check(build, {x, w, b}, 1e-4);
  CHECK_MESSAGE(fd.ok(1e-4), fd.worst_at);
}

// ---- concat / slice ---------------------------------------------------------

TEST_CASE("concat of a single input equals the input") {
  dnet::Rng rng(41);
  Tensor x = random_tensor({2, 3, 2, 2}, rng);
  std::array<Tensor, 1> xs{x};
  Tensor y = dnet::concat_channels(xs);
  REQUIRE(y.shape() == x.shape());
  for (size_t i = 0; i < x.values().size(); ++i) CHECK(y.values()[i] == x.values()[i]);
}

TEST_CASE("concat stacks channel blocks in argument order") {
  Tensor a = Tensor::full({1, 2, 1, 2}, 1.0);
  Tensor b = Tensor::full({1, 3, 1, 2}, 2.0);
  std::array<Tensor, 2> xs{a, b};
  Tensor y = dnet::concat_channels(xs);
  REQUIRE(y.shape() == dnet::Shape{1, 5, 1, 2});
  for (int c = 0; c < 5; ++c)
    for (int w = 0; w < 2; ++w) CHECK(y.values()[c * 2 + w] == (c < 2 ? 1.0 : 2.0));
}

TEST_CASE("concat rejects mismatched inputs naming the offending index") {
  Tensor a = Tensor::zeros({1, 2, 2, 2});
  Tensor b = Tensor::zeros({1, 2, 3, 2});
  std::array<Tensor, 2> xs{a, b};
  try {
    dnet::concat_channels(xs);
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("input 1") != std::string::npos);
  }
}

TEST_CASE("concat rejects an empty input list") {
  CHECK_THROWS_AS(dnet::concat_channels({}), std::invalid_argument);
}

TEST_CASE("concat then slice recovers each input bit-exactly") {
  dnet::Rng rng(43);
  for (int trial = 0; trial < 10; ++trial) {
    const int c1 = 1 + static_cast<int>(rng.below(4));
    const int c2 = 1 + static_cast<int>(rng.below(4));
    Tensor a = random_tensor({2, c1, 3, 2}, rng);
    Tensor b = random_tensor({2, c2, 3, 2}, rng);
    std::array<Tensor, 2> xs{a, b};
    Tensor y = dnet::concat_channels(xs);
    Tensor sa = dnet::slice_channels(y, 0, c1);
    Tensor sb = dnet::slice_channels(y, c1, c1 + c2);
    for (size_t i = 0; i < a.values().size(); ++i) CHECK(sa.values()[i] == a.values()[i]);
    for (size_t i = 0; i < b.values().size(); ++i) CHECK(sb.values()[i] == b.values()[i]);
  }
}

TEST_CASE("concat and slice gradients pass finite differences") {
  dnet::Rng rng(47);
  Tensor a = random_tensor({1, 2, 2, 2}, rng, true);
  Tensor b = random_tensor({1, 1, 2, 2}, rng, true);
  auto build = [&] {
    std::array<Tensor, 2> xs{a, b};
    Tensor y = dnet::concat_channels(xs);
    Tensor s = dnet::slice_channels(y, 1, 3);
    return dnet::sum(dnet::mul(s, s));
  };
  auto fd = oracle::fd_check(build, {a, b}, 1e-4);
  CHECK_MESSAGE(fd.ok(1e-4), fd.worst_at);
}

// ---- bce --------------------------------------------------------------------

TEST_CASE("bce analytic points") {
  Tensor half({1}, {0.5});
  Tensor one({1}, {1.0});
  CHECK(dnet::bce_loss(half, one).item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  Tensor perfect({2}, {1.0, 0.0});
  Tensor labels({2}, {1.0, 0.0});
  CHECK(dnet::bce_loss(perfect, labels).item() < 1e-6);  // clamp keeps it near zero

  Tensor p({2}, {0.9, 0.2});
  Tensor y({2}, {1.0, 0.0});
  const double want = -(std::log(0.9) + std::log(0.8)) / 2.0;  // scalar log-loss oracle
  CHECK(dnet::bce_loss(p, y).item() == doctest::Approx(want).epsilon(1e-15));
}

TEST_CASE("bce rejects labels outside {0,1}") {
  Tensor p({2}, {0.5, 0.5});
  CHECK_THROWS_AS(dnet::bce_loss(p, Tensor({2}, {1.0, 0.5})), std::invalid_argument);
  CHECK_THROWS_AS(dnet::bce_loss(p, Tensor({1}, {1.0})), std::invalid_argument);  // length
}

TEST_CASE("bce gradients pass finite differences") {
  dnet::Rng rng(53);
  Tensor p = random_tensor({6}, rng, true, 0.05, 0.95);
  Tensor y({6}, {1, 0, 1, 1, 0, 0});
  auto build = [&] { return dnet::bce_loss(p, y); };
  auto fd = oracle::fd_check(build, {p}, 1e-4);
  CHECK_MESSAGE(fd.ok(1e-4), fd.worst_at);
}

// ---- reshape ----------------------------------------------------------------

TEST_CASE("reshape preserves flat order and rejects bad sizes") {
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor y = dnet::reshape(x, {3, 2});
  for (int i = 0; i < 6; ++i) CHECK(y.values()[i] == x.values()[i]);
  CHECK_THROWS_AS(dnet::reshape(x, {4, 2}), std::invalid_argument);
}

TEST_SUITE_END();
