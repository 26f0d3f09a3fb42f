#include "dnet/ops.hpp"

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace dnet {

namespace {

using std::int64_t;

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void require_rank(const Tensor& t, int rank, const char* op, const char* what) {
  if (!t.defined() || t.rank() != rank) {
    std::ostringstream os;
    os << op << ": " << what << " must be rank " << rank << ", got "
       << (t.defined() ? shape_str(t.shape()) : std::string("<undefined>"));
    fail(os.str());
  }
}

inline int64_t idx4(int64_t d1, int64_t d2, int64_t d3, int64_t i0, int64_t i1,
                    int64_t i2, int64_t i3) {
  return ((i0 * d1 + i1) * d2 + i2) * d3 + i3;
}

// floor((in + 2*pad - k) / stride) + 1, rejecting empty outputs
int out_extent(int in, int k, int stride, int pad, const char* op, const char* axis,
               const Shape& xs, const Shape& ks) {
  const int span = in + 2 * pad - k;
  if (span < 0) {
    std::ostringstream os;
    os << op << ": kernel " << shape_str(ks) << " exceeds padded input " << shape_str(xs)
       << " along " << axis;
    fail(os.str());
  }
  return span / stride + 1;
}

}  // namespace

BatchNormParams BatchNormParams::make(int channels) {
  BatchNormParams p;
  p.gamma = Tensor::full({channels}, 1.0, true);
  p.beta = Tensor::zeros({channels}, true);
  p.running_mean.assign(channels, 0.0);
  p.running_var.assign(channels, 1.0);
  return p;
}

Tensor conv2d(const Tensor& x, const ConvParams& p) {
  require_rank(x, 4, "conv2d", "input");
  require_rank(p.kernel, 4, "conv2d", "kernel");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int OC = p.kernel.dim(0), KC = p.kernel.dim(1), KH = p.kernel.dim(2),
            KW = p.kernel.dim(3);
  if (KC != C) {
    std::ostringstream os;
    os << "conv2d: input " << shape_str(x.shape()) << " has " << C << " channels but kernel "
       << shape_str(p.kernel.shape()) << " expects " << KC;
    fail(os.str());
  }
  if (p.stride[0] < 1 || p.stride[1] < 1) fail("conv2d: stride must be >= 1");
  if (p.padding[0] < 0 || p.padding[1] < 0) fail("conv2d: padding must be >= 0");
  const bool has_bias = p.bias.defined();
  if (has_bias && (p.bias.rank() != 1 || p.bias.dim(0) != OC)) {
    std::ostringstream os;
    os << "conv2d: bias " << shape_str(p.bias.shape()) << " does not match " << OC
       << " output channels";
    fail(os.str());
  }
  const int sh = p.stride[0], sw = p.stride[1], ph = p.padding[0], pw = p.padding[1];
  const int OH = out_extent(H, KH, sh, ph, "conv2d", "height", x.shape(), p.kernel.shape());
  const int OW = out_extent(W, KW, sw, pw, "conv2d", "width", x.shape(), p.kernel.shape());

  const auto xv = x.values();
  const auto kv = p.kernel.values();
  std::vector<double> out(static_cast<size_t>(N) * OC * OH * OW, 0.0);
  // Canonical reduction order (ic, kh, kw ascending): summation order is part
  // of the op's contract so reference implementations can match bit-exactly.
  for (int n = 0; n < N; ++n)
    for (int oc = 0; oc < OC; ++oc)
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow) {
          double acc = has_bias ? p.bias.values()[oc] : 0.0;
          for (int ic = 0; ic < C; ++ic)
            for (int kh = 0; kh < KH; ++kh) {
              const int ih = oh * sh - ph + kh;
              if (ih < 0 || ih >= H) continue;
              for (int kw = 0; kw < KW; ++kw) {
                const int iw = ow * sw - pw + kw;
                if (iw < 0 || iw >= W) continue;
                acc += xv[idx4(C, H, W, n, ic, ih, iw)] *
                       kv[idx4(KC, KH, KW, oc, ic, kh, kw)];
              }
            }
          out[idx4(OC, OH, OW, n, oc, oh, ow)] = acc;
        }

  std::vector<Tensor> parents{x, p.kernel};
  if (has_bias) parents.push_back(p.bias);
  Tensor xc = x, kc = p.kernel;
  return make_from_op(
      {N, OC, OH, OW}, std::move(out), parents,
      [=](std::span<const double> g, std::span<std::span<double>> pg) {
        const auto xr = xc.values();
        const auto kr = kc.values();
        auto dx = pg[0];
        auto dk = pg[1];
        for (int n = 0; n < N; ++n)
          for (int oc = 0; oc < OC; ++oc)
            for (int oh = 0; oh < OH; ++oh)
              for (int ow = 0; ow < OW; ++ow) {
                const double go = g[idx4(OC, OH, OW, n, oc, oh, ow)];
                for (int ic = 0; ic < C; ++ic)
                  for (int kh = 0; kh < KH; ++kh) {
                    const int ih = oh * sh - ph + kh;
                    if (ih < 0 || ih >= H) continue;
                    for (int kw = 0; kw < KW; ++kw) {
                      const int iw = ow * sw - pw + kw;
                      if (iw < 0 || iw >= W) continue;
                      const int64_t xi = idx4(C, H, W, n, ic, ih, iw);
                      const int64_t ki = idx4(KC, KH, KW, oc, ic, kh, kw);
                      if (!dx.empty()) dx[xi] += go * kr[ki];
                      if (!dk.empty()) dk[ki] += go * xr[xi];
                    }
                  }
              }
        if (pg.size() > 2 && !pg[2].empty()) {
          auto db = pg[2];
          for (int n = 0; n < N; ++n)
            for (int oc = 0; oc < OC; ++oc)
              for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow)
                  db[oc] += g[idx4(OC, OH, OW, n, oc, oh, ow)];
        }
      });
}

Tensor batch_norm2d(const Tensor& x, BatchNormParams& p, Mode mode) {
  require_rank(x, 4, "batch_norm2d", "input");
  require_rank(p.gamma, 1, "batch_norm2d", "gamma");
  require_rank(p.beta, 1, "batch_norm2d", "beta");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (p.gamma.dim(0) != C || p.beta.dim(0) != C ||
      static_cast<int>(p.running_mean.size()) != C ||
      static_cast<int>(p.running_var.size()) != C) {
    std::ostringstream os;
    os << "batch_norm2d: input " << shape_str(x.shape()) << " has " << C
       << " channels but params carry " << p.gamma.dim(0);
    fail(os.str());
  }
  const int64_t m = static_cast<int64_t>(N) * H * W;
  const auto xv = x.values();
  const auto gv = p.gamma.values();
  const auto bv = p.beta.values();
  const int64_t plane = static_cast<int64_t>(H) * W;

  std::vector<double> out(xv.size());
  std::vector<double> xhat(xv.size());
  std::vector<double> invstd(C);

  if (mode == Mode::training) {
    if (m < 2) {
      std::ostringstream os;
      os << "batch_norm2d: training mode needs N*H*W >= 2, got " << m << " for input "
         << shape_str(x.shape());
      fail(os.str());
    }
    std::vector<double> mean(C, 0.0), var(C, 0.0);
    for (int c = 0; c < C; ++c) {
      double s = 0.0;
      for (int n = 0; n < N; ++n) {
        const double* row = xv.data() + (static_cast<int64_t>(n) * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) s += row[i];
      }
      mean[c] = s / static_cast<double>(m);
      double q = 0.0;
      for (int n = 0; n < N; ++n) {
        const double* row = xv.data() + (static_cast<int64_t>(n) * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          const double d = row[i] - mean[c];
          q += d * d;
        }
      }
      var[c] = q / static_cast<double>(m);  // biased
      invstd[c] = 1.0 / std::sqrt(var[c] + p.epsilon);
    }
    for (int c = 0; c < C; ++c) {
      const double unbiased = var[c] * static_cast<double>(m) / static_cast<double>(m - 1);
      p.running_mean[c] = (1.0 - p.momentum) * p.running_mean[c] + p.momentum * mean[c];
      p.running_var[c] = (1.0 - p.momentum) * p.running_var[c] + p.momentum * unbiased;
    }
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const int64_t base = (static_cast<int64_t>(n) * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          const double h = (xv[base + i] - mean[c]) * invstd[c];
          xhat[base + i] = h;
          out[base + i] = gv[c] * h + bv[c];
        }
      }
  } else {
    for (int c = 0; c < C; ++c) invstd[c] = 1.0 / std::sqrt(p.running_var[c] + p.epsilon);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const int64_t base = (static_cast<int64_t>(n) * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          const double h = (xv[base + i] - p.running_mean[c]) * invstd[c];
          xhat[base + i] = h;
          out[base + i] = gv[c] * h + bv[c];
        }
      }
  }

  Tensor gc = p.gamma;
  const bool training = (mode == Mode::training);
  return make_from_op(
      x.shape(), std::move(out), {x, p.gamma, p.beta},
      [=, xh = std::move(xhat), is = std::move(invstd)](std::span<const double> g,
                                                        std::span<std::span<double>> pg) {
        const auto gr = gc.values();
        auto dx = pg[0];
        auto dgamma = pg[1];
        auto dbeta = pg[2];
        for (int c = 0; c < C; ++c) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (int n = 0; n < N; ++n) {
            const int64_t base = (static_cast<int64_t>(n) * C + c) * plane;
            for (int64_t i = 0; i < plane; ++i) {
              sum_g += g[base + i];
              sum_gx += g[base + i] * xh[base + i];
            }
          }
          if (!dgamma.empty()) dgamma[c] += sum_gx;
          if (!dbeta.empty()) dbeta[c] += sum_g;
          if (!dx.empty()) {
            const double k = gr[c] * is[c];
            if (training) {
              const double mg = sum_g / static_cast<double>(m);
              const double mgx = sum_gx / static_cast<double>(m);
              for (int n = 0; n < N; ++n) {
                const int64_t base = (static_cast<int64_t>(n) * C + c) * plane;
                for (int64_t i = 0; i < plane; ++i)
                  dx[base + i] += k * (g[base + i] - mg - xh[base + i] * mgx);
              }
            } else {
              for (int n = 0; n < N; ++n) {
                const int64_t base = (static_cast<int64_t>(n) * C + c) * plane;
                for (int64_t i = 0; i < plane; ++i) dx[base + i] += k * g[base + i];
              }
            }
          }
        }
      });
}

Tensor relu(const Tensor& x) {
  if (!x.defined()) fail("relu: undefined tensor");
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  Tensor xc = x;
  return make_from_op(x.shape(), std::move(out), {x},
                      [xc](std::span<const double> g, std::span<std::span<double>> pg) {
                        auto dx = pg[0];
                        if (dx.empty()) return;
                        const auto xr = xc.values();
                        for (size_t i = 0; i < xr.size(); ++i)
                          if (xr[i] > 0.0) dx[i] += g[i];
                      });
}

Tensor sigmoid(const Tensor& x) {
  if (!x.defined()) fail("sigmoid: undefined tensor");
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (size_t i = 0; i < xv.size(); ++i) {
    const double v = xv[i];
    if (v >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out[i] = e / (1.0 + e);
    }
  }
  std::vector<double> saved = out;
  return make_from_op(x.shape(), std::move(out), {x},
                      [s = std::move(saved)](std::span<const double> g,
                                             std::span<std::span<double>> pg) {
                        auto dx = pg[0];
                        if (dx.empty()) return;
                        for (size_t i = 0; i < s.size(); ++i) dx[i] += g[i] * s[i] * (1.0 - s[i]);
                      });
}

Tensor pool2d(const Tensor& x, PoolKind kind, std::array<int, 2> window,
              std::array<int, 2> stride) {
  require_rank(x, 4, "pool2d", "input");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int wh = window[0], ww = window[1], sh = stride[0], sw = stride[1];
  if (wh < 1 || ww < 1) fail("pool2d: window must be >= 1");
  if (sh < 1 || sw < 1) fail("pool2d: stride must be >= 1");
  if (wh > H || ww > W) {
    std::ostringstream os;
    os << "pool2d: window " << wh << "x" << ww << " exceeds input " << shape_str(x.shape());
    fail(os.str());
  }
  const int OH = (H - wh) / sh + 1;
  const int OW = (W - ww) / sw + 1;
  const auto xv = x.values();
  std::vector<double> out(static_cast<size_t>(N) * C * OH * OW);
  std::vector<int64_t> argmax;
  if (kind == PoolKind::max) argmax.resize(out.size());

  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow) {
          const int64_t oi = idx4(C, OH, OW, n, c, oh, ow);
          if (kind == PoolKind::max) {
            double best = -std::numeric_limits<double>::infinity();
            int64_t best_i = -1;
            // first occurrence in row-major window scan wins ties
            for (int dh = 0; dh < wh; ++dh)
              for (int dw = 0; dw < ww; ++dw) {
                const int64_t xi = idx4(C, H, W, n, c, oh * sh + dh, ow * sw + dw);
                if (xv[xi] > best) {
                  best = xv[xi];
                  best_i = xi;
                }
              }
            out[oi] = best;
            argmax[oi] = best_i;
          } else {
            double s = 0.0;
            for (int dh = 0; dh < wh; ++dh)
              for (int dw = 0; dw < ww; ++dw)
                s += xv[idx4(C, H, W, n, c, oh * sh + dh, ow * sw + dw)];
            out[oi] = s / static_cast<double>(wh * ww);
          }
        }

  if (kind == PoolKind::max) {
    return make_from_op(
        {N, C, OH, OW}, std::move(out), {x},
        [am = std::move(argmax)](std::span<const double> g, std::span<std::span<double>> pg) {
          auto dx = pg[0];
          if (dx.empty()) return;
          for (size_t i = 0; i < am.size(); ++i) dx[am[i]] += g[i];
        });
  }
  const double inv = 1.0 / static_cast<double>(wh * ww);
  return make_from_op(
      {N, C, OH, OW}, std::move(out), {x},
      [=](std::span<const double> g, std::span<std::span<double>> pg) {
        auto dx = pg[0];
        if (dx.empty()) return;
        for (int n = 0; n < N; ++n)
          for (int c = 0; c < C; ++c)
            for (int oh = 0; oh < OH; ++oh)
              for (int ow = 0; ow < OW; ++ow) {
                const double go = g[idx4(C, OH, OW, n, c, oh, ow)] * inv;
                for (int dh = 0; dh < wh; ++dh)
                  for (int dw = 0; dw < ww; ++dw)
                    dx[idx4(C, H, W, n, c, oh * sh + dh, ow * sw + dw)] += go;
              }
      });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 4, "global_avg_pool", "input");
  Tensor pooled = pool2d(x, PoolKind::average, {x.dim(2), x.dim(3)}, {1, 1});
  return reshape(pooled, {x.dim(0), x.dim(1)});
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "linear", "input");
  require_rank(weight, 2, "linear", "weight");
  require_rank(bias, 1, "linear", "bias");
  const int N = x.dim(0), F = x.dim(1);
  const int G = weight.dim(1);
  if (weight.dim(0) != F || bias.dim(0) != G) {
    std::ostringstream os;
    os << "linear: input " << shape_str(x.shape()) << ", weight " << shape_str(weight.shape())
       << ", bias " << shape_str(bias.shape()) << " do not chain";
    fail(os.str());
  }
  const auto xv = x.values();
  const auto wv = weight.values();
  const auto bv = bias.values();
  std::vector<double> out(static_cast<size_t>(N) * G);
  for (int n = 0; n < N; ++n)
    for (int g = 0; g < G; ++g) {
      double acc = bv[g];
      for (int f = 0; f < F; ++f) acc += xv[n * F + f] * wv[f * G + g];
      out[n * G + g] = acc;
    }
  Tensor xc = x, wc = weight;
  return make_from_op(
      {N, G}, std::move(out), {x, weight, bias},
      [=](std::span<const double> g, std::span<std::span<double>> pg) {
        const auto xr = xc.values();
        const auto wr = wc.values();
        auto dx = pg[0];
        auto dw = pg[1];
        auto db = pg[2];
        if (!dx.empty())
          for (int n = 0; n < N; ++n)
            for (int f = 0; f < F; ++f) {
              double acc = 0.0;
              for (int k = 0; k < G; ++k) acc += g[n * G + k] * wr[f * G + k];
              dx[n * F + f] += acc;
            }
        if (!dw.empty())
          for (int f = 0; f < F; ++f)
            for (int k = 0; k < G; ++k) {
              double acc = 0.0;
              for (int n = 0; n < N; ++n) acc += xr[n * F + f] * g[n * G + k];
              dw[f * G + k] += acc;
            }
        if (!db.empty())
          for (int k = 0; k < G; ++k) {
            double acc = 0.0;
            for (int n = 0; n < N; ++n) acc += g[n * G + k];
            db[k] += acc;
          }
      });
}

Tensor concat_channels(std::span<const Tensor> xs) {
  if (xs.empty()) fail("concat_channels: needs at least one input");
  for (size_t i = 0; i < xs.size(); ++i)
    require_rank(xs[i], 4, "concat_channels", "every input");
  const int N = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3);
  int C = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].dim(0) != N || xs[i].dim(2) != H || xs[i].dim(3) != W) {
      std::ostringstream os;
      os << "concat_channels: input " << i << " has shape " << shape_str(xs[i].shape())
         << ", expected N,H,W of " << shape_str(xs[0].shape());
      fail(os.str());
    }
    C += xs[i].dim(1);
  }
  const int64_t plane = static_cast<int64_t>(H) * W;
  std::vector<double> out(static_cast<size_t>(N) * C * plane);
  std::vector<int> channels(xs.size());
  for (size_t i = 0; i < xs.size(); ++i) channels[i] = xs[i].dim(1);
  for (int n = 0; n < N; ++n) {
    int64_t coff = 0;
    for (size_t i = 0; i < xs.size(); ++i) {
      const int ci = channels[i];
      const auto src = xs[i].values();
      std::copy_n(src.data() + static_cast<int64_t>(n) * ci * plane, ci * plane,
                  out.data() + (static_cast<int64_t>(n) * C + coff) * plane);
      coff += ci;
    }
  }
  std::vector<Tensor> parents(xs.begin(), xs.end());
  return make_from_op(
      {N, C, H, W}, std::move(out), parents,
      [=, ch = std::move(channels)](std::span<const double> g, std::span<std::span<double>> pg) {
        for (int n = 0; n < N; ++n) {
          int64_t coff = 0;
          for (size_t i = 0; i < ch.size(); ++i) {
            if (!pg[i].empty()) {
              const double* src = g.data() + (static_cast<int64_t>(n) * C + coff) * plane;
              double* dst = pg[i].data() + static_cast<int64_t>(n) * ch[i] * plane;
              for (int64_t k = 0; k < ch[i] * plane; ++k) dst[k] += src[k];
            }
            coff += ch[i];
          }
        }
      });
}

Tensor slice_channels(const Tensor& x, int c_begin, int c_end) {
  require_rank(x, 4, "slice_channels", "input");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (c_begin < 0 || c_end > C || c_begin >= c_end) {
    std::ostringstream os;
    os << "slice_channels: range [" << c_begin << "," << c_end << ") invalid for " << C
       << " channels";
    fail(os.str());
  }
  const int SC = c_end - c_begin;
  const int64_t plane = static_cast<int64_t>(H) * W;
  const auto xv = x.values();
  std::vector<double> out(static_cast<size_t>(N) * SC * plane);
  for (int n = 0; n < N; ++n)
    std::copy_n(xv.data() + (static_cast<int64_t>(n) * C + c_begin) * plane, SC * plane,
                out.data() + static_cast<int64_t>(n) * SC * plane);
  return make_from_op({N, SC, H, W}, std::move(out), {x},
                      [=](std::span<const double> g, std::span<std::span<double>> pg) {
                        auto dx = pg[0];
                        if (dx.empty()) return;
                        for (int n = 0; n < N; ++n) {
                          const double* src = g.data() + static_cast<int64_t>(n) * SC * plane;
                          double* dst =
                              dx.data() + (static_cast<int64_t>(n) * C + c_begin) * plane;
                          for (int64_t k = 0; k < SC * plane; ++k) dst[k] += src[k];
                        }
                      });
}

namespace {
void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    std::ostringstream os;
    os << op << ": shapes " << shape_str(a.shape()) << " and " << shape_str(b.shape())
       << " differ";
    fail(os.str());
  }
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  return make_from_op(a.shape(), std::move(out), {a, b},
                      [](std::span<const double> g, std::span<std::span<double>> pg) {
                        for (auto& d : pg)
                          if (!d.empty())
                            for (size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  Tensor ac = a, bc = b;
  return make_from_op(a.shape(), std::move(out), {a, b},
                      [ac, bc](std::span<const double> g, std::span<std::span<double>> pg) {
                        const auto ar = ac.values(), br = bc.values();
                        if (!pg[0].empty())
                          for (size_t i = 0; i < g.size(); ++i) pg[0][i] += g[i] * br[i];
                        if (!pg[1].empty())
                          for (size_t i = 0; i < g.size(); ++i) pg[1][i] += g[i] * ar[i];
                      });
}

Tensor sum(const Tensor& x) {
  if (!x.defined()) fail("sum: undefined tensor");
  const auto xv = x.values();
  double s = 0.0;
  for (double v : xv) s += v;
  return make_from_op({1}, {s}, {x},
                      [](std::span<const double> g, std::span<std::span<double>> pg) {
                        auto dx = pg[0];
                        if (dx.empty()) return;
                        for (auto& d : dx) d += g[0];
                      });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (!x.defined()) fail("reshape: undefined tensor");
  if (shape_numel(shape) != x.numel()) {
    std::ostringstream os;
    os << "reshape: cannot view " << shape_str(x.shape()) << " as " << shape_str(shape);
    fail(os.str());
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_from_op(std::move(shape), std::move(out), {x},
                      [](std::span<const double> g, std::span<std::span<double>> pg) {
                        auto dx = pg[0];
                        if (dx.empty()) return;
                        for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
                      });
}

Tensor bce_loss(const Tensor& scores, const Tensor& labels) {
  if (!scores.defined() || !labels.defined()) fail("bce_loss: undefined tensor");
  require_same_shape(scores, labels, "bce_loss");
  const auto sv = scores.values();
  const auto lv = labels.values();
  const int64_t n = scores.numel();
  if (n < 1) fail("bce_loss: needs at least one element");
  constexpr double kEps = 1e-7;
  for (int64_t i = 0; i < n; ++i) {
    if (lv[i] != 0.0 && lv[i] != 1.0) {
      std::ostringstream os;
      os << "bce_loss: label at index " << i << " is " << lv[i] << ", expected 0 or 1";
      fail(os.str());
    }
  }
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double p = sv[i];
    if (p < kEps) p = kEps;
    if (p > 1.0 - kEps) p = 1.0 - kEps;
    total += -(lv[i] * std::log(p) + (1.0 - lv[i]) * std::log(1.0 - p));
  }
  const double loss = total / static_cast<double>(n);
  Tensor sc = scores, lc = labels;
  return make_from_op(
      {1}, {loss}, {scores, labels},
      [sc, lc, n](std::span<const double> g, std::span<std::span<double>> pg) {
        auto ds = pg[0];
        if (ds.empty()) return;
        const auto sr = sc.values();
        const auto lr = lc.values();
        const double scale = g[0] / static_cast<double>(n);
        for (int64_t i = 0; i < n; ++i) {
          const double p = sr[i];
          if (p < kEps || p > 1.0 - kEps) continue;  // clamp region: flat
          ds[i] += scale * (-lr[i] / p + (1.0 - lr[i]) / (1.0 - p));
        }
      });
}

}  // namespace dnet
