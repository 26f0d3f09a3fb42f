#include "dnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "dnet/png_io.hpp"
#include "dnet/rng.hpp"

namespace dnet {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

// salts for deriving independent child seeds
constexpr std::uint64_t kShuffleSalt = 0x01;

void shuffle_indices(std::vector<std::int64_t>& idx, Rng& rng) {
  for (std::int64_t i = static_cast<std::int64_t>(idx.size()) - 1; i > 0; --i) {
    const std::int64_t j = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(idx[i], idx[j]);
  }
}

}  // namespace

void Dataset::recount() {
  negatives = positives = 0;
  for (const auto& s : samples) (s.label == 1 ? positives : negatives) += 1;
}

Tensor image_to_tensor(const ImageU8& img) {
  const int H = img.height, W = img.width;
  std::vector<double> v(static_cast<size_t>(3) * H * W);
  for (int c = 0; c < 3; ++c)
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w)
        v[(static_cast<size_t>(c) * H + h) * W + w] =
            static_cast<double>(img.rgb[(static_cast<size_t>(h) * W + w) * 3 + c]) / 255.0;
  return Tensor({3, H, W}, std::move(v));
}

Dataset load_dataset(const std::string& image_dir, const std::string& labels_csv) {
  std::ifstream in(labels_csv, std::ios::binary);
  if (!in) fail("load_dataset: cannot open manifest '" + labels_csv + "'");

  Dataset ds;
  ds.manifest_path = labels_csv;
  std::unordered_set<std::string> seen;
  std::string line;
  std::int64_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (row == 1) {
      if (line != "id,label")
        fail("load_dataset: row 1: header must be exactly 'id,label', got '" + line + "'");
      continue;
    }
    if (line.empty()) continue;  // tolerate a trailing blank line
    const auto comma = line.find(',');
    std::ostringstream where;
    where << "load_dataset: row " << row;
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos)
      fail(where.str() + ": expected exactly two columns");
    const std::string id = line.substr(0, comma);
    const std::string label_s = line.substr(comma + 1);
    if (id.empty()) fail(where.str() + ": empty id");
    if (label_s != "0" && label_s != "1")
      fail(where.str() + ": label '" + label_s + "' is not 0 or 1");
    if (!seen.insert(id).second) fail(where.str() + ": duplicate id '" + id + "'");

    const std::string path = image_dir + "/" + id + ".png";
    ImageU8 img;
    try {
      img = read_png_rgb8(path);
    } catch (const std::exception& e) {
      fail(where.str() + ": " + e.what());
    }
    Sample s;
    s.id = id;
    s.image = image_to_tensor(img);
    s.label = (label_s == "1") ? 1 : 0;
    ds.samples.push_back(std::move(s));
  }
  if (row == 0) fail("load_dataset: manifest '" + labels_csv + "' is empty (missing header)");
  ds.recount();
  return ds;
}

std::pair<Dataset, Dataset> split(const Dataset& dataset, double train_fraction,
                                  std::uint64_t seed) {
  if (dataset.empty()) fail("split: dataset is empty");
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    fail("split: train_fraction must lie strictly between 0 and 1");
  const std::int64_t n = dataset.size();
  std::vector<std::int64_t> idx(n);
  for (std::int64_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(derive_seed(seed, kShuffleSalt));
  shuffle_indices(idx, rng);
  const auto cut = static_cast<std::int64_t>(std::llround(train_fraction * static_cast<double>(n)));

  Dataset train, test;
  train.manifest_path = test.manifest_path = dataset.manifest_path;
  for (std::int64_t i = 0; i < n; ++i)
    (i < cut ? train : test).samples.push_back(dataset.samples[idx[i]]);
  train.recount();
  test.recount();
  return {std::move(train), std::move(test)};
}

namespace {

void require_chw(const Tensor& t, const char* op) {
  if (!t.defined() || t.rank() != 3)
    fail(std::string(op) + ": image must be C x H x W, got " +
         (t.defined() ? shape_str(t.shape()) : std::string("<undefined>")));
}

}  // namespace

Tensor hflip(const Tensor& chw) {
  require_chw(chw, "hflip");
  const int C = chw.dim(0), H = chw.dim(1), W = chw.dim(2);
  const auto src = chw.values();
  std::vector<double> out(src.size());
  for (int c = 0; c < C; ++c)
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w)
        out[(static_cast<size_t>(c) * H + h) * W + w] =
            src[(static_cast<size_t>(c) * H + h) * W + (W - 1 - w)];
  return Tensor(chw.shape(), std::move(out));
}

Tensor vflip(const Tensor& chw) {
  require_chw(chw, "vflip");
  const int C = chw.dim(0), H = chw.dim(1), W = chw.dim(2);
  const auto src = chw.values();
  std::vector<double> out(src.size());
  for (int c = 0; c < C; ++c)
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w)
        out[(static_cast<size_t>(c) * H + h) * W + w] =
            src[(static_cast<size_t>(c) * H + (H - 1 - h)) * W + w];
  return Tensor(chw.shape(), std::move(out));
}

Tensor rotate90(const Tensor& chw, int k) {
  require_chw(chw, "rotate90");
  k = ((k % 4) + 4) % 4;
  if (k == 0) return Tensor(chw.shape(), {chw.values().begin(), chw.values().end()});
  const int C = chw.dim(0), H = chw.dim(1), W = chw.dim(2);
  if ((k % 2) == 1 && H != W)
    fail("rotate90: odd quarter turns need a square image, got " + shape_str(chw.shape()));
  const auto src = chw.values();
  std::vector<double> out(src.size());
  // one quarter turn: out(h, w) = in(w, H-1-h)
  auto turn = [C](const std::vector<double>& a, int ah, int aw, std::vector<double>& b) {
    // a is C x ah x aw; b becomes C x aw x ah
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < aw; ++h)
        for (int w = 0; w < ah; ++w)
          b[(static_cast<size_t>(c) * aw + h) * ah + w] =
              a[(static_cast<size_t>(c) * ah + w) * aw + (aw - 1 - h)];
  };
  std::vector<double> cur(src.begin(), src.end());
  int ch = H, cw = W;
  for (int i = 0; i < k; ++i) {
    std::vector<double> next(cur.size());
    turn(cur, ch, cw, next);
    cur.swap(next);
    std::swap(ch, cw);
  }
  return Tensor({C, ch, cw}, std::move(cur));
}

Tensor resize_bilinear(const Tensor& chw, int out_h, int out_w) {
  require_chw(chw, "resize_bilinear");
  if (out_h < 1 || out_w < 1) fail("resize_bilinear: output extents must be >= 1");
  const int C = chw.dim(0), H = chw.dim(1), W = chw.dim(2);
  const auto src = chw.values();
  std::vector<double> out(static_cast<size_t>(C) * out_h * out_w);
  // align-corners-off sampling with edge clamping
  const double sy = static_cast<double>(H) / out_h;
  const double sx = static_cast<double>(W) / out_w;
  for (int c = 0; c < C; ++c)
    for (int oh = 0; oh < out_h; ++oh) {
      double fy = (oh + 0.5) * sy - 0.5;
      if (fy < 0.0) fy = 0.0;
      if (fy > H - 1) fy = H - 1;
      const int y0 = static_cast<int>(fy);
      const int y1 = std::min(y0 + 1, H - 1);
      const double wy = fy - y0;
      for (int ow = 0; ow < out_w; ++ow) {
        double fx = (ow + 0.5) * sx - 0.5;
        if (fx < 0.0) fx = 0.0;
        if (fx > W - 1) fx = W - 1;
        const int x0 = static_cast<int>(fx);
        const int x1 = std::min(x0 + 1, W - 1);
        const double wx = fx - x0;
        auto at = [&](int y, int x) {
          return src[(static_cast<size_t>(c) * H + y) * W + x];
        };
        out[(static_cast<size_t>(c) * out_h + oh) * out_w + ow] =
            (1.0 - wy) * ((1.0 - wx) * at(y0, x0) + wx * at(y0, x1)) +
            wy * ((1.0 - wx) * at(y1, x0) + wx * at(y1, x1));
      }
    }
  return Tensor({C, out_h, out_w}, std::move(out));
}

Tensor center_fit(const Tensor& chw, int out_h, int out_w) {
  require_chw(chw, "center_fit");
  if (out_h < 1 || out_w < 1) fail("center_fit: output extents must be >= 1");
  const int C = chw.dim(0), H = chw.dim(1), W = chw.dim(2);
  const auto src = chw.values();
  std::vector<double> out(static_cast<size_t>(C) * out_h * out_w, 0.0);
  // source offset when cropping, destination offset when padding
  const int dy = (H - out_h) / 2;
  const int dx = (W - out_w) / 2;
  for (int c = 0; c < C; ++c)
    for (int oh = 0; oh < out_h; ++oh) {
      const int ih = oh + dy;
      if (ih < 0 || ih >= H) continue;
      for (int ow = 0; ow < out_w; ++ow) {
        const int iw = ow + dx;
        if (iw < 0 || iw >= W) continue;
        out[(static_cast<size_t>(c) * out_h + oh) * out_w + ow] =
            src[(static_cast<size_t>(c) * H + ih) * W + iw];
      }
    }
  return Tensor({C, out_h, out_w}, std::move(out));
}

Tensor augment(const Tensor& chw, const AugmentSpec& spec, std::uint64_t rng_seed) {
  require_chw(chw, "augment");
  for (double p : {spec.p_hflip, spec.p_vflip, spec.p_rotate90, spec.p_resize, spec.p_crop})
    if (!(p >= 0.0 && p <= 1.0)) fail("augment: probabilities must lie in [0,1]");
  const int H = chw.dim(1), W = chw.dim(2);
  Rng rng(rng_seed);
  Tensor img = chw;
  if (rng.coin(spec.p_hflip)) img = hflip(img);
  if (rng.coin(spec.p_vflip)) img = vflip(img);
  if (rng.coin(spec.p_rotate90)) {
    const int k = static_cast<int>(rng.below(4));
    if (H == W) img = rotate90(img, k);
  }
  if (rng.coin(spec.p_resize)) {
    const double scale = rng.uniform(0.9, 1.1);
    const int nh = std::max<int>(1, static_cast<int>(std::llround(H * scale)));
    const int nw = std::max<int>(1, static_cast<int>(std::llround(W * scale)));
    if (nh != H || nw != W) img = center_fit(resize_bilinear(img, nh, nw), H, W);
  }
  if (rng.coin(spec.p_crop)) {
    constexpr int kPad = 4;
    const int oy = static_cast<int>(rng.below(2 * kPad + 1));
    const int ox = static_cast<int>(rng.below(2 * kPad + 1));
    // zero-pad by kPad on every side, then take the H x W window at (oy, ox)
    const int C = img.dim(0);
    const auto src = img.values();
    std::vector<double> out(src.size(), 0.0);
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h) {
        const int ih = h + oy - kPad;
        if (ih < 0 || ih >= H) continue;
        for (int w = 0; w < W; ++w) {
          const int iw = w + ox - kPad;
          if (iw < 0 || iw >= W) continue;
          out[(static_cast<size_t>(c) * H + h) * W + w] =
              src[(static_cast<size_t>(c) * H + ih) * W + iw];
        }
      }
    img = Tensor({C, H, W}, std::move(out));
  }
  return img;
}

Batches::Batches(const Dataset& dataset, int batch_size, bool shuffle, std::uint64_t seed,
                 std::optional<AugmentSpec> augment_spec)
    : dataset_(&dataset), batch_size_(batch_size), seed_(seed), augment_(std::move(augment_spec)) {
  if (batch_size < 1) fail("batches: batch_size must be >= 1");
  order_.resize(dataset.size());
  for (std::int64_t i = 0; i < dataset.size(); ++i) order_[i] = i;
  if (shuffle) {
    Rng rng(derive_seed(seed_, kShuffleSalt));
    shuffle_indices(order_, rng);
  }
}

std::int64_t Batches::count() const {
  return (static_cast<std::int64_t>(order_.size()) + batch_size_ - 1) / batch_size_;
}

Batch Batches::get(std::int64_t i) const {
  if (i < 0 || i >= count()) fail("batches: batch index out of range");
  const std::int64_t begin = i * batch_size_;
  const std::int64_t end =
      std::min<std::int64_t>(begin + batch_size_, static_cast<std::int64_t>(order_.size()));
  const std::int64_t B = end - begin;

  const Tensor& first = dataset_->samples[order_[begin]].image;
  const int C = first.dim(0), H = first.dim(1), W = first.dim(2);
  const std::int64_t stride = static_cast<std::int64_t>(C) * H * W;
  std::vector<double> images(static_cast<size_t>(B) * stride);
  std::vector<double> labels(static_cast<size_t>(B));
  Batch batch;
  batch.indices.reserve(B);
  for (std::int64_t b = 0; b < B; ++b) {
    const std::int64_t di = order_[begin + b];
    const Sample& s = dataset_->samples[di];
    Tensor img = s.image;
    if (img.shape() != first.shape())
      fail("batches: sample '" + s.id + "' has shape " + shape_str(img.shape()) +
           ", expected " + shape_str(first.shape()));
    if (augment_) img = augment(img, *augment_, derive_seed(seed_, 0x100 + di));
    const auto v = img.values();
    std::copy(v.begin(), v.end(), images.begin() + b * stride);
    labels[b] = static_cast<double>(s.label);
    batch.indices.push_back(di);
  }
  batch.images = Tensor({static_cast<int>(B), C, H, W}, std::move(images));
  batch.labels = Tensor({static_cast<int>(B)}, std::move(labels));
  return batch;
}

}  // namespace dnet
