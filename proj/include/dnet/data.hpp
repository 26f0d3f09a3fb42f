#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dnet/tensor.hpp"

namespace dnet {

struct Sample {
  std::string id;
  Tensor image;  // 3 x H x W, values in [0,1]
  int label = 0;
};

struct Dataset {
  std::vector<Sample> samples;
  std::string manifest_path;
  std::int64_t negatives = 0;
  std::int64_t positives = 0;

  std::int64_t size() const { return static_cast<std::int64_t>(samples.size()); }
  bool empty() const { return samples.empty(); }
  void recount();
};

// Per-transform trigger probabilities. Transforms apply in the order below;
// every probability must be in [0,1].
struct AugmentSpec {
  double p_hflip = 0.0;
  double p_vflip = 0.0;
  double p_rotate90 = 0.0;  // picks k in {0,1,2,3} uniformly when triggered
  double p_resize = 0.0;    // scale jitter in [0.9, 1.1], recentered to original size
  double p_crop = 0.0;      // zero-pad by 4, random crop back to original

  static AugmentSpec none() { return {}; }
  static AugmentSpec defaults() { return {0.5, 0.5, 0.5, 0.5, 0.5}; }
};

struct ImageU8;  // png_io.hpp

// Interleaved 8-bit RGB -> planar 3 x H x W doubles scaled by 1/255.
Tensor image_to_tensor(const ImageU8& image);

// Reads a CSV manifest (header exactly `id,label`, LF or CRLF) and one
// `<image_dir>/<id>.png` per row. Bad rows are rejected with their line
// number; pixels are scaled by 1/255 into planar CHW order.
Dataset load_dataset(const std::string& image_dir, const std::string& labels_csv);

// Seeded uniform shuffle, then a prefix/suffix cut at round(fraction * n).
std::pair<Dataset, Dataset> split(const Dataset& dataset, double train_fraction,
                                  std::uint64_t seed);

// Individual transforms (exposed for direct testing). All are exact pixel
// permutations except resize.
Tensor hflip(const Tensor& chw);
Tensor vflip(const Tensor& chw);
// Counter-clockwise 90-degree quarter turns: out(h,w) = in(w, H-1-h) for
// k = 1. Odd k requires a square image.
Tensor rotate90(const Tensor& chw, int k);
Tensor resize_bilinear(const Tensor& chw, int out_h, int out_w);
// Pads with zeros or crops around the center to reach the requested size.
Tensor center_fit(const Tensor& chw, int out_h, int out_w);

// Applies the spec's transforms with draws from a generator seeded by
// rng_seed. Output shape equals input shape; values stay in [0,1]. On
// non-square images the rotation step is skipped (quarter turns would
// change the shape).
Tensor augment(const Tensor& chw, const AugmentSpec& spec, std::uint64_t rng_seed);

struct Batch {
  Tensor images;  // B x 3 x H x W
  Tensor labels;  // B (0.0 or 1.0)
  std::vector<std::int64_t> indices;  // dataset positions, batch order
};

// Deterministic batch plan over one epoch: an optional seeded permutation,
// final partial batch kept, optional per-sample augmentation with seeds
// derived from (seed, dataset index). Batches materialize lazily via get().
class Batches {
 public:
  Batches(const Dataset& dataset, int batch_size, bool shuffle, std::uint64_t seed,
          std::optional<AugmentSpec> augment_spec);

  std::int64_t count() const;
  Batch get(std::int64_t i) const;

 private:
  const Dataset* dataset_;
  int batch_size_;
  std::uint64_t seed_;
  std::optional<AugmentSpec> augment_;
  std::vector<std::int64_t> order_;
};

}  // namespace dnet
