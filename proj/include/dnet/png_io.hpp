#pragma once

#include <string>
#include <vector>

namespace dnet {

// Interleaved 8-bit RGB raster, row-major, 3 bytes per pixel.
struct ImageU8 {
  int height = 0;
  int width = 0;
  std::vector<unsigned char> rgb;
};

// Decodes a PNG, normalizing palette/gray/alpha/16-bit variants down to
// 8-bit RGB. Throws std::runtime_error on missing or malformed files.
ImageU8 read_png_rgb8(const std::string& path);

void write_png_rgb8(const std::string& path, const ImageU8& image);

}  // namespace dnet
