#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ildm/tensor.hpp"

namespace ildm::io {

/// 8-bit RGB raster, row-major interleaved.
struct Rgb8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
};

/// [3,H,W] in [-1,1] -> 8-bit (values outside the range are clipped).
Rgb8 to_rgb8(const Tensor& chw);
/// Nearest-neighbour integer upscaling.
Rgb8 upscale(const Rgb8& img, int factor);
/// Copies `src` into `dst` with its top-left corner at (x, y).
void blit(Rgb8& dst, const Rgb8& src, int x, int y);

std::vector<std::uint8_t> encode_png(const Rgb8& img);
void write_png(const std::filesystem::path& path, const Rgb8& img);

}  // namespace ildm::io
