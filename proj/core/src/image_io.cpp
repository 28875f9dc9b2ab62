#include "ildm/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>

#include "ildm/container.hpp"
#include "ildm/error.hpp"

namespace ildm::io {

Rgb8 to_rgb8(const Tensor& chw) {
  if (chw.rank() != 3 || chw.dim(0) != 3) throw ContractError("to_rgb8 expects [3,H,W], got " + shape_string(chw.shape()), "image");
  Rgb8 img;
  img.height = chw.dim(1);
  img.width = chw.dim(2);
  const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
  img.pixels.resize(plane * 3);
  for (std::size_t p = 0; p < plane; ++p) {
    for (int c = 0; c < 3; ++c) {
      const float v = std::clamp(chw[c * plane + p], -1.0f, 1.0f);
      img.pixels[p * 3 + c] = static_cast<std::uint8_t>(std::lround((v + 1.0f) * 127.5f));
    }
  }
  return img;
}

Rgb8 upscale(const Rgb8& img, int factor) {
  Rgb8 out;
  out.width = img.width * factor;
  out.height = img.height * factor;
  out.pixels.resize(static_cast<std::size_t>(out.width) * out.height * 3);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      const std::size_t s = (static_cast<std::size_t>(y / factor) * img.width + x / factor) * 3;
      const std::size_t d = (static_cast<std::size_t>(y) * out.width + x) * 3;
      std::copy_n(img.pixels.begin() + static_cast<std::ptrdiff_t>(s), 3, out.pixels.begin() + static_cast<std::ptrdiff_t>(d));
    }
  }
  return out;
}

void blit(Rgb8& dst, const Rgb8& src, int x0, int y0) {
  if (x0 < 0 || y0 < 0 || x0 + src.width > dst.width || y0 + src.height > dst.height) {
    throw ContractError("blit outside destination", "image");
  }
  for (int y = 0; y < src.height; ++y) {
    std::copy_n(src.pixels.begin() + static_cast<std::ptrdiff_t>(y) * src.width * 3, src.width * 3,
                dst.pixels.begin() + (static_cast<std::ptrdiff_t>(y0 + y) * dst.width + x0) * 3);
  }
}

namespace {

void on_write(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

void on_flush(png_structp) {}

}  // namespace

std::vector<std::uint8_t> encode_png(const Rgb8& img) {
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_write_struct failed", "png");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng encode failed", "png");
  }
  png_set_write_fn(png, &out, on_write, on_flush);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(img.pixels.data() + static_cast<std::size_t>(y) * img.width * 3));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

void write_png(const std::filesystem::path& path, const Rgb8& img) { write_file_atomic(path, encode_png(img)); }

}  // namespace ildm::io
