#include "mh2f/image_io.hpp"

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <vector>

#include "mh2f/errors.hpp"

namespace mh2f {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

TensorF read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw io_error("cannot open image for reading: " + path);

  png_byte header[8];
  if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8))
    throw io_error("not a PNG file: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw io_error("png_create_read_struct failed: " + path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw io_error("png_create_info_struct failed: " + path);
  }
  std::vector<png_bytep> row_ptrs;
  std::vector<png_byte> pixels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw io_error("failed to decode PNG: " + path);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_uint_32 width = png_get_image_width(png, info);
  const png_uint_32 height = png_get_image_height(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const std::size_t rowbytes = png_get_rowbytes(png, info);
  pixels.resize(rowbytes * height);
  row_ptrs.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) row_ptrs[y] = pixels.data() + y * rowbytes;
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  TensorF img({1, 3, static_cast<int>(height), static_cast<int>(width)});
  for (int c = 0; c < 3; ++c) {
    float* plane = img.plane(0, c);
    for (png_uint_32 y = 0; y < height; ++y) {
      const png_byte* row = pixels.data() + y * rowbytes;
      for (png_uint_32 x = 0; x < width; ++x)
        plane[y * width + x] = static_cast<float>(row[x * 3 + c]) / 255.0f;
    }
  }
  return img;
}

void write_png(const TensorF& img, const std::string& path) {
  if (img.shape.n != 1 || img.shape.c != 3)
    throw precondition_error("write_png: expected a (1,3,H,W) tensor, got " +
                             img.shape.str());
  const int height = img.shape.h, width = img.shape.w;

  std::vector<png_byte> pixels(static_cast<std::size_t>(height) * width * 3);
  for (int c = 0; c < 3; ++c) {
    const float* plane = img.plane(0, c);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const float v = std::fmin(1.0f, std::fmax(0.0f, plane[y * width + x]));
        pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c] =
            static_cast<png_byte>(std::lround(v * 255.0f));
      }
  }

  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw io_error("cannot open image for writing: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw io_error("png_create_write_struct failed: " + path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw io_error("png_create_info_struct failed: " + path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw io_error("failed to encode PNG: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> row_ptrs(height);
  for (int y = 0; y < height; ++y)
    row_ptrs[y] = pixels.data() + static_cast<std::size_t>(y) * width * 3;
  png_write_image(png, row_ptrs.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

TensorF reflect_pad_to(const TensorF& img, int th, int tw) {
  const int h = img.shape.h, w = img.shape.w;
  if (th < h || tw < w) throw precondition_error("reflect_pad_to: target smaller than image");
  if (th - h >= h || tw - w >= w)
    throw precondition_error("reflect_pad_to: padding exceeds image size");
  TensorF out({img.shape.n, img.shape.c, th, tw});
  for (int n = 0; n < img.shape.n; ++n)
    for (int c = 0; c < img.shape.c; ++c) {
      const float* src = img.plane(n, c);
      float* dst = out.plane(n, c);
      for (int y = 0; y < th; ++y) {
        const int sy = y < h ? y : 2 * h - 2 - y;
        for (int x = 0; x < tw; ++x) {
          const int sx = x < w ? x : 2 * w - 2 - x;
          dst[y * tw + x] = src[sy * w + sx];
        }
      }
    }
  return out;
}

TensorF crop_to(const TensorF& img, int th, int tw) {
  if (th > img.shape.h || tw > img.shape.w)
    throw precondition_error("crop_to: target larger than image");
  TensorF out({img.shape.n, img.shape.c, th, tw});
  for (int n = 0; n < img.shape.n; ++n)
    for (int c = 0; c < img.shape.c; ++c) {
      const float* src = img.plane(n, c);
      float* dst = out.plane(n, c);
      for (int y = 0; y < th; ++y)
        for (int x = 0; x < tw; ++x) dst[y * tw + x] = src[y * img.shape.w + x];
    }
  return out;
}

}  // namespace mh2f
