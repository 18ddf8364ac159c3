#pragma once

#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include <png.h>

#include <atrl/image.hpp>
#include <atrl/tensor.hpp>

namespace atrl {

// Decoded 8-bit RGB pixels, before conversion to [0,1] doubles.
struct RawImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> rgb;  // H×W×3
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FileHandle = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

// Reads any PNG as 8-bit RGB: palette and gray expanded, 16-bit depth and
// alpha stripped.
inline RawImage read_png_u8(const std::string& path) {
  detail::FileHandle fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw Error("cannot open image file: " + path);
  std::uint8_t sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw Error("not a png file: " + path);

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("png reader allocation failed: " + path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error("png reader allocation failed: " + path);
  }

  RawImage out;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("corrupt png file: " + path);
  }

  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_16(png);
  png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  out.height = png_get_image_height(png, info);
  out.width = png_get_image_width(png, info);
  if (out.height == 0 || out.width == 0 ||
      png_get_rowbytes(png, info) != out.width * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("unsupported png layout: " + path);
  }
  out.rgb.resize(out.height * out.width * 3);
  rows.resize(out.height);
  for (std::size_t y = 0; y < out.height; ++y)
    rows[y] = out.rgb.data() + y * out.width * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

inline Image to_image(const RawImage& raw) {
  Image img(raw.height, raw.width, 3);
  for (std::size_t i = 0; i < raw.rgb.size(); ++i)
    img.data[i] = static_cast<double>(raw.rgb[i]) / 255.0;
  return img;
}

inline Image read_png(const std::string& path) {
  return to_image(read_png_u8(path));
}

// Writes 8-bit RGB; values are clamped to [0,1] and rounded to the nearest
// level. Single-channel input is replicated across RGB.
inline void write_png(const std::string& path, const Image& img) {
  if (img.empty()) throw Error("write_png: empty image: " + path);
  if (img.channels != 3 && img.channels != 1)
    throw Error("write_png: expected 1 or 3 channels, got " +
                std::to_string(img.channels) + ": " + path);

  std::vector<std::uint8_t> bytes(img.height * img.width * 3);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double v =
            img.at(y, x, img.channels == 3 ? c : 0);
        const double clamped = std::clamp(v, 0.0, 1.0);
        bytes[(y * img.width + x) * 3 + c] =
            static_cast<std::uint8_t>(std::llround(clamped * 255.0));
      }

  detail::FileHandle fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw Error("cannot create image file: " + path);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("png writer allocation failed: " + path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("png writer allocation failed: " + path);
  }
  std::vector<png_bytep> rows(img.height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("failed to encode png: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < img.height; ++y)
    rows[y] = bytes.data() + y * img.width * 3;
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace atrl
