#pragma once

#include <png.h>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "eqssl/errors.hpp"
#include "eqssl/image.hpp"

namespace eqssl {

namespace detail {
struct PngImageGuard {
  png_image* img;
  ~PngImageGuard() { png_image_free(img); }
};
}  // namespace detail

/// Decodes any 8/16-bit PNG into `channels` (1 = luminance, 3 = RGB) planes in [0, 1].
inline Image read_png(const std::string& path, int channels = 1) {
  if (channels != 1 && channels != 3) throw ArgumentError("read_png: channels must be 1 or 3");
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  detail::PngImageGuard guard{&png};
  if (!png_image_begin_read_from_file(&png, path.c_str()))
    throw IoError("read_png: " + path + ": " + png.message);
  png.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buf.data(), 0, nullptr))
    throw IoError("read_png: " + path + ": " + png.message);

  Image out(static_cast<int>(png.height), static_cast<int>(png.width), channels);
  const std::size_t n = out.plane();
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < channels; ++c) out.pixels[c * n + i] = buf[i * channels + c] / 255.0f;
  return out;
}

/// Writes an 8-bit grayscale or RGB PNG. Values are clamped and rounded.
inline void write_png(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw ArgumentError("write_png: channels must be 1 or 3");
  const std::size_t n = img.plane();
  std::vector<std::uint8_t> buf(n * img.channels);
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < img.channels; ++c) {
      const float v = std::clamp(img.pixels[c * n + i], 0.0f, 1.0f);
      buf[i * img.channels + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  detail::PngImageGuard guard{&png};
  if (!png_image_write_to_file(&png, path.c_str(), 0, buf.data(), 0, nullptr))
    throw IoError("write_png: " + path + ": " + png.message);
}

}  // namespace eqssl
