#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "eqssl/errors.hpp"

namespace eqssl {

/// Planar (channel-major) image with values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {
    if (h <= 0 || w <= 0 || c <= 0) throw ArgumentError("Image: dimensions must be positive");
  }

  std::size_t plane() const noexcept { return static_cast<std::size_t>(height) * width; }

  float& at(int c, int y, int x) noexcept { return pixels[c * plane() + static_cast<std::size_t>(y) * width + x]; }
  float at(int c, int y, int x) const noexcept {
    return pixels[c * plane() + static_cast<std::size_t>(y) * width + x];
  }

  bool same_shape(const Image& o) const noexcept {
    return height == o.height && width == o.width && channels == o.channels;
  }

  bool operator==(const Image&) const = default;
};

/// Bilinear sample at fractional (row, col) with the nearest border pixel
/// replicated outside the image.
inline float sample_bilinear(const Image& img, int c, double row, double col) noexcept {
  row = std::clamp(row, 0.0, static_cast<double>(img.height - 1));
  col = std::clamp(col, 0.0, static_cast<double>(img.width - 1));
  const int r0 = static_cast<int>(std::floor(row));
  const int c0 = static_cast<int>(std::floor(col));
  const int r1 = std::min(r0 + 1, img.height - 1);
  const int c1 = std::min(c0 + 1, img.width - 1);
  const double fr = row - r0;
  const double fc = col - c0;
  const double top = (1.0 - fc) * img.at(c, r0, c0) + fc * img.at(c, r0, c1);
  const double bottom = (1.0 - fc) * img.at(c, r1, c0) + fc * img.at(c, r1, c1);
  return static_cast<float>((1.0 - fr) * top + fr * bottom);
}

/// Resamples `img` so that output pixel centre p (math frame centred on the
/// image, y up) reads the input at `inv * p`.
template <typename InverseMap>
Image warp_about_center(const Image& img, InverseMap&& inv) {
  Image out(img.height, img.width, img.channels);
  const double cx = img.width / 2.0;
  const double cy = img.height / 2.0;
  for (int i = 0; i < img.height; ++i) {
    for (int j = 0; j < img.width; ++j) {
      const double px = j + 0.5 - cx;
      const double py = cy - (i + 0.5);
      const auto [qx, qy] = inv(px, py);
      const double col = qx + cx - 0.5;
      const double row = cy - qy - 0.5;
      for (int c = 0; c < img.channels; ++c) out.at(c, i, j) = sample_bilinear(img, c, row, col);
    }
  }
  return out;
}

inline Image hflip_image(const Image& img) {
  Image out(img.height, img.width, img.channels);
  for (int c = 0; c < img.channels; ++c)
    for (int i = 0; i < img.height; ++i)
      for (int j = 0; j < img.width; ++j) out.at(c, i, j) = img.at(c, i, img.width - 1 - j);
  return out;
}

/// Counterclockwise rotation (y-up frame) about the image centre.
inline Image rotate_image(const Image& img, double theta_rad) {
  const double c = std::cos(theta_rad);
  const double s = std::sin(theta_rad);
  return warp_about_center(img, [c, s](double x, double y) {
    return std::pair{c * x + s * y, -s * x + c * y};
  });
}

/// Centre crop of relative side `scale`, resized back to the full size.
inline Image center_crop_resize(const Image& img, double scale) {
  return warp_about_center(img, [scale](double x, double y) { return std::pair{scale * x, scale * y}; });
}

inline void clamp_unit(Image& img) noexcept {
  for (float& v : img.pixels) v = std::clamp(v, 0.0f, 1.0f);
}

inline double mean_abs_diff(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw ArgumentError("mean_abs_diff: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) acc += std::abs(double(a.pixels[i]) - b.pixels[i]);
  return a.pixels.empty() ? 0.0 : acc / static_cast<double>(a.pixels.size());
}

/// Bilinear resize, used when ingesting images of a different size.
inline Image resize_bilinear(const Image& img, int height, int width) {
  if (img.height == height && img.width == width) return img;
  Image out(height, width, img.channels);
  const double sy = static_cast<double>(img.height) / height;
  const double sx = static_cast<double>(img.width) / width;
  for (int c = 0; c < img.channels; ++c)
    for (int i = 0; i < height; ++i)
      for (int j = 0; j < width; ++j)
        out.at(c, i, j) = sample_bilinear(img, c, (i + 0.5) * sy - 0.5, (j + 0.5) * sx - 0.5);
  return out;
}

}  // namespace eqssl
