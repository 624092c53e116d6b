#pragma once

// Transformation catalog: sampling, image-space application and the
// geometric (label-changing) part handed to the feature transform layer.

#include <cmath>
#include <cstdint>
#include <numbers>

#include "eqssl/affine.hpp"
#include "eqssl/errors.hpp"
#include "eqssl/image.hpp"
#include "eqssl/rng.hpp"

namespace eqssl {

struct CatalogConfig {
  double brightness_p = 0.8;
  double brightness_max = 0.2;
  double contrast_p = 0.8;
  double contrast_min = 0.7;
  double contrast_max = 1.3;
  double noise_p = 0.5;
  double noise_sigma_max = 0.05;
  double grayscale_p = 0.2;
  double crop_p = 0.0;
  double crop_min = 0.6;
  double crop_max = 1.0;
  double hflip_p = 0.1;
  double rotation_p = 1.0;
  double rotation_max_rad = 30.0 * std::numbers::pi / 180.0;

  /// Catalog whose every probability is zero: sampling yields the no-op spec.
  static CatalogConfig none() {
    CatalogConfig c;
    c.brightness_p = c.contrast_p = c.noise_p = c.grayscale_p = 0.0;
    c.crop_p = c.hflip_p = c.rotation_p = 0.0;
    return c;
  }

  void validate() const {
    for (double p : {brightness_p, contrast_p, noise_p, grayscale_p, crop_p, hflip_p, rotation_p})
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("catalog: probabilities must lie in [0, 1]");
    if (!(brightness_max >= 0.0)) throw ConfigError("catalog: brightness_max must be >= 0");
    if (!(contrast_min > 0.0 && contrast_min <= contrast_max))
      throw ConfigError("catalog: need 0 < contrast_min <= contrast_max");
    if (!(noise_sigma_max >= 0.0)) throw ConfigError("catalog: noise_sigma_max must be >= 0");
    if (!(crop_min > 0.0 && crop_min <= crop_max && crop_max <= 1.0))
      throw ConfigError("catalog: need 0 < crop_min <= crop_max <= 1");
    if (!(rotation_max_rad >= 0.0 && rotation_max_rad <= std::numbers::pi))
      throw ConfigError("catalog: rotation_max must lie in [0, pi]");
  }
};

/// One sampled element of the catalog. The default value is the identity.
struct TransformSpec {
  double brightness_delta = 0.0;
  double contrast_factor = 1.0;
  double noise_sigma = 0.0;
  bool grayscale = false;
  double crop_scale = 1.0;
  bool hflip = false;
  double rotation_rad = 0.0;
  std::uint64_t rng_seed = 0;

  bool operator==(const TransformSpec&) const = default;
};

/// Draws every field independently. The number of generator draws is
/// fixed regardless of the configured probabilities, so two catalogs that
/// differ only in probabilities consume the stream identically.
inline TransformSpec sample_transform(const CatalogConfig& cfg, Rng& rng) {
  cfg.validate();
  TransformSpec t;
  auto gated = [&rng](double p, double value, double fallback) {
    const bool on = rng.bernoulli(p);
    return on ? value : fallback;
  };
  {
    const double v = rng.uniform(-cfg.brightness_max, cfg.brightness_max);
    t.brightness_delta = gated(cfg.brightness_p, v, 0.0);
  }
  {
    const double v = rng.uniform(cfg.contrast_min, cfg.contrast_max);
    t.contrast_factor = gated(cfg.contrast_p, v, 1.0);
  }
  {
    const double v = rng.uniform(0.0, cfg.noise_sigma_max);
    t.noise_sigma = gated(cfg.noise_p, v, 0.0);
  }
  t.grayscale = rng.bernoulli(cfg.grayscale_p);
  {
    const double v = rng.uniform(cfg.crop_min, cfg.crop_max);
    t.crop_scale = gated(cfg.crop_p, v, 1.0);
  }
  t.hflip = rng.bernoulli(cfg.hflip_p);
  {
    const double v = rng.uniform(-cfg.rotation_max_rad, cfg.rotation_max_rad);
    t.rotation_rad = gated(cfg.rotation_p, v, 0.0);
  }
  t.rng_seed = rng.next_u64();
  return t;
}

/// crop-and-resize -> horizontal flip -> rotation -> contrast -> brightness
/// -> noise -> grayscale -> clamp. Output has the input's dimensions.
inline Image apply_to_image(const TransformSpec& spec, const Image& img) {
  Image out = img;
  if (spec.crop_scale != 1.0) out = center_crop_resize(out, spec.crop_scale);
  if (spec.hflip) out = hflip_image(out);
  if (spec.rotation_rad != 0.0) out = rotate_image(out, spec.rotation_rad);

  if (spec.contrast_factor != 1.0) {
    double mean = 0.0;
    for (float v : out.pixels) mean += v;
    mean /= static_cast<double>(out.pixels.size());
    for (float& v : out.pixels) v = static_cast<float>((v - mean) * spec.contrast_factor + mean);
  }
  if (spec.brightness_delta != 0.0)
    for (float& v : out.pixels) v = static_cast<float>(v + spec.brightness_delta);
  if (spec.noise_sigma > 0.0) {
    Rng noise(spec.rng_seed);
    for (float& v : out.pixels) v = static_cast<float>(v + spec.noise_sigma * noise.normal());
  }
  if (spec.grayscale && out.channels == 3) {
    const std::size_t n = out.plane();
    for (std::size_t i = 0; i < n; ++i) {
      const float y = 0.299f * out.pixels[i] + 0.587f * out.pixels[n + i] + 0.114f * out.pixels[2 * n + i];
      out.pixels[i] = out.pixels[n + i] = out.pixels[2 * n + i] = y;
    }
  }
  clamp_unit(out);
  return out;
}

/// R(rotation) * F^hflip, matching the image-space order (flip, then rotate).
/// Crop scale and appearance never enter.
inline AffineTransform2D geometric_part(const TransformSpec& spec) {
  const AffineTransform2D flip = spec.hflip ? hflip_matrix() : identity_transform();
  if (spec.rotation_rad == 0.0) return flip;
  const AffineTransform2D rot = rotation_matrix(spec.rotation_rad);
  if (!spec.hflip) return rot;
  return compose(rot, flip);
}

/// A spec carrying only the geometric fields, for evaluation-time transforms.
inline TransformSpec geometric_spec(bool hflip, double rotation_rad) {
  TransformSpec t;
  t.hflip = hflip;
  t.rotation_rad = rotation_rad;
  return t;
}

}  // namespace eqssl
