#pragma once

// JSON conversions for configuration structs (config echo, checkpoints).

#include <json.hpp>

#include <numbers>

#include "eqssl/augment.hpp"
#include "eqssl/clustering.hpp"
#include "eqssl/data.hpp"
#include "eqssl/encoder.hpp"

namespace eqssl {

inline void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"input_h", c.input_h},           {"input_w", c.input_w},         {"input_c", c.input_c},
       {"conv_channels", c.conv_channels}, {"proj_hidden", c.proj_hidden}, {"embed_dim", c.embed_dim},
       {"activation", to_string(c.activation)}, {"normalize_output", c.normalize_output}};
}

inline void from_json(const nlohmann::json& j, EncoderConfig& c) {
  c.input_h = j.value("input_h", c.input_h);
  c.input_w = j.value("input_w", c.input_w);
  c.input_c = j.value("input_c", c.input_c);
  c.conv_channels = j.value("conv_channels", c.conv_channels);
  c.proj_hidden = j.value("proj_hidden", c.proj_hidden);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.activation = parse_activation(j.value("activation", std::string(to_string(c.activation))));
  c.normalize_output = j.value("normalize_output", c.normalize_output);
}

inline void to_json(nlohmann::json& j, const ClusterConfig& c) {
  j = {{"prototypes", c.prototypes},         {"temperature", c.temperature},
       {"sinkhorn_eps", c.sinkhorn_eps},     {"sinkhorn_iters", c.sinkhorn_iters},
       {"sinkhorn_targets", c.sinkhorn_targets}, {"normalize_prototypes", c.normalize_prototypes}};
}

inline void from_json(const nlohmann::json& j, ClusterConfig& c) {
  c.prototypes = j.value("prototypes", c.prototypes);
  c.temperature = j.value("temperature", c.temperature);
  c.sinkhorn_eps = j.value("sinkhorn_eps", c.sinkhorn_eps);
  c.sinkhorn_iters = j.value("sinkhorn_iters", c.sinkhorn_iters);
  c.sinkhorn_targets = j.value("sinkhorn_targets", c.sinkhorn_targets);
  c.normalize_prototypes = j.value("normalize_prototypes", c.normalize_prototypes);
}

#define EQSSL_CATALOG_FIELDS(X)                                                                           \
  X(brightness_p) X(brightness_max) X(contrast_p) X(contrast_min) X(contrast_max) X(noise_p)             \
  X(noise_sigma_max) X(grayscale_p) X(crop_p) X(crop_min) X(crop_max) X(hflip_p) X(rotation_p)          \
  X(rotation_max_rad)

inline void to_json(nlohmann::json& j, const CatalogConfig& c) {
  j = nlohmann::json::object();
#define X(f) j[#f] = c.f;
  EQSSL_CATALOG_FIELDS(X)
#undef X
}

inline void from_json(const nlohmann::json& j, CatalogConfig& c) {
#define X(f) c.f = j.value(#f, c.f);
  EQSSL_CATALOG_FIELDS(X)
#undef X
}

inline void to_json(nlohmann::json& j, const RenderConfig& c) {
  j = {{"size", c.size},           {"pupil_travel", c.pupil_travel}, {"eye_radius", c.eye_radius},
       {"pupil_radius", c.pupil_radius}, {"noise_sigma", c.noise_sigma}, {"max_yaw", c.max_yaw},
       {"max_pitch", c.max_pitch}};
}

inline void from_json(const nlohmann::json& j, RenderConfig& c) {
  c.size = j.value("size", c.size);
  c.pupil_travel = j.value("pupil_travel", c.pupil_travel);
  c.eye_radius = j.value("eye_radius", c.eye_radius);
  c.pupil_radius = j.value("pupil_radius", c.pupil_radius);
  c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
  c.max_yaw = j.value("max_yaw", c.max_yaw);
  c.max_pitch = j.value("max_pitch", c.max_pitch);
}

}  // namespace eqssl
