#pragma once

// Attribution map -> normalized map -> 8-bit image, plus overlays on the
// explained input.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "sarxai/attribution.hpp"
#include "sarxai/colormap_tables.hpp"
#include "sarxai/error.hpp"
#include "sarxai/image_io.hpp"
#include "sarxai/tensor.hpp"

namespace sarxai {

struct RenderConfig {
  enum class Mode { Grayscale, Diverging, Sequential };
  // Symmetric keeps the sign (0 -> 0, scale by the clipped magnitude);
  // AbsoluteValue maps |map| onto [0, 1].
  enum class SignedHandling { Symmetric, AbsoluteValue };

  Mode mode = Mode::Sequential;
  double clip_low = 1.0;    // percentile, [0, 100]
  double clip_high = 99.0;  // percentile, [0, 100]
  double overlay_alpha = 0.5;
  SignedHandling signed_handling = SignedHandling::Symmetric;

  void validate() const {
    if (!(clip_low >= 0.0 && clip_high <= 100.0 && clip_low < clip_high)) {
      throw ConfigError("render: clip percentiles must satisfy 0 <= low < high <= 100");
    }
  }
};

inline const char* render_mode_name(RenderConfig::Mode m) {
  switch (m) {
    case RenderConfig::Mode::Grayscale: return "grayscale";
    case RenderConfig::Mode::Diverging: return "diverging";
    case RenderConfig::Mode::Sequential: return "sequential";
  }
  return "?";
}

// Linear interpolation between order statistics at rank p/100 * (n - 1).
inline double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw ConfigError("percentile of an empty set");
  const double pos = std::clamp(p, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const double frac = pos - static_cast<double>(lo);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
  const double v_lo = values[lo];
  if (frac == 0.0 || lo + 1 >= values.size()) return v_lo;
  const double v_hi =
      *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo + 1), values.end());
  return v_lo + frac * (v_hi - v_lo);
}

// Channel-summed [H, W] view of a [C, H, W] map.
inline Tensor collapse_channels(const Tensor& scores) {
  require_rank(scores, 3, "collapse_channels");
  const std::size_t c = scores.dim(0), h = scores.dim(1), w = scores.dim(2);
  if (c == 1) return scores.reshaped({h, w});
  Tensor out({h, w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < h * w; ++i) out[i] += scores[ch * h * w + i];
  }
  return out;
}

// Values in [-1, 1] (Symmetric) or [0, 1] (AbsoluteValue), same shape as
// the input. Constant maps normalize to all zeros.
inline Tensor normalize_map(const Tensor& map, const RenderConfig& cfg) {
  cfg.validate();
  if (!map.all_finite()) throw ConfigError("normalize_map: map contains non-finite values");
  Tensor out(map.shape());
  const auto [mn, mx] = std::minmax_element(map.data().begin(), map.data().end());
  if (*mn == *mx) return out;

  std::vector<double> mags(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) mags[i] = std::fabs(static_cast<double>(map[i]));

  if (cfg.signed_handling == RenderConfig::SignedHandling::Symmetric) {
    const double scale = percentile(mags, cfg.clip_high);
    if (scale <= 0.0) return out;
    for (std::size_t i = 0; i < map.size(); ++i) {
      out[i] = static_cast<float>(std::clamp(static_cast<double>(map[i]) / scale, -1.0, 1.0));
    }
    return out;
  }
  const double lo = percentile(mags, cfg.clip_low);
  const double hi = percentile(mags, cfg.clip_high);
  if (hi <= lo) return out;
  for (std::size_t i = 0; i < map.size(); ++i) {
    out[i] = static_cast<float>(std::clamp((mags[i] - lo) / (hi - lo), 0.0, 1.0));
  }
  return out;
}

inline Tensor normalize_map(const AttributionMap& att, const RenderConfig& cfg) {
  return normalize_map(collapse_channels(att.scores), cfg);
}

// Lookup-table index for v in [0, 1]: floor(255 * v).
inline std::size_t lut_index(double v) {
  const double x = std::floor(255.0 * std::clamp(v, 0.0, 1.0));
  return static_cast<std::size_t>(x);
}

inline std::array<std::uint8_t, 3> sequential_color(double v) {
  return colormap_data::kSequentialV1[lut_index(v)];
}

// v in [-1, 1]
inline std::array<std::uint8_t, 3> diverging_color(double v) {
  return colormap_data::kDivergingV1[lut_index((std::clamp(v, -1.0, 1.0) + 1.0) / 2.0)];
}

// Renders an already-normalized [H, W] map.
inline ImageBuffer render_normalized(const Tensor& normalized, RenderConfig::Mode mode) {
  require_rank(normalized, 2, "render_normalized");
  const std::size_t h = normalized.dim(0), w = normalized.dim(1);
  if (mode == RenderConfig::Mode::Grayscale) {
    ImageBuffer img(w, h, 1);
    for (std::size_t i = 0; i < h * w; ++i) {
      const double v = std::min(1.0, std::fabs(static_cast<double>(normalized[i])));
      img.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * v));
    }
    return img;
  }
  ImageBuffer img(w, h, 3);
  for (std::size_t i = 0; i < h * w; ++i) {
    const double v = normalized[i];
    const auto rgb = mode == RenderConfig::Mode::Sequential ? sequential_color(std::fabs(v))
                                                            : diverging_color(v);
    for (std::size_t c = 0; c < 3; ++c) img.pixels[i * 3 + c] = rgb[c];
  }
  return img;
}

inline ImageBuffer render(const AttributionMap& att, const RenderConfig& cfg) {
  return render_normalized(normalize_map(att, cfg), cfg.mode);
}

inline ImageBuffer to_rgb(const ImageBuffer& img) {
  if (img.channels == 3) return img;
  ImageBuffer out(img.width, img.height, 3);
  for (std::size_t i = 0; i < img.width * img.height; ++i) {
    for (std::size_t c = 0; c < 3; ++c) out.pixels[i * 3 + c] = img.pixels[i];
  }
  return out;
}

// First channel of a [C, H, W] image in [0, 1] as 8-bit gray.
inline ImageBuffer image_to_gray(const Tensor& image) {
  require_rank(image, 3, "image_to_gray");
  const std::size_t h = image.dim(1), w = image.dim(2);
  ImageBuffer img(w, h, 1);
  for (std::size_t i = 0; i < h * w; ++i) {
    const double v = std::clamp(static_cast<double>(image[i]), 0.0, 1.0);
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * v));
  }
  return img;
}

// Alpha-blends the rendered heatmap over the grayscale input; RGB output.
inline ImageBuffer overlay(const Tensor& input_image, const AttributionMap& att,
                           const RenderConfig& cfg) {
  if (!(cfg.overlay_alpha >= 0.0 && cfg.overlay_alpha <= 1.0)) {
    throw ConfigError("overlay: alpha must lie in [0, 1]");
  }
  const ImageBuffer base = to_rgb(image_to_gray(input_image));
  const ImageBuffer heat = to_rgb(render(att, cfg));
  if (base.width != heat.width || base.height != heat.height) {
    throw ShapeError("overlay: image and attribution sizes differ");
  }
  ImageBuffer out(base.width, base.height, 3);
  const double a = cfg.overlay_alpha;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    const double v = (1.0 - a) * base.pixels[i] + a * heat.pixels[i];
    out.pixels[i] = static_cast<std::uint8_t>(std::lround(v));
  }
  return out;
}

}  // namespace sarxai
