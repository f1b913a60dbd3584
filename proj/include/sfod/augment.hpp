#pragma once

#include <array>

#include "sfod/rng.hpp"
#include "sfod/synth.hpp"

namespace sfod {

struct StrongAugParams {
  float brightness = 0.4f;  // factor drawn from [1 - b, 1 + b]
  float contrast = 0.4f;
  float saturation = 0.4f;
  float jitter_prob = 0.8f;
  float grayscale_prob = 0.2f;
  float blur_prob = 0.5f;
  float blur_sigma_min = 0.1f;
  float blur_sigma_max = 2.0f;
  float cutout_prob = 0.7f;
  int cutout_min_count = 1;
  int cutout_max_count = 3;
  float cutout_min_frac = 0.05f;  // patch side as a fraction of the image side
  float cutout_max_frac = 0.20f;
  float cutout_fill = 0.5f;

  void validate() const;
  /// All application probabilities zero.
  static StrongAugParams none();
};

/// Horizontal mirror of image and boxes: (x1,y1,x2,y2) -> (W-x2, y1, W-x1, y2).
Scene flip_horizontal(const Scene& scene);

/// Mirrors with probability 1/2.
Scene weak_augment(const Scene& scene, Rng& rng, bool* flipped = nullptr);

/// Photometric jitter, grayscale, blur and cutout; boxes untouched.
Scene strong_augment(const Scene& scene, const StrongAugParams& params, Rng& rng);

// Individual photometric primitives, exposed for tests and reuse.
void to_grayscale(Image& image);
struct PixelRect {
  int x = 0, y = 0, width = 0, height = 0;
};
void apply_cutout(Image& image, const PixelRect& rect, float fill);

/// 2x2 mosaic (top-left, top-right, bottom-left, bottom-right) resized to
/// out_size; boxes scaled into their quadrant, those under 2px dropped.
Scene mosaic(const std::array<const Scene*, 4>& scenes, int out_size);

/// Area-averaging / bilinear resize to `out_h` x `out_w`.
Image resize(const Image& image, int out_h, int out_w);

}  // namespace sfod
