#pragma once

#include <array>
#include <string>
#include <vector>

#include "sfod/boxes.hpp"
#include "sfod/rng.hpp"
#include "sfod/tensor.hpp"

namespace sfod {

/// H x W x 3 float image, row-major HWC, values in [0,1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, float fill = 0.0f)
      : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, fill) {}

  float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

  bool operator==(const Image&) const = default;
};

struct Scene {
  std::string id;
  Image image;
  std::vector<Annotation> annotations;

  bool operator==(const Scene&) const = default;
};

enum class ShapeKind { Disc = 0, Square = 1, Triangle = 2 };
inline constexpr int kNumShapeClasses = 3;

enum class ShiftKind { None, Fog, Color, Scale };

const char* shift_kind_name(ShiftKind kind);
ShiftKind shift_kind_from_name(const std::string& name);

using Rgb = std::array<float, 3>;

struct DomainSpec {
  int image_size = 96;
  float noise_scale = 0.15f;   // amplitude of the smooth background texture
  float base_color_min = 0.2f; // background base colour range per channel
  float base_color_max = 0.8f;
  int min_objects = 2;
  int max_objects = 8;
  float min_size = 14.0f;      // object extent in pixels
  float max_size = 36.0f;
  ShiftKind shift = ShiftKind::None;
  float fog_strength = 0.0f;
  float fog_blur = 1.5f;       // blur sigma at full fog strength
  float sensor_noise = 0.0f;   // std of per-pixel Gaussian noise added after the shift
  Rgb haze_color{0.85f, 0.85f, 0.85f};
  Rgb color_cast{1.0f, 1.0f, 1.0f};
  float scale_factor = 1.0f;

  void validate() const;
};

/// Renders an anti-aliased shape of extent `size` centred at (cx, cy) and
/// returns its exact bounding box.
Box render_shape(Image& image, ShapeKind kind, float cx, float cy, float size, const Rgb& color);

/// Textured background, 2-8 (by default) non-overlapping shapes, then the
/// domain shift. Deterministic in (spec, rng state).
Scene generate_scene(const DomainSpec& spec, Rng& rng, std::string id = {});

/// Depth-dependent haze: out = (1-t) * haze + t * blur(image), with
/// t = 1 - strength * depth and depth rising from the bottom row to 1 at the top.
/// The blur sigma is `blur_sigma * strength`.
Image apply_fog(const Image& image, float strength, const Rgb& haze_color, float blur_sigma = 1.5f);

Image gaussian_blur(const Image& image, float sigma);

/// [N, 3, H, W] batch from HWC images.
TensorF images_to_tensor(const std::vector<const Image*>& images);
TensorF image_to_tensor(const Image& image);

/// Source and target generators plus split sizes for one benchmark.
struct BenchmarkSpec {
  DomainSpec source;
  DomainSpec target;
  int source_train = 500;
  int source_test = 200;
  int target_train = 500;
  int target_test = 200;

  /// Clean source; target with light haze, strong blur and sensor noise.
  static BenchmarkSpec defaults();
};

}  // namespace sfod
