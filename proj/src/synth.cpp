#include "sfod/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sfod {

const char* shift_kind_name(ShiftKind kind) {
  switch (kind) {
    case ShiftKind::None: return "none";
    case ShiftKind::Fog: return "fog";
    case ShiftKind::Color: return "color";
    case ShiftKind::Scale: return "scale";
  }
  return "?";
}

ShiftKind shift_kind_from_name(const std::string& name) {
  if (name == "none") return ShiftKind::None;
  if (name == "fog") return ShiftKind::Fog;
  if (name == "color") return ShiftKind::Color;
  if (name == "scale") return ShiftKind::Scale;
  throw std::invalid_argument("unknown domain shift '" + name + "'");
}

void DomainSpec::validate() const {
  if (image_size < 16) throw std::invalid_argument("domain spec: image_size must be >= 16");
  if (min_objects < 0 || max_objects < min_objects) throw std::invalid_argument("domain spec: bad object count range");
  if (!(min_size >= 2.0f) || max_size < min_size || max_size * scale_factor > image_size) {
    throw std::invalid_argument("domain spec: bad object size range");
  }
  if (!(fog_strength >= 0.0f && fog_strength <= 1.0f)) throw std::invalid_argument("domain spec: fog strength outside [0,1]");
  if (!(fog_blur >= 0.0f)) throw std::invalid_argument("domain spec: negative fog blur");
  if (!(sensor_noise >= 0.0f)) throw std::invalid_argument("domain spec: negative sensor noise");
  if (!(scale_factor > 0.0f)) throw std::invalid_argument("domain spec: scale factor must be positive");
  if (!(base_color_min >= 0 && base_color_max <= 1 && base_color_min <= base_color_max)) {
    throw std::invalid_argument("domain spec: base colour range outside [0,1]");
  }
}

namespace {

constexpr int kSuper = 4;  // supersamples per axis for anti-aliasing

bool inside(ShapeKind kind, float cx, float cy, float half, float px, float py) {
  switch (kind) {
    case ShapeKind::Disc: {
      const float dx = px - cx, dy = py - cy;
      return dx * dx + dy * dy <= half * half;
    }
    case ShapeKind::Square:
      return std::abs(px - cx) <= half && std::abs(py - cy) <= half;
    case ShapeKind::Triangle: {
      // Apex at the top, base at the bottom.
      if (py < cy - half || py > cy + half) return false;
      const float t = (py - (cy - half)) / (2.0f * half);  // 0 at apex, 1 at base
      return std::abs(px - cx) <= t * half;
    }
  }
  return false;
}

float smoothstep(float t) { return t * t * (3.0f - 2.0f * t); }

}  // namespace

Box render_shape(Image& image, ShapeKind kind, float cx, float cy, float size, const Rgb& color) {
  const float half = 0.5f * size;
  const Box box{cx - half, cy - half, cx + half, cy + half};
  const int x0 = std::max(0, static_cast<int>(std::floor(box.x1)));
  const int y0 = std::max(0, static_cast<int>(std::floor(box.y1)));
  const int x1 = std::min(image.width - 1, static_cast<int>(std::ceil(box.x2)));
  const int y1 = std::min(image.height - 1, static_cast<int>(std::ceil(box.y2)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      int hits = 0;
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const float px = static_cast<float>(x) + (static_cast<float>(sx) + 0.5f) / kSuper;
          const float py = static_cast<float>(y) + (static_cast<float>(sy) + 0.5f) / kSuper;
          hits += inside(kind, cx, cy, half, px, py) ? 1 : 0;
        }
      }
      if (hits == 0) continue;
      const float cov = static_cast<float>(hits) / (kSuper * kSuper);
      for (int c = 0; c < 3; ++c) {
        float& p = image.at(y, x, c);
        p = (1.0f - cov) * p + cov * color[static_cast<std::size_t>(c)];
      }
    }
  }
  return clip_box(box, static_cast<float>(image.width), static_cast<float>(image.height));
}

Scene generate_scene(const DomainSpec& spec, Rng& rng, std::string id) {
  spec.validate();
  const int size = spec.image_size;
  Scene scene;
  scene.id = std::move(id);
  scene.image = Image(size, size);

  // Background: base colour plus bilinear value noise on a coarse lattice.
  Rgb base;
  for (float& b : base) b = static_cast<float>(uniform(rng, spec.base_color_min, spec.base_color_max));
  constexpr int kGrid = 7;
  std::vector<float> lattice(kGrid * kGrid * 3);
  for (float& v : lattice) v = static_cast<float>(uniform(rng, -1.0, 1.0)) * spec.noise_scale;
  const float cell = static_cast<float>(size) / (kGrid - 1);
  for (int y = 0; y < size; ++y) {
    const float gy = static_cast<float>(y) / cell;
    const int iy = std::min(static_cast<int>(gy), kGrid - 2);
    const float ty = smoothstep(gy - static_cast<float>(iy));
    for (int x = 0; x < size; ++x) {
      const float gx = static_cast<float>(x) / cell;
      const int ix = std::min(static_cast<int>(gx), kGrid - 2);
      const float tx = smoothstep(gx - static_cast<float>(ix));
      for (int c = 0; c < 3; ++c) {
        const auto l = [&](int yy, int xx) { return lattice[static_cast<std::size_t>((yy * kGrid + xx) * 3 + c)]; };
        const float top = (1 - tx) * l(iy, ix) + tx * l(iy, ix + 1);
        const float bot = (1 - tx) * l(iy + 1, ix) + tx * l(iy + 1, ix + 1);
        scene.image.at(y, x, c) = std::clamp(base[static_cast<std::size_t>(c)] + (1 - ty) * top + ty * bot, 0.0f, 1.0f);
      }
    }
  }

  const float scale = spec.shift == ShiftKind::Scale ? spec.scale_factor : 1.0f;
  const int count = uniform_int(rng, spec.min_objects, spec.max_objects);
  for (int i = 0; i < count; ++i) {
    // Rejection-sample a placement that keeps the box inside the image and
    // does not overlap earlier shapes much.
    for (int attempt = 0; attempt < 50; ++attempt) {
      const auto kind = static_cast<ShapeKind>(uniform_int(rng, 0, kNumShapeClasses - 1));
      // Geometry on a 1/32 px grid keeps box arithmetic (flips, offsets) exact.
      const auto snap = [](double v) { return static_cast<float>(std::round(v * 32.0) / 32.0); };
      const float extent = std::max(2.0f / 32.0f, snap(0.5 * uniform(rng, spec.min_size, spec.max_size) * scale) * 2.0f);
      const float half = 0.5f * extent;
      const float cx = snap(uniform(rng, half, size - half));
      const float cy = snap(uniform(rng, half, size - half));
      Rgb color;
      float contrast = 0;
      for (std::size_t c = 0; c < 3; ++c) {
        color[c] = static_cast<float>(uniform(rng, 0.0, 1.0));
        contrast += std::abs(color[c] - base[c]);
      }
      const Box box{cx - half, cy - half, cx + half, cy + half};
      bool clash = contrast < 0.6f;
      for (const auto& a : scene.annotations) clash = clash || iou(a.box, box) > 0.05f;
      if (clash) continue;
      const Box drawn = render_shape(scene.image, kind, cx, cy, extent, color);
      scene.annotations.push_back({drawn, static_cast<int>(kind)});
      break;
    }
  }

  switch (spec.shift) {
    case ShiftKind::Fog:
      if (spec.fog_strength > 0) scene.image = apply_fog(scene.image, spec.fog_strength, spec.haze_color, spec.fog_blur);
      break;
    case ShiftKind::Color:
      for (std::size_t i = 0; i < scene.image.pixels.size(); ++i) {
        scene.image.pixels[i] = std::clamp(scene.image.pixels[i] * spec.color_cast[i % 3], 0.0f, 1.0f);
      }
      break;
    case ShiftKind::None:
    case ShiftKind::Scale:
      break;
  }
  if (spec.sensor_noise > 0) {
    std::normal_distribution<float> noise(0.0f, spec.sensor_noise);
    for (float& p : scene.image.pixels) p = std::clamp(p + noise(rng), 0.0f, 1.0f);
  }
  return scene;
}

Image gaussian_blur(const Image& image, float sigma) {
  if (!(sigma > 0)) return image;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0f * sigma)));
  std::vector<float> kernel(static_cast<std::size_t>(2 * radius + 1));
  float sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5f * static_cast<float>(i * i) / (sigma * sigma));
    sum += kernel[static_cast<std::size_t>(i + radius)];
  }
  for (float& k : kernel) k /= sum;
  const int h = image.height, w = image.width;
  Image tmp(h, w), out(h, w);
  // Separable passes with edge clamping.
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        float acc = 0;
        for (int i = -radius; i <= radius; ++i) {
          acc += kernel[static_cast<std::size_t>(i + radius)] * image.at(y, std::clamp(x + i, 0, w - 1), c);
        }
        tmp.at(y, x, c) = acc;
      }
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        float acc = 0;
        for (int i = -radius; i <= radius; ++i) {
          acc += kernel[static_cast<std::size_t>(i + radius)] * tmp.at(std::clamp(y + i, 0, h - 1), x, c);
        }
        out.at(y, x, c) = acc;
      }
    }
  }
  return out;
}

Image apply_fog(const Image& image, float strength, const Rgb& haze_color, float blur_sigma) {
  if (!(strength >= 0.0f && strength <= 1.0f)) throw std::invalid_argument("apply_fog: strength outside [0,1]");
  if (strength == 0.0f) return image;
  const Image blurred = gaussian_blur(image, blur_sigma * strength);
  Image out(image.height, image.width);
  const float denom = static_cast<float>(std::max(1, image.height - 1));
  for (int y = 0; y < image.height; ++y) {
    // Depth proxy: 1 at the top row, 0.3 at the bottom row.
    const float depth = 1.0f - 0.7f * static_cast<float>(y) / denom;
    const float t = 1.0f - strength * depth;
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        out.at(y, x, c) = (1.0f - t) * haze_color[static_cast<std::size_t>(c)] + t * blurred.at(y, x, c);
      }
    }
  }
  return out;
}

TensorF images_to_tensor(const std::vector<const Image*>& images) {
  if (images.empty()) throw DimensionError("images_to_tensor: empty batch");
  const int h = images.front()->height, w = images.front()->width;
  TensorF t({static_cast<Index>(images.size()), 3, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& im = *images[n];
    if (im.height != h || im.width != w) throw DimensionError("images_to_tensor: mixed image sizes");
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int c = 0; c < 3; ++c) t(static_cast<Index>(n), c, y, x) = im.at(y, x, c);
      }
    }
  }
  return t;
}

TensorF image_to_tensor(const Image& image) { return images_to_tensor({&image}); }

BenchmarkSpec BenchmarkSpec::defaults() {
  BenchmarkSpec b;
  b.target.shift = ShiftKind::Fog;
  b.target.fog_strength = 0.2f;
  b.target.fog_blur = 4.0f;
  b.target.sensor_noise = 0.04f;
  return b;
}

}  // namespace sfod
