#include "sfod/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sfod {

void StrongAugParams::validate() const {
  for (float p : {jitter_prob, grayscale_prob, blur_prob, cutout_prob}) {
    if (!(p >= 0.0f && p <= 1.0f)) throw std::invalid_argument("strong augmentation: probability outside [0,1]");
  }
  if (!(blur_sigma_min >= 0.0f && blur_sigma_max >= blur_sigma_min)) {
    throw std::invalid_argument("strong augmentation: bad blur sigma range");
  }
  if (cutout_min_count < 0 || cutout_max_count < cutout_min_count) {
    throw std::invalid_argument("strong augmentation: bad cutout count range");
  }
  if (!(cutout_min_frac > 0.0f && cutout_max_frac >= cutout_min_frac && cutout_max_frac <= 1.0f)) {
    throw std::invalid_argument("strong augmentation: bad cutout size range");
  }
  if (brightness < 0 || contrast < 0 || saturation < 0) {
    throw std::invalid_argument("strong augmentation: negative jitter range");
  }
}

StrongAugParams StrongAugParams::none() {
  StrongAugParams p;
  p.jitter_prob = p.grayscale_prob = p.blur_prob = p.cutout_prob = 0.0f;
  return p;
}

Scene flip_horizontal(const Scene& scene) {
  Scene out = scene;
  const Image& src = scene.image;
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = src.at(y, src.width - 1 - x, c);
    }
  }
  const auto w = static_cast<float>(src.width);
  for (auto& a : out.annotations) a.box = {w - a.box.x2, a.box.y1, w - a.box.x1, a.box.y2};
  return out;
}

Scene weak_augment(const Scene& scene, Rng& rng, bool* flipped) {
  const bool flip = bernoulli(rng, 0.5);
  if (flipped) *flipped = flip;
  return flip ? flip_horizontal(scene) : scene;
}

void to_grayscale(Image& image) {
  for (std::size_t i = 0; i < image.pixels.size(); i += 3) {
    const float g = 0.299f * image.pixels[i] + 0.587f * image.pixels[i + 1] + 0.114f * image.pixels[i + 2];
    image.pixels[i] = image.pixels[i + 1] = image.pixels[i + 2] = g;
  }
}

void apply_cutout(Image& image, const PixelRect& rect, float fill) {
  const int x0 = std::max(0, rect.x), y0 = std::max(0, rect.y);
  const int x1 = std::min(image.width, rect.x + rect.width), y1 = std::min(image.height, rect.y + rect.height);
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      for (int c = 0; c < 3; ++c) image.at(y, x, c) = fill;
    }
  }
}

namespace {

void clamp_unit(Image& image) {
  for (float& p : image.pixels) p = std::clamp(p, 0.0f, 1.0f);
}

void jitter(Image& image, const StrongAugParams& p, Rng& rng) {
  const auto factor = [&rng](float range) { return static_cast<float>(uniform(rng, 1.0 - range, 1.0 + range)); };
  const float b = factor(p.brightness), c = factor(p.contrast), s = factor(p.saturation);
  for (float& v : image.pixels) v *= b;
  clamp_unit(image);
  double mean = 0;
  for (std::size_t i = 0; i < image.pixels.size(); i += 3) {
    mean += 0.299 * image.pixels[i] + 0.587 * image.pixels[i + 1] + 0.114 * image.pixels[i + 2];
  }
  mean /= static_cast<double>(image.pixels.size() / 3);
  for (float& v : image.pixels) v = static_cast<float>(mean) + c * (v - static_cast<float>(mean));
  clamp_unit(image);
  for (std::size_t i = 0; i < image.pixels.size(); i += 3) {
    const float g = 0.299f * image.pixels[i] + 0.587f * image.pixels[i + 1] + 0.114f * image.pixels[i + 2];
    for (std::size_t k = 0; k < 3; ++k) image.pixels[i + k] = g + s * (image.pixels[i + k] - g);
  }
  clamp_unit(image);
}

}  // namespace

Scene strong_augment(const Scene& scene, const StrongAugParams& params, Rng& rng) {
  params.validate();
  Scene out = scene;
  Image& im = out.image;
  if (bernoulli(rng, params.jitter_prob)) jitter(im, params, rng);
  if (bernoulli(rng, params.grayscale_prob)) to_grayscale(im);
  if (bernoulli(rng, params.blur_prob)) {
    im = gaussian_blur(im, static_cast<float>(uniform(rng, params.blur_sigma_min, params.blur_sigma_max)));
  }
  if (bernoulli(rng, params.cutout_prob)) {
    const int count = uniform_int(rng, params.cutout_min_count, params.cutout_max_count);
    for (int i = 0; i < count; ++i) {
      const auto side = [&](int extent) {
        const double frac = uniform(rng, params.cutout_min_frac, params.cutout_max_frac);
        return std::max(1, static_cast<int>(std::lround(frac * extent)));
      };
      PixelRect r;
      r.width = side(im.width);
      r.height = side(im.height);
      r.x = uniform_int(rng, 0, im.width - r.width);
      r.y = uniform_int(rng, 0, im.height - r.height);
      apply_cutout(im, r, params.cutout_fill);
    }
  }
  clamp_unit(im);
  return out;
}

Image resize(const Image& image, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("resize: non-positive output size");
  Image out(out_h, out_w);
  if (image.height == 2 * out_h && image.width == 2 * out_w) {
    for (int y = 0; y < out_h; ++y) {
      for (int x = 0; x < out_w; ++x) {
        for (int c = 0; c < 3; ++c) {
          out.at(y, x, c) = 0.25f * (image.at(2 * y, 2 * x, c) + image.at(2 * y, 2 * x + 1, c) +
                                     image.at(2 * y + 1, 2 * x, c) + image.at(2 * y + 1, 2 * x + 1, c));
        }
      }
    }
    return out;
  }
  const float sy = static_cast<float>(image.height) / out_h, sx = static_cast<float>(image.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const float fy = std::clamp((static_cast<float>(y) + 0.5f) * sy - 0.5f, 0.0f, static_cast<float>(image.height - 1));
    const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, image.height - 1);
    const float ty = fy - static_cast<float>(y0);
    for (int x = 0; x < out_w; ++x) {
      const float fx = std::clamp((static_cast<float>(x) + 0.5f) * sx - 0.5f, 0.0f, static_cast<float>(image.width - 1));
      const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, image.width - 1);
      const float tx = fx - static_cast<float>(x0);
      for (int c = 0; c < 3; ++c) {
        const float top = (1 - tx) * image.at(y0, x0, c) + tx * image.at(y0, x1, c);
        const float bot = (1 - tx) * image.at(y1, x0, c) + tx * image.at(y1, x1, c);
        out.at(y, x, c) = (1 - ty) * top + ty * bot;
      }
    }
  }
  return out;
}

Scene mosaic(const std::array<const Scene*, 4>& scenes, int out_size) {
  const int h = scenes[0]->image.height, w = scenes[0]->image.width;
  for (const Scene* s : scenes) {
    if (s->image.height != h || s->image.width != w) throw std::invalid_argument("mosaic: inputs differ in size");
  }
  Image canvas(2 * h, 2 * w);
  Scene out;
  out.id = "mosaic";
  for (std::size_t q = 0; q < 4; ++q) {
    out.id += ":" + scenes[q]->id;
    const int oy = static_cast<int>(q / 2) * h, ox = static_cast<int>(q % 2) * w;
    const Image& im = scenes[q]->image;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int c = 0; c < 3; ++c) canvas.at(oy + y, ox + x, c) = im.at(y, x, c);
      }
    }
  }
  out.image = resize(canvas, out_size, out_size);
  const float sx = static_cast<float>(out_size) / static_cast<float>(2 * w);
  const float sy = static_cast<float>(out_size) / static_cast<float>(2 * h);
  for (std::size_t q = 0; q < 4; ++q) {
    const auto oy = static_cast<float>(q / 2) * static_cast<float>(h);
    const auto ox = static_cast<float>(q % 2) * static_cast<float>(w);
    for (const auto& a : scenes[q]->annotations) {
      const Box b{(a.box.x1 + ox) * sx, (a.box.y1 + oy) * sy, (a.box.x2 + ox) * sx, (a.box.y2 + oy) * sy};
      if (b.width() < 2.0f || b.height() < 2.0f) continue;
      out.annotations.push_back({b, a.class_id});
    }
  }
  return out;
}

}  // namespace sfod
