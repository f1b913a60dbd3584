#include <gtest/gtest.h>

#include "sfod/augment.hpp"

namespace sfod {
namespace {

Scene textured_scene(std::uint64_t seed) {
  DomainSpec spec;
  Rng rng(seed);
  return generate_scene(spec, rng, "s" + std::to_string(seed));
}

TEST(WeakAugment, FlipWorkedExample) {
  Scene s;
  s.image = Image(96, 96);
  s.annotations = {{{10, 20, 30, 40}, 1}};
  EXPECT_EQ(flip_horizontal(s).annotations[0].box, (Box{66, 20, 86, 40}));
}

TEST(WeakAugment, FlipIsAnInvolution) {
  const Scene s = textured_scene(1);
  EXPECT_EQ(flip_horizontal(flip_horizontal(s)), s);
  const Scene f = flip_horizontal(s);
  EXPECT_EQ(f.image.at(5, 0, 1), s.image.at(5, 95, 1));
}

TEST(WeakAugment, ReportsItsDecision) {
  const Scene s = textured_scene(2);
  int flips = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    bool flipped = false;
    const Scene out = weak_augment(s, rng, &flipped);
    EXPECT_EQ(out, flipped ? flip_horizontal(s) : s);
    flips += flipped;
  }
  EXPECT_GT(flips, 70);
  EXPECT_LT(flips, 130);
}

TEST(StrongAugment, ZeroProbabilitiesIsIdentity) {
  const Scene s = textured_scene(3);
  Rng rng(0);
  EXPECT_EQ(strong_augment(s, StrongAugParams::none(), rng), s);
}

TEST(StrongAugment, ForcedGrayscaleEqualizesChannels) {
  StrongAugParams p = StrongAugParams::none();
  p.grayscale_prob = 1.0f;
  Rng rng(1);
  const Scene out = strong_augment(textured_scene(4), p, rng);
  for (std::size_t i = 0; i < out.image.pixels.size(); i += 3) {
    EXPECT_EQ(out.image.pixels[i], out.image.pixels[i + 1]);
    EXPECT_EQ(out.image.pixels[i], out.image.pixels[i + 2]);
  }
}

TEST(StrongAugment, CutoutTouchesExactlyItsRectangle) {
  const Scene s = textured_scene(5);
  Image im = s.image;
  const PixelRect r{30, 40, 16, 16};
  apply_cutout(im, r, 0.5f);
  for (int y = 0; y < 96; ++y)
    for (int x = 0; x < 96; ++x)
      for (int c = 0; c < 3; ++c) {
        const bool inside = x >= 30 && x < 46 && y >= 40 && y < 56;
        EXPECT_EQ(im.at(y, x, c), inside ? 0.5f : s.image.at(y, x, c));
      }
}

TEST(StrongAugment, ForcedCutoutPatchesStayInBounds) {
  StrongAugParams p = StrongAugParams::none();
  p.cutout_prob = 1.0f;
  p.cutout_min_count = p.cutout_max_count = 1;
  p.cutout_min_frac = p.cutout_max_frac = 16.0f / 96.0f;
  p.cutout_fill = 2.0f;  // clamps to 1, which the textured background never reaches exactly
  Scene s = textured_scene(6);
  for (float& v : s.image.pixels) v = std::min(v, 0.9f);
  Rng rng(3);
  const Scene out = strong_augment(s, p, rng);
  int changed = 0;
  for (std::size_t i = 0; i < out.image.pixels.size(); ++i) changed += out.image.pixels[i] != s.image.pixels[i];
  EXPECT_EQ(changed, 16 * 16 * 3);
  EXPECT_EQ(out.annotations, s.annotations);
}

TEST(StrongAugment, KeepsPixelsInRangeAndBoxesFixed) {
  const Scene s = textured_scene(7);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const Scene out = strong_augment(s, StrongAugParams{}, rng);
    EXPECT_EQ(out.annotations, s.annotations);
    for (float v : out.image.pixels) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
}

TEST(StrongAugment, RejectsBadParameters) {
  StrongAugParams p;
  p.blur_prob = 1.5f;
  Rng rng(0);
  EXPECT_THROW(strong_augment(textured_scene(8), p, rng), std::invalid_argument);
  p = StrongAugParams{};
  p.blur_sigma_min = -1;
  EXPECT_THROW(p.validate(), std::invalid_argument);
}

TEST(Mosaic, BlankInputsGiveBlankOutput) {
  Scene blank;
  blank.image = Image(96, 96, 0.25f);
  const Scene out = mosaic({&blank, &blank, &blank, &blank}, 96);
  EXPECT_TRUE(out.annotations.empty());
  for (float v : out.image.pixels) EXPECT_EQ(v, 0.25f);
}

TEST(Mosaic, BoxArithmetic) {
  Scene a, blank;
  a.image = blank.image = Image(96, 96);
  a.annotations = {{{0, 0, 10, 10}, 2}};
  Scene d = a;
  d.annotations = {{{0, 0, 10, 10}, 1}, {{40, 40, 42, 43}, 0}};  // the second shrinks below 2 px
  const Scene out = mosaic({&a, &blank, &blank, &d}, 96);
  ASSERT_EQ(out.annotations.size(), 2u);
  EXPECT_EQ(out.annotations[0], (Annotation{{0, 0, 5, 5}, 2}));
  EXPECT_EQ(out.annotations[1], (Annotation{{48, 48, 53, 53}, 1}));
}

TEST(Mosaic, QuadrantsAreAreaAverages) {
  Scene q[4];
  for (int i = 0; i < 4; ++i) {
    q[i].image = Image(4, 4, 0.1f * static_cast<float>(i + 1));
    q[i].id = std::to_string(i);
  }
  q[0].image.at(0, 0, 0) = 0.9f;
  const Scene out = mosaic({&q[0], &q[1], &q[2], &q[3]}, 4);
  EXPECT_FLOAT_EQ(out.image.at(0, 0, 0), 0.25f * (0.9f + 3 * 0.1f));
  EXPECT_FLOAT_EQ(out.image.at(0, 3, 1), 0.2f);
  EXPECT_FLOAT_EQ(out.image.at(3, 0, 2), 0.3f);
  EXPECT_FLOAT_EQ(out.image.at(3, 3, 0), 0.4f);
  EXPECT_EQ(out.id, "mosaic:0:1:2:3");
}

TEST(Resize, IdentitySizeIsExact) {
  const Scene s = textured_scene(9);
  EXPECT_EQ(resize(s.image, 96, 96), s.image);
  EXPECT_THROW(resize(s.image, 0, 4), std::invalid_argument);
}

}  // namespace
}  // namespace sfod
