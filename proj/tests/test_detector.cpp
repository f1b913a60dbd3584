#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "sfod/detector.hpp"
#include "test_util.hpp"

namespace sfod {
namespace {

using test::random_tensor;
using test::relative_error;

// Max over every cell whose unit square overlaps the bin's sub-window.
TensorD overlap_pool(const TensorD& f, const Box& p, int out) {
  const Index c = f.dim(0), h = f.dim(1), w = f.dim(2);
  TensorD r({c, out, out});
  const float bw = (p.x2 - p.x1) / static_cast<float>(out), bh = (p.y2 - p.y1) / static_cast<float>(out);
  for (Index ch = 0; ch < c; ++ch)
    for (int i = 0; i < out; ++i)
      for (int j = 0; j < out; ++j) {
        const float y0 = p.y1 + bh * static_cast<float>(i), x0 = p.x1 + bw * static_cast<float>(j);
        double best = -INFINITY;
        for (Index y = 0; y < h; ++y)
          for (Index x = 0; x < w; ++x) {
            const bool overlaps = static_cast<float>(y) < y0 + bh && static_cast<float>(y + 1) > y0 &&
                                  static_cast<float>(x) < x0 + bw && static_cast<float>(x + 1) > x0;
            if (overlaps) best = std::max(best, f[(ch * h + y) * w + x]);
          }
        r[(ch * out + i) * out + j] = best;
      }
  return r;
}

TEST(RoiPool, MatchesOverlapOracle) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(0, 1);
  for (int inst = 0; inst < 100; ++inst) {
    const TensorD f = random_tensor({2, 9, 11}, rng);
    // Quarter-pixel coordinates, at least one cell wide, inside the map.
    const auto q = [&](float lo, float hi) { return std::round(4 * (lo + (hi - lo) * u(rng))) / 4; };
    const float x1 = q(0, 8), y1 = q(0, 6);
    const Box p{x1, y1, q(x1 + 1, 11), q(y1 + 1, 9)};
    const int out = 2 + inst % 4;
    const auto r = roi_pool(f, p, out);
    EXPECT_EQ(r.output, overlap_pool(f, p, out)) << inst;
    for (Index o = 0; o < r.output.size(); ++o) EXPECT_EQ(r.output[o], f[r.argmax[static_cast<std::size_t>(o)]]);
  }
}

TEST(RoiPool, SubCellProposalSamplesCenterCell) {
  std::mt19937_64 rng(2);
  const TensorD f = random_tensor({1, 6, 6}, rng);
  const auto r = roi_pool(f, {2.1f, 3.2f, 2.6f, 3.9f}, 3);
  for (Index o = 0; o < 9; ++o) EXPECT_EQ(r.output[o], f[3 * 6 + 2]);
}

struct Batch {
  TensorD images;
  std::vector<std::vector<Annotation>> targets;
};

Batch make_batch(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Batch b{random_tensor({2, 3, 32, 32}, rng, 0, 1), {}};
  b.targets = {{{{4, 6, 20, 18}, 0}, {{18, 20, 30, 31}, 2}}, {{{8, 2, 24, 14}, 1}}};
  // Paint the objects so the loss has structure.
  for (std::size_t n = 0; n < 2; ++n)
    for (const auto& a : b.targets[n])
      for (int y = static_cast<int>(a.box.y1); y < static_cast<int>(a.box.y2); ++y)
        for (int x = static_cast<int>(a.box.x1); x < static_cast<int>(a.box.x2); ++x)
          b.images(static_cast<Index>(n), a.class_id, y, x) += 0.8;
  return b;
}

// Full two-stage loss with replayed sampling against central differences on
// a spread of entries from every trainable array.
TEST(ForwardTrain, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto arch = test::tiny_arch();
    BasicModelState<double> model = init_model(arch, seed).cast<double>();
    std::mt19937_64 prng(seed);
    for (auto& e : model.entries()) {
      if (e.kind == ParamKind::BnAffine) e.value.array() += random_tensor(e.value.shape(), prng, -0.2, 0.2).array();
      if (e.name.find(".bias") != std::string::npos) e.value = random_tensor(e.value.shape(), prng, -0.05, 0.05);
    }
    const Batch batch = make_batch(seed + 10);
    TrainOptions opts;
    Rng rng(seed);
    BasicModelState<double> work = model;
    const auto out = forward_train(work, batch.images, batch.targets, opts, rng);
    ASSERT_GT(out.losses.rpn_reg, 0);
    ASSERT_GT(out.losses.roi_reg, 0);
    const auto loss_at = [&](const BasicModelState<double>& m) {
      BasicModelState<double> copy = m;
      Rng unused(0);
      return forward_train(copy, batch.images, batch.targets, opts, unused, &out.plan).losses.total;
    };
    EXPECT_DOUBLE_EQ(loss_at(model), out.losses.total);
    int checked = 0;
    double worst = 0;
    for (std::size_t e = 0; e < model.entries().size(); ++e) {
      if (!model.entries()[e].trainable()) continue;
      const Index size = model.entries()[e].value.size();
      for (int k = 0; k < 4; ++k) {
        const Index i = std::uniform_int_distribution<Index>(0, size - 1)(prng);
        BasicModelState<double> probe = model;
        const double keep = probe.entries()[e].value[i], h = 1e-6;
        probe.entries()[e].value[i] = keep + h;
        const double up = loss_at(probe);
        probe.entries()[e].value[i] = keep - h;
        const double down = loss_at(probe);
        const double numeric = (up - down) / (2 * h);
        const double analytic = out.grads.entries()[e].value[i];
        const double err = relative_error(analytic, numeric, 1e-7);
        worst = std::max(worst, err);
        EXPECT_LT(err, 1e-3) << model.entries()[e].name << "[" << i << "] " << analytic << " vs " << numeric;
        ++checked;
      }
    }
    EXPECT_GT(checked, 50);
  }
}

TEST(ForwardTrain, LossIsSumOfTermsAndRegToggleZeroesRegression) {
  const Batch batch = make_batch(3);
  ModelState model = init_model(test::tiny_arch(), 3);
  const TensorF images = batch.images.cast<float>();
  TrainOptions opts;
  Rng rng(1);
  ModelState a = model;
  const auto with = forward_train(a, images, batch.targets, opts, rng);
  const auto& l = with.losses;
  EXPECT_NEAR(l.total, l.rpn_cls + l.rpn_reg + l.roi_cls + l.roi_reg, 1e-6);
  opts.include_reg = false;
  ModelState b = model;
  Rng rng2(1);
  const auto without = forward_train(b, images, batch.targets, opts, rng2);
  EXPECT_EQ(without.losses.rpn_reg, 0.0);
  EXPECT_EQ(without.losses.roi_reg, 0.0);
  for (const char* name : {"rpn.reg.weight", "rpn.reg.bias", "roi.reg.weight", "roi.reg.bias"}) {
    EXPECT_TRUE((without.grads.at(name).array() == 0.0f).all()) << name;
  }
}

TEST(ForwardTrain, RefreshesStatisticsButNotWeights) {
  const Batch batch = make_batch(4);
  const ModelState before = init_model(test::tiny_arch(), 4);
  ModelState model = before;
  Rng rng(2);
  forward_train(model, batch.images.cast<float>(), batch.targets, TrainOptions{}, rng);
  for (std::size_t i = 0; i < model.entries().size(); ++i) {
    const auto& e = model.entries()[i];
    if (e.kind == ParamKind::BnStatistic) EXPECT_NE(e.value, before.entries()[i].value) << e.name;
    else EXPECT_EQ(e.value, before.entries()[i].value) << e.name;
  }
}

TEST(ForwardTrain, ImagesWithoutObjectsStillTrainBackground) {
  const Batch batch = make_batch(5);
  ModelState model = init_model(test::tiny_arch(), 5);
  Rng rng(3);
  const auto out = forward_train(model, batch.images.cast<float>(), {{}, {}}, TrainOptions{}, rng);
  EXPECT_GT(out.losses.rpn_cls, 0.0);
  EXPECT_EQ(out.losses.rpn_reg, 0.0);
  EXPECT_TRUE(std::isfinite(out.losses.total));
}

TEST(Inference, OutputContract) {
  const Batch batch = make_batch(6);
  const TensorF images = batch.images.cast<float>();
  const ModelState model = init_model(test::tiny_arch(), 6);
  InferenceOptions opts;
  opts.score_floor = 0.0f;
  const auto dets = forward_inference_batch(model, images, opts);
  ASSERT_EQ(dets.size(), 2u);
  for (std::size_t n = 0; n < 2; ++n) {
    EXPECT_LE(dets[n].size(), static_cast<std::size_t>(opts.max_dets));
    EXPECT_TRUE(std::is_sorted(dets[n].begin(), dets[n].end(), detection_before));
    for (const auto& d : dets[n]) {
      EXPECT_GE(d.box.x1, 0.0f);
      EXPECT_LE(d.box.x2, 32.0f);
      EXPECT_GE(d.class_id, 0);
      EXPECT_LT(d.class_id, 3);
      EXPECT_GE(d.score, opts.score_floor);
    }
    for (std::size_t i = 0; i < dets[n].size(); ++i)
      for (std::size_t j = i + 1; j < dets[n].size(); ++j)
        if (dets[n][i].class_id == dets[n][j].class_id) EXPECT_LE(iou(dets[n][i].box, dets[n][j].box), opts.nms_iou);
    // Eval mode treats images independently.
    EXPECT_EQ(forward_inference(model, images.slice(static_cast<Index>(n), static_cast<Index>(n) + 1), opts), dets[n]);
  }
  EXPECT_EQ(forward_inference_batch(model, images, opts), dets);
}

TEST(Inference, RejectsWrongInputSize) {
  EXPECT_THROW(forward_inference(init_model(test::tiny_arch(), 0), TensorF({1, 3, 16, 16}), {}), DimensionError);
}

}  // namespace
}  // namespace sfod
