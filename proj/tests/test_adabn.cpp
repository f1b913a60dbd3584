#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>
#include <random>

#include "sfod/adabn.hpp"
#include "sfod/ops.hpp"
#include "test_util.hpp"

namespace sfod {
namespace {

std::vector<TensorF> random_batches(int count, Index batch, std::uint64_t seed, float offset = 0.3f) {
  std::mt19937_64 rng(seed);
  std::vector<TensorF> out;
  for (int i = 0; i < count; ++i) {
    TensorF t = test::random_tensor({batch, 3, 32, 32}, rng, 0, 1).cast<float>();
    t.array() += offset;
    out.push_back(t);
  }
  return out;
}

TEST(AdaBN, OnlyStatisticsChange) {
  const ModelState source = init_model(test::tiny_arch(), 1);
  const ModelState adapted = collect_target_statistics(source, random_batches(3, 4, 2));
  ASSERT_EQ(adapted.entries().size(), source.entries().size());
  bool stats_changed = false;
  for (std::size_t i = 0; i < source.entries().size(); ++i) {
    const auto& a = adapted.entries()[i];
    const auto& s = source.entries()[i];
    ASSERT_EQ(a.name, s.name);
    if (s.kind == ParamKind::BnStatistic) {
      stats_changed = stats_changed || a.value != s.value;
    } else {
      EXPECT_EQ(std::memcmp(a.value.data(), s.value.data(), sizeof(float) * s.value.size()), 0) << s.name;
    }
  }
  EXPECT_TRUE(stats_changed);
}

TEST(AdaBN, FirstLayerMatchesDirectStatistics) {
  const ModelState model = init_model(test::tiny_arch(), 3);
  const auto batches = random_batches(4, 2, 4);
  const ModelState adapted = collect_target_statistics(model, batches);
  // Equal batch sizes: the average of batch statistics equals the mean over
  // all images for the mean, and the average biased batch variance.
  const auto& w = model.at(backbone_conv_name(0) + ".weight");
  const auto& b = model.at(backbone_conv_name(0) + ".bias");
  const Index c = w.dim(0);
  std::vector<double> mean(static_cast<std::size_t>(c)), var(static_cast<std::size_t>(c));
  for (const auto& batch : batches) {
    const TensorF y = conv2d_forward(batch, w, b, 1, 1);
    const Index hw = y.dim(2) * y.dim(3), per = y.dim(0) * hw;
    for (Index ch = 0; ch < c; ++ch) {
      double s = 0, sq = 0;
      for (Index n = 0; n < y.dim(0); ++n)
        for (Index k = 0; k < hw; ++k) s += y[(n * c + ch) * hw + k];
      const double m = s / per;
      for (Index n = 0; n < y.dim(0); ++n)
        for (Index k = 0; k < hw; ++k) sq += (y[(n * c + ch) * hw + k] - m) * (y[(n * c + ch) * hw + k] - m);
      mean[static_cast<std::size_t>(ch)] += m / batches.size();
      var[static_cast<std::size_t>(ch)] += sq / per / batches.size();
    }
  }
  const auto& rm = adapted.at(backbone_bn_name(0) + ".running_mean");
  const auto& rv = adapted.at(backbone_bn_name(0) + ".running_var");
  for (Index ch = 0; ch < c; ++ch) {
    EXPECT_NEAR(rm[ch], mean[static_cast<std::size_t>(ch)], 1e-4);
    EXPECT_NEAR(rv[ch], var[static_cast<std::size_t>(ch)], 1e-4 * std::max(1.0, var[static_cast<std::size_t>(ch)]));
  }
}

TEST(AdaBN, IndependentOfBatchOrder) {
  const ModelState model = init_model(test::tiny_arch(), 5);
  auto batches = random_batches(5, 3, 6);
  const ModelState a = collect_target_statistics(model, batches);
  std::reverse(batches.begin(), batches.end());
  std::swap(batches[0], batches[2]);
  const ModelState b = collect_target_statistics(model, batches);
  for (std::size_t i = 0; i < a.entries().size(); ++i) {
    const auto& x = a.entries()[i].value;
    const auto& y = b.entries()[i].value;
    for (Index k = 0; k < x.size(); ++k) EXPECT_NEAR(x[k], y[k], 1e-6 * std::max(1.0f, std::abs(x[k])));
  }
}

TEST(AdaBN, IgnoresExistingRunningStatistics) {
  ModelState model = init_model(test::tiny_arch(), 7);
  const auto batches = random_batches(2, 2, 8);
  const ModelState a = collect_target_statistics(model, batches);
  for (auto& e : model.entries())
    if (e.kind == ParamKind::BnStatistic) e.value.array() += 3.0f;
  EXPECT_EQ(collect_target_statistics(model, batches), a);
}

TEST(AdaBN, EmptyStreamIsRejected) {
  EXPECT_THROW(collect_target_statistics(init_model(test::tiny_arch(), 0), {}), std::invalid_argument);
}

TEST(AdaBN, SplitBatchesKeepsEveryImage) {
  const TensorF images({7, 3, 4, 4});
  const auto parts = split_batches(images, 3);
  ASSERT_EQ(parts.size(), 3u);
  EXPECT_EQ(parts[0].dim(0), 3);
  EXPECT_EQ(parts[2].dim(0), 1);
  EXPECT_THROW(split_batches(images, 0), std::invalid_argument);
}

}  // namespace
}  // namespace sfod
