#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "sfod/batchnorm.hpp"
#include "test_util.hpp"

namespace sfod {
namespace {

using test::max_relative_error;
using test::numeric_gradient;
using test::project;
using test::random_tensor;

TEST(BatchNorm, WorkedExample) {
  // One channel, batch {0, 2}: mean 1, biased variance 1.
  auto state = BNState<float>::identity(1);
  state.gamma[0] = 2;
  state.beta[0] = 1;
  const auto r = bn_forward(TensorF({2, 1, 1, 1}, {0, 2}), state, BNMode::Train);
  EXPECT_NEAR(r.output[0], -1.0f, 1e-3);
  EXPECT_NEAR(r.output[1], 3.0f, 1e-3);
  const float s = 1.0f / std::sqrt(1.0f + 1e-5f);
  EXPECT_FLOAT_EQ(r.output[0], 1 - 2 * s);
  EXPECT_FLOAT_EQ(r.output[1], 1 + 2 * s);
  EXPECT_FLOAT_EQ(r.batch_mean[0], 1.0f);
  EXPECT_FLOAT_EQ(r.batch_var[0], 1.0f);
}

TEST(BatchNorm, TrainModeNormalizesEveryChannel) {
  for (int seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const Index n = 2 + seed % 3, c = 3 + seed % 4, h = 3 + seed % 5, w = 4;
    TensorF x = random_tensor({n, c, h, w}, rng, -2, 2).cast<float>();
    for (Index i = 0; i < n; ++i)
      for (Index ch = 0; ch < c; ++ch)
        for (Index k = 0; k < h * w; ++k) x[(i * c + ch) * h * w + k] = x[(i * c + ch) * h * w + k] * (ch + 1) + 5.0f * ch;
    const auto r = bn_forward(x, BNState<float>::identity(c), BNMode::Train);
    const Index per = n * h * w;
    for (Index ch = 0; ch < c; ++ch) {
      double sum = 0, sq = 0;
      for (Index i = 0; i < n; ++i)
        for (Index k = 0; k < h * w; ++k) {
          const double v = r.cache.normalized[(i * c + ch) * h * w + k];
          sum += v;
          sq += v * v;
        }
      const double mean = sum / per;
      EXPECT_LE(std::abs(mean), 1e-5);
      EXPECT_NEAR(sq / per - mean * mean, 1.0, 1e-4);
    }
  }
}

TEST(BatchNorm, RunningStatisticsFollowMomentum) {
  auto state = BNState<double>::identity(2);
  state.running_mean = TensorD({2}, {1.0, -1.0});
  state.running_var = TensorD({2}, {2.0, 0.5});
  std::mt19937_64 rng(3);
  const TensorD x = random_tensor({4, 2, 3, 3}, rng);
  const auto r = bn_forward(x, state, BNMode::Train);
  for (Index ch = 0; ch < 2; ++ch) {
    double sum = 0, sq = 0;
    for (Index i = 0; i < 4; ++i)
      for (Index k = 0; k < 9; ++k) sum += x[(i * 2 + ch) * 9 + k];
    const double mean = sum / 36;
    for (Index i = 0; i < 4; ++i)
      for (Index k = 0; k < 9; ++k) sq += std::pow(x[(i * 2 + ch) * 9 + k] - mean, 2);
    const double var = sq / 36;  // biased
    EXPECT_NEAR(r.batch_mean[ch], mean, 1e-12);
    EXPECT_NEAR(r.batch_var[ch], var, 1e-12);
    EXPECT_NEAR(r.state.running_mean[ch], 0.9 * state.running_mean[ch] + 0.1 * mean, 1e-12);
    EXPECT_NEAR(r.state.running_var[ch], 0.9 * state.running_var[ch] + 0.1 * var, 1e-12);
  }
  EXPECT_EQ(r.state.gamma, state.gamma);
  EXPECT_EQ(r.state.beta, state.beta);
}

TEST(BatchNorm, EvalModeIsPureAndPerSample) {
  std::mt19937_64 rng(5);
  auto state = BNState<double>::identity(3);
  state.gamma = random_tensor({3}, rng, 0.5, 2);
  state.beta = random_tensor({3}, rng);
  state.running_mean = random_tensor({3}, rng);
  state.running_var = random_tensor({3}, rng, 0.2, 3);
  const TensorD x = random_tensor({3, 3, 2, 2}, rng);
  const auto r = bn_forward(x, state, BNMode::Eval);
  EXPECT_EQ(r.state.running_mean, state.running_mean);
  EXPECT_EQ(r.state.running_var, state.running_var);
  for (Index i = 0; i < 3; ++i)
    for (Index ch = 0; ch < 3; ++ch)
      for (Index k = 0; k < 4; ++k) {
        const Index at = (i * 3 + ch) * 4 + k;
        const double ref = state.gamma[ch] * (x[at] - state.running_mean[ch]) /
                               std::sqrt(state.running_var[ch] + state.epsilon) + state.beta[ch];
        EXPECT_NEAR(r.output[at], ref, 1e-12);
      }
  // A single sample gives the same answer as inside the batch.
  const auto alone = bn_forward(x.slice(1, 2), state, BNMode::Eval);
  for (Index k = 0; k < alone.output.size(); ++k) EXPECT_EQ(alone.output[k], r.output[12 + k]);
}

TEST(BatchNorm, GradientsMatchFiniteDifferences) {
  for (int seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(40 + seed);
    auto state = BNState<double>::identity(3);
    state.gamma = random_tensor({3}, rng, 0.5, 2);
    state.beta = random_tensor({3}, rng);
    TensorD x = random_tensor({3, 3, 3, 2}, rng);
    const TensorD r = random_tensor(x.shape(), rng);
    const auto loss = [&] { return project(bn_forward(x, state, BNMode::Train).output, r); };
    const auto g = bn_backward(r, bn_forward(x, state, BNMode::Train).cache);
    EXPECT_LT(max_relative_error(g.input, numeric_gradient(x, loss)), 1e-3);
    EXPECT_LT(max_relative_error(g.gamma, numeric_gradient(state.gamma, loss)), 1e-3);
    EXPECT_LT(max_relative_error(g.beta, numeric_gradient(state.beta, loss)), 1e-3);
  }
}

TEST(BatchNorm, BackwardRejectsEvalCache) {
  const auto r = bn_forward(TensorD({1, 1, 2, 2}), BNState<double>::identity(1), BNMode::Eval);
  EXPECT_THROW(bn_backward(TensorD({1, 1, 2, 2}), r.cache), std::logic_error);
}

TEST(BatchNorm, RejectsChannelMismatch) {
  EXPECT_THROW(bn_forward(TensorF({1, 2, 2, 2}), BNState<float>::identity(3), BNMode::Train), DimensionError);
}

}  // namespace
}  // namespace sfod
