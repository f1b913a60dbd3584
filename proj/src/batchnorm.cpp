#include "sfod/batchnorm.hpp"

#include <cmath>
#include <stdexcept>

namespace sfod {

template <typename Scalar>
BNState<Scalar> BNState<Scalar>::identity(Index channels) {
  BNState s;
  s.gamma = Tensor<Scalar>({channels}, Scalar(1));
  s.beta = Tensor<Scalar>({channels}, Scalar(0));
  s.running_mean = Tensor<Scalar>({channels}, Scalar(0));
  s.running_var = Tensor<Scalar>({channels}, Scalar(1));
  return s;
}

template <typename Scalar>
void BNState<Scalar>::validate() const {
  const Index c = channels();
  if (beta.size() != c || running_mean.size() != c || running_var.size() != c) {
    throw DimensionError("batchnorm: parameter arrays disagree on channel count");
  }
  if ((running_var.array() < Scalar(0)).any()) throw std::invalid_argument("batchnorm: negative running variance");
  if (!(epsilon > 0)) throw std::invalid_argument("batchnorm: epsilon must be positive");
  if (!(momentum > 0 && momentum <= 1)) throw std::invalid_argument("batchnorm: momentum must be in (0,1]");
}

template <typename Scalar>
BNResult<Scalar> bn_forward(const Tensor<Scalar>& x, const BNState<Scalar>& state, BNMode mode) {
  state.validate();
  if (x.rank() != 4 || x.dim(1) != state.channels()) {
    throw DimensionError("bn_forward: input " + shape_to_string(x.shape()) + " vs " +
                         std::to_string(state.channels()) + " channels");
  }
  const Index n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const Index count = n * hw;
  if (mode == BNMode::Train && count < 2) {
    throw std::invalid_argument("bn_forward: Train mode needs at least 2 values per channel, got " +
                                std::to_string(count));
  }

  BNResult<Scalar> r;
  r.state = state;
  r.output = Tensor<Scalar>(x.shape());
  r.cache.mode = mode;
  r.cache.normalized = Tensor<Scalar>(x.shape());
  r.cache.inv_std = Tensor<Scalar>({c});
  r.cache.gamma = state.gamma;

  using Plane = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
  const auto plane = [c, hw](const Scalar* base, Index b, Index ch) { return Plane(base + (b * c + ch) * hw, hw); };
  Tensor<Scalar> mean({c}), var({c});
  if (mode == BNMode::Train) {
    // Two-pass statistics in double for stability regardless of Scalar.
    for (Index ch = 0; ch < c; ++ch) {
      double sum = 0;
      for (Index b = 0; b < n; ++b) sum += plane(x.data(), b, ch).template cast<double>().sum();
      const double mu = sum / static_cast<double>(count);
      double sq = 0;
      for (Index b = 0; b < n; ++b) sq += (plane(x.data(), b, ch).template cast<double>() - mu).square().sum();
      mean[ch] = static_cast<Scalar>(mu);
      var[ch] = static_cast<Scalar>(sq / static_cast<double>(count));
    }
    r.batch_mean = mean;
    r.batch_var = var;
    const Scalar m = state.momentum;
    r.state.running_mean.array() = (Scalar(1) - m) * state.running_mean.array() + m * mean.array();
    r.state.running_var.array() = (Scalar(1) - m) * state.running_var.array() + m * var.array();
  } else {
    mean = state.running_mean;
    var = state.running_var;
  }

  for (Index ch = 0; ch < c; ++ch) {
    const Scalar inv = Scalar(1) / std::sqrt(var[ch] + state.epsilon);
    r.cache.inv_std[ch] = inv;
    const Scalar g = state.gamma[ch], be = state.beta[ch], mu = mean[ch];
    for (Index b = 0; b < n; ++b) {
      const Index off = (b * c + ch) * hw;
      for (Index i = 0; i < hw; ++i) {
        const Scalar xn = (x[off + i] - mu) * inv;
        r.cache.normalized[off + i] = xn;
        r.output[off + i] = g * xn + be;
      }
    }
  }
  return r;
}

template <typename Scalar>
BNGrads<Scalar> bn_backward(const Tensor<Scalar>& upstream, const BNCache<Scalar>& cache) {
  if (cache.mode != BNMode::Train) {
    throw std::logic_error("bn_backward: no gradient path through Eval-mode statistics");
  }
  if (upstream.shape() != cache.normalized.shape()) {
    throw DimensionError("bn_backward: upstream " + shape_to_string(upstream.shape()) + " vs " +
                         shape_to_string(cache.normalized.shape()));
  }
  const Index n = upstream.dim(0), c = upstream.dim(1), hw = upstream.dim(2) * upstream.dim(3);
  const Scalar count = static_cast<Scalar>(n * hw);
  BNGrads<Scalar> g{Tensor<Scalar>(upstream.shape()), Tensor<Scalar>({c}), Tensor<Scalar>({c})};
  using Plane = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
  for (Index ch = 0; ch < c; ++ch) {
    Scalar sum_dy = 0, sum_dy_xn = 0;
    for (Index b = 0; b < n; ++b) {
      const Index off = (b * c + ch) * hw;
      const Plane dy(upstream.data() + off, hw), xn(cache.normalized.data() + off, hw);
      sum_dy += dy.sum();
      sum_dy_xn += (dy * xn).sum();
    }
    g.beta[ch] = sum_dy;
    g.gamma[ch] = sum_dy_xn;
    // dx = gamma * inv_std / count * (count * dy - sum(dy) - xn * sum(dy * xn))
    const Scalar scale = cache.gamma[ch] * cache.inv_std[ch] / count;
    for (Index b = 0; b < n; ++b) {
      const Index off = (b * c + ch) * hw;
      for (Index i = 0; i < hw; ++i) {
        g.input[off + i] =
            scale * (count * upstream[off + i] - sum_dy - cache.normalized[off + i] * sum_dy_xn);
      }
    }
  }
  return g;
}

template struct BNState<float>;
template struct BNState<double>;
template BNResult<float> bn_forward(const Tensor<float>&, const BNState<float>&, BNMode);
template BNResult<double> bn_forward(const Tensor<double>&, const BNState<double>&, BNMode);
template BNGrads<float> bn_backward(const Tensor<float>&, const BNCache<float>&);
template BNGrads<double> bn_backward(const Tensor<double>&, const BNCache<double>&);

}  // namespace sfod
