#pragma once

#include "sfod/tensor.hpp"

namespace sfod {

enum class BNMode { Train, Eval };

/// Per-channel affine parameters and running statistics of one BN layer.
///
/// `momentum` is the weight given to the current batch when the running
/// estimates are refreshed in Train mode:
///   running <- (1 - momentum) * running + momentum * batch.
/// Variances are biased (population) both for normalization and tracking.
template <typename Scalar>
struct BNState {
  Tensor<Scalar> gamma;
  Tensor<Scalar> beta;
  Tensor<Scalar> running_mean;
  Tensor<Scalar> running_var;
  Scalar momentum = Scalar(0.1);
  Scalar epsilon = Scalar(1e-5);

  static BNState identity(Index channels);
  Index channels() const { return gamma.size(); }
  void validate() const;
};

/// Values saved by a forward pass for the backward pass.
template <typename Scalar>
struct BNCache {
  BNMode mode = BNMode::Eval;
  Tensor<Scalar> normalized;  // (x - mu) / sqrt(var + eps)
  Tensor<Scalar> inv_std;     // [C]
  Tensor<Scalar> gamma;       // [C]
};

template <typename Scalar>
struct BNResult {
  Tensor<Scalar> output;
  BNState<Scalar> state;       // running estimates refreshed in Train mode
  Tensor<Scalar> batch_mean;   // [C], Train mode only
  Tensor<Scalar> batch_var;    // [C], biased, Train mode only
  BNCache<Scalar> cache;
};

template <typename Scalar>
BNResult<Scalar> bn_forward(const Tensor<Scalar>& x, const BNState<Scalar>& state, BNMode mode);

template <typename Scalar>
struct BNGrads {
  Tensor<Scalar> input;
  Tensor<Scalar> gamma;
  Tensor<Scalar> beta;
};

/// Gradient of a Train-mode forward; throws std::logic_error for an Eval cache.
template <typename Scalar>
BNGrads<Scalar> bn_backward(const Tensor<Scalar>& upstream, const BNCache<Scalar>& cache);

}  // namespace sfod
