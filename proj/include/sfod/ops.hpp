#pragma once

#include <span>
#include <vector>

#include "sfod/tensor.hpp"

namespace sfod {

// Forward/backward kernels. All take NCHW tensors (or N x features for the
// dense ones) and are instantiated for float (training) and double
// (gradient checking).

template <typename Scalar>
struct Conv2dGrads {
  Tensor<Scalar> input;
  Tensor<Scalar> kernel;
  Tensor<Scalar> bias;
};

/// input [N,C,H,W], kernel [O,C,KH,KW], bias [O] -> [N,O,Ho,Wo].
template <typename Scalar>
Tensor<Scalar> conv2d_forward(const Tensor<Scalar>& input, const Tensor<Scalar>& kernel,
                              const Tensor<Scalar>& bias, int stride, int pad);

/// With `input_grad` false the returned input gradient is left empty.
template <typename Scalar>
Conv2dGrads<Scalar> conv2d_backward(const Tensor<Scalar>& upstream, const Tensor<Scalar>& input,
                                    const Tensor<Scalar>& kernel, int stride, int pad,
                                    bool input_grad = true);

template <typename Scalar>
Tensor<Scalar> relu_forward(const Tensor<Scalar>& x);

template <typename Scalar>
Tensor<Scalar> relu_backward(const Tensor<Scalar>& upstream, const Tensor<Scalar>& x);

template <typename Scalar>
struct MaxPoolResult {
  Tensor<Scalar> output;
  std::vector<Index> argmax;  // flat input index per output element
};

/// 2x2 window, stride 2; odd trailing rows/cols are dropped.
template <typename Scalar>
MaxPoolResult<Scalar> maxpool2_forward(const Tensor<Scalar>& x);

template <typename Scalar>
Tensor<Scalar> maxpool2_backward(const Tensor<Scalar>& upstream, std::span<const Index> argmax,
                                 const Shape& input_shape);

template <typename Scalar>
struct LinearGrads {
  Tensor<Scalar> input;
  Tensor<Scalar> weight;
  Tensor<Scalar> bias;
};

/// x [N,in], weight [out,in], bias [out] -> [N,out].
template <typename Scalar>
Tensor<Scalar> linear_forward(const Tensor<Scalar>& x, const Tensor<Scalar>& weight,
                              const Tensor<Scalar>& bias);

template <typename Scalar>
LinearGrads<Scalar> linear_backward(const Tensor<Scalar>& upstream, const Tensor<Scalar>& x,
                                    const Tensor<Scalar>& weight);

template <typename Scalar>
struct LossAndGrad {
  Scalar loss = 0;
  Tensor<Scalar> grad;
};

/// Mean-free softmax cross-entropy over rows of `logits` [N,C]:
/// sum_i -log softmax(logits_i)[labels_i] / normalizer.
/// A label of -1 marks a row that contributes nothing.
template <typename Scalar>
LossAndGrad<Scalar> softmax_cross_entropy(const Tensor<Scalar>& logits, std::span<const int> labels,
                                          Scalar normalizer);

/// Convenience overload normalizing by the number of labelled rows.
template <typename Scalar>
LossAndGrad<Scalar> softmax_cross_entropy(const Tensor<Scalar>& logits, std::span<const int> labels);

/// Row-wise softmax of [N,C].
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& logits);

/// Elementwise smooth L1 with unit threshold, summed then divided by `normalizer`.
template <typename Scalar>
LossAndGrad<Scalar> smooth_l1(const Tensor<Scalar>& pred, const Tensor<Scalar>& target,
                              Scalar normalizer);

/// Normalizes by the number of rows (boxes) in `pred`.
template <typename Scalar>
LossAndGrad<Scalar> smooth_l1(const Tensor<Scalar>& pred, const Tensor<Scalar>& target);

template <typename Scalar>
inline Scalar smooth_l1_value(Scalar d) {
  const Scalar a = d < 0 ? -d : d;
  return a < Scalar(1) ? Scalar(0.5) * d * d : a - Scalar(0.5);
}

}  // namespace sfod
