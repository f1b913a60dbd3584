#include "sfod/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace sfod {
namespace {

struct ConvGeometry {
  Index batch, in_c, in_h, in_w, out_c, k_h, k_w, out_h, out_w;
  int stride, pad;
  Index patch() const { return in_c * k_h * k_w; }
  Index pixels() const { return out_h * out_w; }
};

template <typename Scalar>
ConvGeometry conv_geometry(const Tensor<Scalar>& input, const Tensor<Scalar>& kernel, int stride,
                           int pad) {
  if (input.rank() != 4 || kernel.rank() != 4) {
    throw DimensionError("conv2d: expected rank-4 input and kernel, got " +
                         shape_to_string(input.shape()) + " and " + shape_to_string(kernel.shape()));
  }
  if (stride < 1 || pad < 0) throw DimensionError("conv2d: stride must be >= 1 and pad >= 0");
  ConvGeometry g{};
  g.batch = input.dim(0);
  g.in_c = input.dim(1);
  g.in_h = input.dim(2);
  g.in_w = input.dim(3);
  g.out_c = kernel.dim(0);
  g.k_h = kernel.dim(2);
  g.k_w = kernel.dim(3);
  g.stride = stride;
  g.pad = pad;
  if (kernel.dim(1) != g.in_c) {
    throw DimensionError("conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                         " channels, input has " + std::to_string(g.in_c));
  }
  if (g.in_h + 2 * pad < g.k_h || g.in_w + 2 * pad < g.k_w) {
    throw DimensionError("conv2d: padded input " + shape_to_string(input.shape()) +
                         " smaller than kernel " + shape_to_string(kernel.shape()));
  }
  g.out_h = (g.in_h + 2 * pad - g.k_h) / stride + 1;
  g.out_w = (g.in_w + 2 * pad - g.k_w) / stride + 1;
  return g;
}

// Output columns [lo, hi) whose input column ox*stride - pad + kx is inside the image.
inline void valid_range(Index k, const ConvGeometry& g, Index extent, Index out, Index& lo, Index& hi) {
  lo = std::max<Index>(0, (g.pad - k + g.stride - 1) / g.stride);
  hi = std::min<Index>(out, (extent + g.pad - k + g.stride - 1) / g.stride);
  if (hi < lo) hi = lo;
}

// cols [patch, pixels] for one image.
template <typename Scalar>
void im2col(const Scalar* image, const ConvGeometry& g, Scalar* cols) {
  for (Index c = 0; c < g.in_c; ++c) {
    for (Index ky = 0; ky < g.k_h; ++ky) {
      for (Index kx = 0; kx < g.k_w; ++kx) {
        Scalar* row = cols + ((c * g.k_h + ky) * g.k_w + kx) * g.pixels();
        Index x_lo, x_hi;
        valid_range(kx, g, g.in_w, g.out_w, x_lo, x_hi);
        for (Index oy = 0; oy < g.out_h; ++oy) {
          const Index iy = oy * g.stride - g.pad + ky;
          Scalar* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= g.in_h) {
            std::fill(dst, dst + g.out_w, Scalar(0));
            continue;
          }
          const Scalar* src = image + (c * g.in_h + iy) * g.in_w - g.pad + kx;
          std::fill(dst, dst + x_lo, Scalar(0));
          if (g.stride == 1) {
            std::copy(src + x_lo, src + x_hi, dst + x_lo);
          } else {
            for (Index ox = x_lo; ox < x_hi; ++ox) dst[ox] = src[ox * g.stride];
          }
          std::fill(dst + x_hi, dst + g.out_w, Scalar(0));
        }
      }
    }
  }
}

template <typename Scalar>
void col2im(const Scalar* cols, const ConvGeometry& g, Scalar* image) {
  for (Index c = 0; c < g.in_c; ++c) {
    for (Index ky = 0; ky < g.k_h; ++ky) {
      for (Index kx = 0; kx < g.k_w; ++kx) {
        const Scalar* row = cols + ((c * g.k_h + ky) * g.k_w + kx) * g.pixels();
        Index x_lo, x_hi;
        valid_range(kx, g, g.in_w, g.out_w, x_lo, x_hi);
        for (Index oy = 0; oy < g.out_h; ++oy) {
          const Index iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.in_h) continue;
          const Scalar* src = row + oy * g.out_w;
          Scalar* dst = image + (c * g.in_h + iy) * g.in_w - g.pad + kx;
          if (g.stride == 1) {
            for (Index ox = x_lo; ox < x_hi; ++ox) dst[ox] += src[ox];
          } else {
            for (Index ox = x_lo; ox < x_hi; ++ox) dst[ox * g.stride] += src[ox];
          }
        }
      }
    }
  }
}

template <typename Scalar>
bool is_pointwise(const ConvGeometry& g) {
  return g.k_h == 1 && g.k_w == 1 && g.stride == 1 && g.pad == 0;
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> conv2d_forward(const Tensor<Scalar>& input, const Tensor<Scalar>& kernel,
                              const Tensor<Scalar>& bias, int stride, int pad) {
  const ConvGeometry g = conv_geometry(input, kernel, stride, pad);
  if (bias.size() != g.out_c) {
    throw DimensionError("conv2d: bias has " + std::to_string(bias.size()) + " entries, expected " +
                         std::to_string(g.out_c));
  }
  Tensor<Scalar> out({g.batch, g.out_c, g.out_h, g.out_w});
  const auto w = kernel.matrix(g.out_c, g.patch());
  RowMatrix<Scalar> cols;
  if (!is_pointwise<Scalar>(g)) cols.resize(g.patch(), g.pixels());
  for (Index n = 0; n < g.batch; ++n) {
    const Scalar* image = input.data() + n * g.in_c * g.in_h * g.in_w;
    Eigen::Map<RowMatrix<Scalar>> y(out.data() + n * g.out_c * g.pixels(), g.out_c, g.pixels());
    if (is_pointwise<Scalar>(g)) {
      Eigen::Map<const RowMatrix<Scalar>> x(image, g.in_c, g.pixels());
      y.noalias() = w * x;
    } else {
      im2col(image, g, cols.data());
      y.noalias() = w * cols;
    }
    y.colwise() += Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(bias.data(), g.out_c);
  }
  return out;
}

template <typename Scalar>
Conv2dGrads<Scalar> conv2d_backward(const Tensor<Scalar>& upstream, const Tensor<Scalar>& input,
                                    const Tensor<Scalar>& kernel, int stride, int pad, bool input_grad) {
  const ConvGeometry g = conv_geometry(input, kernel, stride, pad);
  const Shape expected{g.batch, g.out_c, g.out_h, g.out_w};
  if (upstream.shape() != expected) {
    throw DimensionError("conv2d_backward: upstream " + shape_to_string(upstream.shape()) +
                         " does not match output " + shape_to_string(expected));
  }
  Conv2dGrads<Scalar> grads{input_grad ? Tensor<Scalar>(input.shape()) : Tensor<Scalar>(),
                            Tensor<Scalar>(kernel.shape()), Tensor<Scalar>({g.out_c})};
  const auto w = kernel.matrix(g.out_c, g.patch());
  auto dw = grads.kernel.matrix(g.out_c, g.patch());
  auto db = grads.bias.matrix(g.out_c, 1);
  RowMatrix<Scalar> cols;
  if (!is_pointwise<Scalar>(g)) cols.resize(g.patch(), g.pixels());
  for (Index n = 0; n < g.batch; ++n) {
    const Scalar* image = input.data() + n * g.in_c * g.in_h * g.in_w;
    Scalar* dimage = input_grad ? grads.input.data() + n * g.in_c * g.in_h * g.in_w : nullptr;
    Eigen::Map<const RowMatrix<Scalar>> dy(upstream.data() + n * g.out_c * g.pixels(), g.out_c,
                                           g.pixels());
    db += dy.rowwise().sum();
    if (is_pointwise<Scalar>(g)) {
      Eigen::Map<const RowMatrix<Scalar>> x(image, g.in_c, g.pixels());
      Eigen::Map<RowMatrix<Scalar>> dx(dimage, input_grad ? g.in_c : 0, g.pixels());
      dw.noalias() += dy * x.transpose();
      if (input_grad) dx.noalias() = w.transpose() * dy;
    } else {
      im2col(image, g, cols.data());
      dw.noalias() += dy * cols.transpose();
      if (input_grad) {
        cols.noalias() = w.transpose() * dy;
        col2im(cols.data(), g, dimage);
      }
    }
  }
  return grads;
}

template <typename Scalar>
Tensor<Scalar> relu_forward(const Tensor<Scalar>& x) {
  Tensor<Scalar> out(x.shape());
  out.array() = x.array().max(Scalar(0));
  return out;
}

template <typename Scalar>
Tensor<Scalar> relu_backward(const Tensor<Scalar>& upstream, const Tensor<Scalar>& x) {
  if (upstream.shape() != x.shape()) {
    throw DimensionError("relu_backward: " + shape_to_string(upstream.shape()) + " vs " +
                         shape_to_string(x.shape()));
  }
  Tensor<Scalar> out(x.shape());
  out.array() = (x.array() > Scalar(0)).select(upstream.array(), Scalar(0));
  return out;
}

template <typename Scalar>
MaxPoolResult<Scalar> maxpool2_forward(const Tensor<Scalar>& x) {
  if (x.rank() != 4) throw DimensionError("maxpool2: expected NCHW, got " + shape_to_string(x.shape()));
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index oh = h / 2, ow = w / 2;
  if (oh == 0 || ow == 0) throw DimensionError("maxpool2: input too small " + shape_to_string(x.shape()));
  MaxPoolResult<Scalar> r{Tensor<Scalar>({n, c, oh, ow}), std::vector<Index>(n * c * oh * ow)};
  Index o = 0;
  for (Index plane = 0; plane < n * c; ++plane) {
    const Index base = plane * h * w;
    for (Index y = 0; y < oh; ++y) {
      for (Index xx = 0; xx < ow; ++xx, ++o) {
        Index best = base + (2 * y) * w + 2 * xx;
        for (Index dy = 0; dy < 2; ++dy) {
          for (Index dx = 0; dx < 2; ++dx) {
            const Index idx = base + (2 * y + dy) * w + 2 * xx + dx;
            if (x[idx] > x[best]) best = idx;
          }
        }
        r.output[o] = x[best];
        r.argmax[o] = best;
      }
    }
  }
  return r;
}

template <typename Scalar>
Tensor<Scalar> maxpool2_backward(const Tensor<Scalar>& upstream, std::span<const Index> argmax,
                                 const Shape& input_shape) {
  if (static_cast<Index>(argmax.size()) != upstream.size()) {
    throw DimensionError("maxpool2_backward: argmax/upstream size mismatch");
  }
  Tensor<Scalar> out(input_shape);
  for (Index i = 0; i < upstream.size(); ++i) out[argmax[i]] += upstream[i];
  return out;
}

template <typename Scalar>
Tensor<Scalar> linear_forward(const Tensor<Scalar>& x, const Tensor<Scalar>& weight,
                              const Tensor<Scalar>& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(1) ||
      bias.size() != weight.dim(0)) {
    throw DimensionError("linear: x " + shape_to_string(x.shape()) + ", weight " +
                         shape_to_string(weight.shape()) + ", bias " + shape_to_string(bias.shape()));
  }
  const Index n = x.dim(0), in = x.dim(1), out_f = weight.dim(0);
  Tensor<Scalar> out({n, out_f});
  auto y = out.matrix(n, out_f);
  y.noalias() = x.matrix(n, in) * weight.matrix(out_f, in).transpose();
  y.rowwise() += bias.matrix(1, out_f).row(0);
  return out;
}

template <typename Scalar>
LinearGrads<Scalar> linear_backward(const Tensor<Scalar>& upstream, const Tensor<Scalar>& x,
                                    const Tensor<Scalar>& weight) {
  const Index n = x.dim(0), in = x.dim(1), out_f = weight.dim(0);
  if (upstream.shape() != Shape{n, out_f}) {
    throw DimensionError("linear_backward: upstream " + shape_to_string(upstream.shape()));
  }
  LinearGrads<Scalar> g{Tensor<Scalar>(x.shape()), Tensor<Scalar>(weight.shape()),
                        Tensor<Scalar>({out_f})};
  const auto dy = upstream.matrix(n, out_f);
  g.input.matrix(n, in).noalias() = dy * weight.matrix(out_f, in);
  g.weight.matrix(out_f, in).noalias() = dy.transpose() * x.matrix(n, in);
  g.bias.matrix(1, out_f) = dy.colwise().sum();
  return g;
}

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& logits) {
  if (logits.rank() != 2) throw DimensionError("softmax: expected [N,C], got " + shape_to_string(logits.shape()));
  const Index n = logits.dim(0), c = logits.dim(1);
  Tensor<Scalar> out(logits.shape());
  const auto x = logits.matrix(n, c);
  auto p = out.matrix(n, c);
  for (Index i = 0; i < n; ++i) {
    const Scalar m = x.row(i).maxCoeff();
    p.row(i) = (x.row(i).array() - m).exp();
    p.row(i) /= p.row(i).sum();
  }
  return out;
}

template <typename Scalar>
LossAndGrad<Scalar> softmax_cross_entropy(const Tensor<Scalar>& logits, std::span<const int> labels,
                                          Scalar normalizer) {
  if (logits.rank() != 2 || logits.dim(0) != static_cast<Index>(labels.size())) {
    throw DimensionError("softmax_cross_entropy: logits " + shape_to_string(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  if (!(normalizer > 0)) throw std::invalid_argument("softmax_cross_entropy: empty target set");
  const Index n = logits.dim(0), c = logits.dim(1);
  LossAndGrad<Scalar> r{Scalar(0), Tensor<Scalar>(logits.shape())};
  const auto x = logits.matrix(n, c);
  auto g = r.grad.matrix(n, c);
  for (Index i = 0; i < n; ++i) {
    const int label = labels[static_cast<std::size_t>(i)];
    if (label == -1) continue;
    if (label < 0 || label >= c) {
      throw std::out_of_range("softmax_cross_entropy: class index " + std::to_string(label) +
                              " outside [0," + std::to_string(c) + ")");
    }
    const Scalar m = x.row(i).maxCoeff();
    const auto shifted = (x.row(i).array() - m).eval();
    const Scalar lse = std::log(shifted.exp().sum());
    r.loss += lse - shifted(label);
    g.row(i) = (shifted - lse).exp().matrix();
    g(i, label) -= Scalar(1);
  }
  r.loss /= normalizer;
  g /= normalizer;
  return r;
}

template <typename Scalar>
LossAndGrad<Scalar> softmax_cross_entropy(const Tensor<Scalar>& logits, std::span<const int> labels) {
  const auto counted = std::count_if(labels.begin(), labels.end(), [](int l) { return l != -1; });
  if (counted == 0) throw std::invalid_argument("softmax_cross_entropy: empty target set");
  return softmax_cross_entropy(logits, labels, static_cast<Scalar>(counted));
}

template <typename Scalar>
LossAndGrad<Scalar> smooth_l1(const Tensor<Scalar>& pred, const Tensor<Scalar>& target,
                              Scalar normalizer) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("smooth_l1: " + shape_to_string(pred.shape()) + " vs " +
                         shape_to_string(target.shape()));
  }
  if (!(normalizer > 0)) throw std::invalid_argument("smooth_l1: empty target set");
  LossAndGrad<Scalar> r{Scalar(0), Tensor<Scalar>(pred.shape())};
  for (Index i = 0; i < pred.size(); ++i) {
    const Scalar d = pred[i] - target[i];
    r.loss += smooth_l1_value(d);
    r.grad[i] = (d < Scalar(-1) ? Scalar(-1) : d > Scalar(1) ? Scalar(1) : d) / normalizer;
  }
  r.loss /= normalizer;
  return r;
}

template <typename Scalar>
LossAndGrad<Scalar> smooth_l1(const Tensor<Scalar>& pred, const Tensor<Scalar>& target) {
  if (pred.rank() == 0 || pred.dim(0) == 0) throw std::invalid_argument("smooth_l1: empty target set");
  return smooth_l1(pred, target, static_cast<Scalar>(pred.dim(0)));
}

#define SFOD_INSTANTIATE_OPS(S)                                                                    \
  template Tensor<S> conv2d_forward(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, int,    \
                                    int);                                                          \
  template Conv2dGrads<S> conv2d_backward(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,   \
                                          int, int, bool);                                         \
  template Tensor<S> relu_forward(const Tensor<S>&);                                               \
  template Tensor<S> relu_backward(const Tensor<S>&, const Tensor<S>&);                            \
  template MaxPoolResult<S> maxpool2_forward(const Tensor<S>&);                                    \
  template Tensor<S> maxpool2_backward(const Tensor<S>&, std::span<const Index>, const Shape&);    \
  template Tensor<S> linear_forward(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);         \
  template LinearGrads<S> linear_backward(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);   \
  template Tensor<S> softmax(const Tensor<S>&);                                                    \
  template LossAndGrad<S> softmax_cross_entropy(const Tensor<S>&, std::span<const int>, S);        \
  template LossAndGrad<S> softmax_cross_entropy(const Tensor<S>&, std::span<const int>);           \
  template LossAndGrad<S> smooth_l1(const Tensor<S>&, const Tensor<S>&, S);                        \
  template LossAndGrad<S> smooth_l1(const Tensor<S>&, const Tensor<S>&);

SFOD_INSTANTIATE_OPS(float)
SFOD_INSTANTIATE_OPS(double)

}  // namespace sfod
