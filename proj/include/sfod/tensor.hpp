#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace sfod {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

/// Raised when operand shapes do not agree with an operation's contract.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a non-finite value shows up where a finite one is required.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string shape_to_string(const Shape& shape);
Index shape_numel(const Shape& shape);

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense row-major n-dimensional array. Images and activations use NCHW.
template <typename Scalar>
class Tensor {
 public:
  using ArrayType = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

  Tensor() = default;
  explicit Tensor(Shape shape, Scalar fill = Scalar(0))
      : shape_(std::move(shape)), data_(ArrayType::Constant(shape_numel(shape_), fill)) {}
  Tensor(Shape shape, std::initializer_list<Scalar> values) : Tensor(std::move(shape)) {
    if (static_cast<Index>(values.size()) != size()) {
      throw DimensionError("tensor: " + std::to_string(values.size()) +
                           " values for shape " + shape_to_string(shape_));
    }
    std::copy(values.begin(), values.end(), data_.data());
  }

  static Tensor from_vector(Shape shape, const std::vector<Scalar>& values) {
    Tensor t(std::move(shape));
    if (static_cast<Index>(values.size()) != t.size()) {
      throw DimensionError("tensor: " + std::to_string(values.size()) +
                           " values for shape " + shape_to_string(t.shape_));
    }
    std::copy(values.begin(), values.end(), t.data_.data());
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> values() { return {data_.data(), static_cast<std::size_t>(data_.size())}; }
  std::span<const Scalar> values() const {
    return {data_.data(), static_cast<std::size_t>(data_.size())};
  }

  ArrayType& array() { return data_; }
  const ArrayType& array() const { return data_; }

  /// Row-major matrix view over the whole buffer.
  MatrixMap matrix(Index rows, Index cols) {
    check_view(rows, cols);
    return MatrixMap(data_.data(), rows, cols);
  }
  ConstMatrixMap matrix(Index rows, Index cols) const {
    check_view(rows, cols);
    return ConstMatrixMap(data_.data(), rows, cols);
  }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Scalar& operator()(Index n, Index c, Index h, Index w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  Scalar operator()(Index n, Index c, Index h, Index w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  /// Metadata-only reshape; the buffer is untouched.
  Tensor& reshape(Shape shape) {
    if (shape_numel(shape) != size()) {
      throw DimensionError("reshape: " + shape_to_string(shape_) + " -> " + shape_to_string(shape));
    }
    shape_ = std::move(shape);
    return *this;
  }
  Tensor reshaped(Shape shape) const {
    Tensor out = *this;
    out.reshape(std::move(shape));
    return out;
  }

  /// Copies items [begin, end) along the leading axis.
  Tensor slice(Index begin, Index end) const {
    if (rank() == 0 || begin < 0 || end > shape_[0] || begin > end) {
      throw DimensionError("slice: [" + std::to_string(begin) + "," + std::to_string(end) +
                           ") out of " + shape_to_string(shape_));
    }
    Shape s = shape_;
    s[0] = end - begin;
    Tensor out(s);
    const Index stride = shape_[0] == 0 ? 0 : size() / shape_[0];
    out.data_ = data_.segment(begin * stride, (end - begin) * stride);
    return out;
  }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out(shape_);
    out.array() = data_.template cast<Other>();
    return out;
  }

  bool all_finite() const { return data_.allFinite(); }

  /// Throws NumericalError naming `what` if any entry is NaN or infinite.
  void require_finite(const std::string& what) const {
    if (!all_finite()) throw NumericalError(what + ": non-finite value");
  }

  void fill(Scalar v) { data_.setConstant(v); }

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && (data_ == other.data_).all();
  }

 private:
  void check_view(Index rows, Index cols) const {
    if (rows * cols != size()) {
      throw DimensionError("matrix view " + std::to_string(rows) + "x" + std::to_string(cols) +
                           " over " + shape_to_string(shape_));
    }
  }

  Shape shape_;
  ArrayType data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace sfod
