#include "sfod/tensor.hpp"

namespace sfod {

std::string shape_to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d < 0) throw DimensionError("negative dimension in " + shape_to_string(shape));
    n *= d;
  }
  return n;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace sfod
