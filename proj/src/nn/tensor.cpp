#include "ctx3d/nn/tensor.hpp"

#include <cmath>

namespace ctx3d::nn {

std::size_t shape_numel(const Shape& shape) {
  if (shape.empty()) throw std::invalid_argument("tensor: empty shape");
  std::size_t n = 1;
  for (std::size_t e : shape) {
    if (e == 0) throw std::invalid_argument("tensor: zero extent in shape " + shape_str(shape));
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (T v : t.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template bool all_finite(const Tensor<float>&);
template bool all_finite(const Tensor<double>&);

}  // namespace ctx3d::nn
