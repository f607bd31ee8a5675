#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ctx3d::nn {

using Shape = std::vector<std::size_t>;

// Product of extents; throws if the shape is empty or has a zero extent.
std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array, canonical order batch x channel x height x width.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : shape_{1}, data_(1, T{0}) {}
  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size()) {
      throw std::invalid_argument("tensor: shape " + shape_str(shape_) + " does not match " +
                                  std::to_string(data_.size()) + " values");
    }
  }

  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return data_.size(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // 4-D element access (n, c, h, w).
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  T item() const {
    if (data_.size() != 1) throw std::logic_error("tensor: item() on non-scalar " + shape_str(shape_));
    return data_[0];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape shape) const {
    Tensor out(std::move(shape), data_);
    return out;
  }

  bool requires_grad = false;

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <typename U, typename T>
Tensor<U> tensor_cast(const Tensor<T>& t) {
  std::vector<U> out(t.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(t[i]);
  Tensor<U> r(t.shape(), std::move(out));
  r.requires_grad = t.requires_grad;
  return r;
}

template <typename T>
bool all_finite(const Tensor<T>& t);

}  // namespace ctx3d::nn
