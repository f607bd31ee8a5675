#pragma once

#include <span>
#include <vector>

#include "ctx3d/nn/tensor.hpp"

namespace ctx3d::nn {

struct SgdOptions {
  double lr = 1e-3;
  double momentum = 0.0;
  double weight_decay = 0.0;
};

/// Momentum SGD: v <- momentum*v + (g + weight_decay*w); w <- w - lr*v.
/// `velocity` is resized on first use. Throws NumericError on a non-finite
/// gradient before touching any parameter.
template <typename T>
void sgd_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads,
              std::vector<Tensor<T>>& velocity, const SgdOptions& opts);

}  // namespace ctx3d::nn
