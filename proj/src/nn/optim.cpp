#include "ctx3d/nn/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "ctx3d/errors.hpp"

namespace ctx3d::nn {

template <typename T>
void sgd_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads,
              std::vector<Tensor<T>>& velocity, const SgdOptions& opts) {
  if (!(opts.lr > 0.0)) throw std::invalid_argument("sgd_step: learning rate must be positive");
  if (params.size() != grads.size()) throw std::invalid_argument("sgd_step: params/grads size mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].shape() != params[i]->shape()) {
      throw std::invalid_argument("sgd_step: gradient shape mismatch for parameter " + std::to_string(i));
    }
    if (!all_finite(grads[i])) {
      throw NumericError("sgd_step: non-finite gradient in parameter " + std::to_string(i));
    }
  }
  if (velocity.size() != params.size()) {
    velocity.clear();
    for (Tensor<T>* p : params) velocity.emplace_back(p->shape());
  }
  const T lr = static_cast<T>(opts.lr), mu = static_cast<T>(opts.momentum),
          wd = static_cast<T>(opts.weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& w = *params[i];
    Tensor<T>& v = velocity[i];
    const Tensor<T>& g = grads[i];
    for (std::size_t j = 0; j < w.numel(); ++j) {
      v[j] = mu * v[j] + g[j] + wd * w[j];
      w[j] -= lr * v[j];
    }
  }
}

template void sgd_step(std::span<Tensor<float>* const>, std::span<const Tensor<float>>,
                       std::vector<Tensor<float>>&, const SgdOptions&);
template void sgd_step(std::span<Tensor<double>* const>, std::span<const Tensor<double>>,
                       std::vector<Tensor<double>>&, const SgdOptions&);

}  // namespace ctx3d::nn
