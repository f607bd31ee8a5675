#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ctx3d/nn/tape.hpp"
#include "ctx3d/nn/tensor.hpp"

namespace ctx3d::nn {

// 2-D convolution. input [N,Cin,H,W], weight [Cout,Cin,kh,kw], bias [Cout].
template <typename T>
Var conv2d(Tape<T>& tape, Var input, Var weight, Var bias, int stride, int pad);

// Elementwise max(0, x); the subgradient at 0 is 0.
template <typename T>
Var relu(Tape<T>& tape, Var input);

// 2x2 / stride-2 max pooling. Ties route the gradient to the first element in
// scan order. H and W must be even.
template <typename T>
Var max_pool2(Tape<T>& tape, Var input);

// input [N,K] x weight [K,L] + bias [L].
template <typename T>
Var fully_connected(Tape<T>& tape, Var input, Var weight, Var bias);

// Stacks [N,Ci,H,W] inputs along the channel axis in the given order.
template <typename T>
Var concat_channels(Tape<T>& tape, std::span<const Var> inputs);

// Mean negative log-softmax over rows whose label != ignore_label.
// Returns 0 (and no gradient) when every row is ignored.
template <typename T>
Var softmax_cross_entropy(Tape<T>& tape, Var logits, std::span<const int> labels, int ignore_label);

// Masked mean of elementwise smooth-L1 (transition at |d| = 1). The mask holds
// per-element weights; the mean divides by their sum. Empty mask gives 0.
template <typename T>
Var smooth_l1(Tape<T>& tape, Var pred, const Tensor<T>& target, const Tensor<T>& inside_mask);

template <typename T>
Var reshape(Tape<T>& tape, Var input, Shape shape);

// Picks image n of a [N,C,H,W] batch as [1,C,H,W].
template <typename T>
Var select_batch(Tape<T>& tape, Var input, std::size_t n);

// [1, A*K, H, W] -> [H*W*A, K]; row (h*W + w)*A + a, column k reads channel a*K + k.
template <typename T>
Var map_to_rows(Tape<T>& tape, Var input, std::size_t k);

// sum_i weights[i] * scalars[i].
template <typename T>
Var weighted_sum(Tape<T>& tape, std::span<const Var> scalars, std::span<const T> weights);

// Row-wise softmax of a [N,K] tensor (value only).
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits);

}  // namespace ctx3d::nn
