#pragma once

#include <cstdint>
#include <functional>

#include "ctx3d/nn/tape.hpp"
#include "ctx3d/nn/tensor.hpp"

namespace ctx3d::nn {

// Builds the graph under test from `x` (registered as a leaf). A non-scalar
// output is reduced by a dot product with a fixed pseudo-random probe.
using GradCheckFn = std::function<Var(Tape<double>& tape, Var x)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Central finite differences (f(x+e) - f(x-e)) / 2e per coordinate against
/// the tape gradient. Relative error uses max(|a|, |n|, 1e-8) as denominator.
/// Throws NumericError if any evaluation is non-finite.
GradCheckResult grad_check(const GradCheckFn& op, const Tensor<double>& x, double epsilon = 1e-5,
                           std::uint64_t probe_seed = 0x5eed);

}  // namespace ctx3d::nn
