#include "ctx3d/nn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "ctx3d/errors.hpp"

namespace ctx3d::nn {
namespace {

struct Evaluation {
  double value;
  Tensor<double> grad;
};

Evaluation evaluate(const GradCheckFn& op, const Tensor<double>& x, std::uint64_t probe_seed, bool want_grad) {
  Tape<double> tape;
  Var xv = tape.leaf(x, true);
  Var out = op(tape, xv);
  const Tensor<double>& y = tape.value(out);
  if (!all_finite(y)) throw NumericError("grad_check: non-finite forward value");
  Var root = out;
  if (y.numel() != 1) {
    std::mt19937_64 rng(probe_seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Tensor<double> probe(y.shape());
    for (double& v : probe.data()) v = u(rng);
    double total = 0;
    for (std::size_t i = 0; i < y.numel(); ++i) total += probe[i] * y[i];
    root = tape.record(Tensor<double>::scalar(total), {out}, [out, probe](const Tensor<double>& g, Tape<double>& t) {
      Tensor<double>* gy = t.grad_buffer(out);
      for (std::size_t i = 0; i < probe.numel(); ++i) (*gy)[i] += g[0] * probe[i];
    });
  }
  Evaluation e{tape.value(root).item(), {}};
  if (want_grad) {
    tape.backward(root);
    e.grad = tape.grad(xv);
    if (!all_finite(e.grad)) throw NumericError("grad_check: non-finite analytic gradient");
  }
  return e;
}

}  // namespace

GradCheckResult grad_check(const GradCheckFn& op, const Tensor<double>& x, double epsilon,
                           std::uint64_t probe_seed) {
  const Evaluation base = evaluate(op, x, probe_seed, true);
  GradCheckResult res;
  Tensor<double> xp = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = x[i];
    xp[i] = orig + epsilon;
    const double fp = evaluate(op, xp, probe_seed, false).value;
    xp[i] = orig - epsilon;
    const double fm = evaluate(op, xp, probe_seed, false).value;
    xp[i] = orig;
    const double numeric = (fp - fm) / (2.0 * epsilon);
    if (!std::isfinite(numeric)) throw NumericError("grad_check: non-finite difference at " + std::to_string(i));
    const double analytic = base.grad[i];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    const double rel = std::abs(analytic - numeric) / denom;
    if (rel > res.max_rel_error || i == 0) {
      res = GradCheckResult{std::max(rel, res.max_rel_error), i, analytic, numeric};
    }
  }
  return res;
}

}  // namespace ctx3d::nn
