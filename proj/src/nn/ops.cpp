#include "ctx3d/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace ctx3d::nn {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

struct ConvGeom {
  std::size_t cin, h, w, kh, kw, ho, wo;
  int stride, pad;
};

// cols[(c*kh + i)*kw + j][oy*wo + ox] = x[c][oy*s - p + i][ox*s - p + j]
template <typename T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
  const std::size_t p = g.ho * g.wo;
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        T* row = cols + ((c * g.kh + i) * g.kw + j) * p;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(i);
          T* dst = row + oy * g.wo;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.wo, T{0});
            continue;
          }
          const T* src = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox) * g.stride - g.pad + static_cast<long>(j);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? T{0} : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeom& g, T* dx) {
  const std::size_t p = g.ho * g.wo;
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const T* row = cols + ((c * g.kh + i) * g.kw + j) * p;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(i);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          T* dst = dx + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          const T* src = row + oy * g.wo;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox) * g.stride - g.pad + static_cast<long>(j);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Var conv2d(Tape<T>& tape, Var input, Var weight, Var bias, int stride, int pad) {
  const Tensor<T>& x = tape.value(input);
  const Tensor<T>& wt = tape.value(weight);
  const Tensor<T>& b = tape.value(bias);
  require(x.rank() == 4, "conv2d: input must be 4-D, got " + shape_str(x.shape()));
  require(wt.rank() == 4, "conv2d: weight must be 4-D, got " + shape_str(wt.shape()));
  require(stride >= 1 && pad >= 0, "conv2d: stride must be >= 1 and pad >= 0");
  require(x.dim(1) == wt.dim(1), "conv2d: input has " + std::to_string(x.dim(1)) +
                                     " channels but weight expects " + std::to_string(wt.dim(1)));
  require(b.numel() == wt.dim(0), "conv2d: bias length " + std::to_string(b.numel()) +
                                      " != output channels " + std::to_string(wt.dim(0)));
  ConvGeom g{x.dim(1), x.dim(2), x.dim(3), wt.dim(2), wt.dim(3), 0, 0, stride, pad};
  require(g.kh <= g.h + 2 * static_cast<std::size_t>(pad) && g.kw <= g.w + 2 * static_cast<std::size_t>(pad),
          "conv2d: kernel larger than padded input");
  g.ho = (g.h + 2 * pad - g.kh) / stride + 1;
  g.wo = (g.w + 2 * pad - g.kw) / stride + 1;
  const std::size_t n = x.dim(0), cout = wt.dim(0), k = g.cin * g.kh * g.kw, p = g.ho * g.wo;

  Tensor<T> out(Shape{n, cout, g.ho, g.wo});
  std::vector<T> cols(k * p);
  ConstMapMat<T> wm(wt.data().data(), cout, k);
  for (std::size_t i = 0; i < n; ++i) {
    im2col(x.data().data() + i * g.cin * g.h * g.w, g, cols.data());
    MapMat<T> om(out.data().data() + i * cout * p, cout, p);
    om.noalias() = wm * ConstMapMat<T>(cols.data(), k, p);
    for (std::size_t c = 0; c < cout; ++c) om.row(c).array() += b[c];
  }

  return tape.record(std::move(out), {input, weight, bias},
                     [input, weight, bias, g, n, cout, k, p](const Tensor<T>& gout, Tape<T>& t) {
                       const Tensor<T>& x = t.value(input);
                       const Tensor<T>& wt = t.value(weight);
                       Tensor<T>* gx = t.grad_buffer(input);
                       Tensor<T>* gw = t.grad_buffer(weight);
                       Tensor<T>* gb = t.grad_buffer(bias);
                       std::vector<T> cols(k * p);
                       ConstMapMat<T> wm(wt.data().data(), cout, k);
                       for (std::size_t i = 0; i < n; ++i) {
                         ConstMapMat<T> go(gout.data().data() + i * cout * p, cout, p);
                         if (gw) {
                           im2col(x.data().data() + i * g.cin * g.h * g.w, g, cols.data());
                           MapMat<T> gwm(gw->data().data(), cout, k);
                           gwm.noalias() += go * ConstMapMat<T>(cols.data(), k, p).transpose();
                         }
                         if (gb) {
                           // sequential sum: Eigen's vectorised reduction depends on the row's alignment
                           const T* row = gout.data().data() + i * cout * p;
                           for (std::size_t c = 0; c < cout; ++c) {
                             T s = 0;
                             for (std::size_t j = 0; j < p; ++j) s += row[c * p + j];
                             (*gb)[c] += s;
                           }
                         }
                         if (gx) {
                           MapMat<T> cm(cols.data(), k, p);
                           cm.noalias() = wm.transpose() * go;
                           col2im_add(cols.data(), g, gx->data().data() + i * g.cin * g.h * g.w);
                         }
                       }
                     });
}

template <typename T>
Var relu(Tape<T>& tape, Var input) {
  const Tensor<T>& x = tape.value(input);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > T{0} ? x[i] : T{0};
  return tape.record(std::move(out), {input}, [input](const Tensor<T>& gout, Tape<T>& t) {
    const Tensor<T>& x = t.value(input);
    Tensor<T>* gx = t.grad_buffer(input);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      if (x[i] > T{0}) (*gx)[i] += gout[i];
    }
  });
}

template <typename T>
Var max_pool2(Tape<T>& tape, Var input) {
  const Tensor<T>& x = tape.value(input);
  require(x.rank() == 4, "max_pool2: input must be 4-D");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  require(h % 2 == 0 && w % 2 == 0,
          "max_pool2: spatial extents must be even, got " + shape_str(x.shape()));
  const std::size_t ho = h / 2, wo = w / 2;
  Tensor<T> out(Shape{n, c, ho, wo});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j, ++o) {
        std::size_t best = base + (2 * i) * w + 2 * j;
        const std::size_t cand[3] = {best + 1, best + w, best + w + 1};
        for (std::size_t q : cand) {
          if (x[q] > x[best]) best = q;
        }
        out[o] = x[best];
        (*argmax)[o] = best;
      }
    }
  }
  return tape.record(std::move(out), {input}, [input, argmax](const Tensor<T>& gout, Tape<T>& t) {
    Tensor<T>* gx = t.grad_buffer(input);
    for (std::size_t i = 0; i < gout.numel(); ++i) (*gx)[(*argmax)[i]] += gout[i];
  });
}

template <typename T>
Var fully_connected(Tape<T>& tape, Var input, Var weight, Var bias) {
  const Tensor<T>& x = tape.value(input);
  const Tensor<T>& wt = tape.value(weight);
  const Tensor<T>& b = tape.value(bias);
  require(x.rank() == 2 && wt.rank() == 2, "fully_connected: input and weight must be 2-D");
  require(x.dim(1) == wt.dim(0), "fully_connected: inner dimensions differ (" + shape_str(x.shape()) +
                                     " x " + shape_str(wt.shape()) + ")");
  require(b.numel() == wt.dim(1), "fully_connected: bias length mismatch");
  const std::size_t n = x.dim(0), k = x.dim(1), l = wt.dim(1);
  Tensor<T> out(Shape{n, l});
  MapMat<T> om(out.data().data(), n, l);
  om.noalias() = ConstMapMat<T>(x.data().data(), n, k) * ConstMapMat<T>(wt.data().data(), k, l);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < l; ++c) om(r, c) += b[c];
  }
  return tape.record(std::move(out), {input, weight, bias},
                     [input, weight, bias, n, k, l](const Tensor<T>& gout, Tape<T>& t) {
                       ConstMapMat<T> go(gout.data().data(), n, l);
                       if (Tensor<T>* gx = t.grad_buffer(input)) {
                         MapMat<T>(gx->data().data(), n, k).noalias() +=
                             go * ConstMapMat<T>(t.value(weight).data().data(), k, l).transpose();
                       }
                       if (Tensor<T>* gw = t.grad_buffer(weight)) {
                         MapMat<T>(gw->data().data(), k, l).noalias() +=
                             ConstMapMat<T>(t.value(input).data().data(), n, k).transpose() * go;
                       }
                       if (Tensor<T>* gb = t.grad_buffer(bias)) {
                         for (std::size_t r = 0; r < n; ++r) {
                           for (std::size_t c = 0; c < l; ++c) (*gb)[c] += go(r, c);
                         }
                       }
                     });
}

template <typename T>
Var concat_channels(Tape<T>& tape, std::span<const Var> inputs) {
  require(!inputs.empty(), "concat_channels: no inputs");
  const Shape& s0 = tape.shape(inputs[0]);
  require(s0.size() == 4, "concat_channels: inputs must be 4-D");
  std::size_t total_c = 0;
  for (Var v : inputs) {
    const Shape& s = tape.shape(v);
    require(s.size() == 4 && s[0] == s0[0] && s[2] == s0[2] && s[3] == s0[3],
            "concat_channels: input " + shape_str(s) + " does not match " + shape_str(s0) +
                " in batch/spatial extents");
    total_c += s[1];
  }
  const std::size_t n = s0[0], hw = s0[2] * s0[3];
  Tensor<T> out(Shape{n, total_c, s0[2], s0[3]});
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (Var v : inputs) {
    const Tensor<T>& x = tape.value(v);
    const std::size_t c = x.dim(1);
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(x.data().data() + i * c * hw, c * hw, out.data().data() + (i * total_c + off) * hw);
    }
    offsets.push_back(off);
    off += c;
  }
  std::vector<Var> ins(inputs.begin(), inputs.end());
  return tape.record(std::move(out), inputs,
                     [ins, offsets, n, hw, total_c](const Tensor<T>& gout, Tape<T>& t) {
                       for (std::size_t q = 0; q < ins.size(); ++q) {
                         Tensor<T>* gx = t.grad_buffer(ins[q]);
                         if (!gx) continue;
                         const std::size_t c = gx->dim(1);
                         for (std::size_t i = 0; i < n; ++i) {
                           const T* src = gout.data().data() + (i * total_c + offsets[q]) * hw;
                           T* dst = gx->data().data() + i * c * hw;
                           for (std::size_t e = 0; e < c * hw; ++e) dst[e] += src[e];
                         }
                       }
                     });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  require(logits.rank() == 2, "softmax_rows: logits must be 2-D");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor<T> p(logits.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const T* z = logits.data().data() + r * k;
    T* pr = p.data().data() + r * k;
    const T m = *std::max_element(z, z + k);
    T sum = 0;
    for (std::size_t c = 0; c < k; ++c) {
      pr[c] = std::exp(z[c] - m);
      sum += pr[c];
    }
    for (std::size_t c = 0; c < k; ++c) pr[c] /= sum;
  }
  return p;
}

template <typename T>
Var softmax_cross_entropy(Tape<T>& tape, Var logits, std::span<const int> labels, int ignore_label) {
  const Tensor<T>& z = tape.value(logits);
  require(z.rank() == 2, "softmax_cross_entropy: logits must be 2-D");
  const std::size_t n = z.dim(0), k = z.dim(1);
  require(labels.size() == n, "softmax_cross_entropy: label count " + std::to_string(labels.size()) +
                                  " != rows " + std::to_string(n));
  std::size_t count = 0;
  for (int l : labels) {
    if (l == ignore_label) continue;
    require(l >= 0 && static_cast<std::size_t>(l) < k,
            "softmax_cross_entropy: label " + std::to_string(l) + " out of range");
    ++count;
  }
  if (count == 0) return tape.constant(Tensor<T>::scalar(T{0}));

  T loss = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] == ignore_label) continue;
    const T* zr = z.data().data() + r * k;
    const T m = *std::max_element(zr, zr + k);
    T sum = 0;
    for (std::size_t c = 0; c < k; ++c) sum += std::exp(zr[c] - m);
    loss += m + std::log(sum) - zr[labels[r]];
  }
  loss /= static_cast<T>(count);
  std::vector<int> lab(labels.begin(), labels.end());
  return tape.record(Tensor<T>::scalar(loss), {logits},
                     [logits, lab, ignore_label, count, k](const Tensor<T>& gout, Tape<T>& t) {
                       const Tensor<T> p = softmax_rows(t.value(logits));
                       Tensor<T>* gz = t.grad_buffer(logits);
                       const T scale = gout[0] / static_cast<T>(count);
                       for (std::size_t r = 0; r < lab.size(); ++r) {
                         if (lab[r] == ignore_label) continue;
                         for (std::size_t c = 0; c < k; ++c) {
                           const T onehot = static_cast<int>(c) == lab[r] ? T{1} : T{0};
                           (*gz)[r * k + c] += scale * (p[r * k + c] - onehot);
                         }
                       }
                     });
}

template <typename T>
Var smooth_l1(Tape<T>& tape, Var pred, const Tensor<T>& target, const Tensor<T>& inside_mask) {
  const Tensor<T>& x = tape.value(pred);
  require(x.shape() == target.shape() && x.shape() == inside_mask.shape(),
          "smooth_l1: pred " + shape_str(x.shape()) + ", target " + shape_str(target.shape()) +
              " and mask " + shape_str(inside_mask.shape()) + " must agree");
  T weight = 0;
  for (T m : inside_mask.data()) weight += m;
  if (weight <= T{0}) return tape.constant(Tensor<T>::scalar(T{0}));
  T loss = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    if (inside_mask[i] == T{0}) continue;
    const T d = std::abs(x[i] - target[i]);
    loss += inside_mask[i] * (d < T{1} ? T{0.5} * d * d : d - T{0.5});
  }
  loss /= weight;
  return tape.record(Tensor<T>::scalar(loss), {pred},
                     [pred, target, inside_mask, weight](const Tensor<T>& gout, Tape<T>& t) {
                       const Tensor<T>& x = t.value(pred);
                       Tensor<T>* gx = t.grad_buffer(pred);
                       const T scale = gout[0] / weight;
                       for (std::size_t i = 0; i < x.numel(); ++i) {
                         if (inside_mask[i] == T{0}) continue;
                         const T d = x[i] - target[i];
                         const T slope = std::abs(d) < T{1} ? d : (d > T{0} ? T{1} : T{-1});
                         (*gx)[i] += scale * inside_mask[i] * slope;
                       }
                     });
}

template <typename T>
Var reshape(Tape<T>& tape, Var input, Shape shape) {
  const Tensor<T>& x = tape.value(input);
  require(shape_numel(shape) == x.numel(),
          "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  return tape.record(x.reshaped(std::move(shape)), {input}, [input](const Tensor<T>& gout, Tape<T>& t) {
    Tensor<T>* gx = t.grad_buffer(input);
    for (std::size_t i = 0; i < gout.numel(); ++i) (*gx)[i] += gout[i];
  });
}

template <typename T>
Var select_batch(Tape<T>& tape, Var input, std::size_t n) {
  const Tensor<T>& x = tape.value(input);
  require(x.rank() == 4 && n < x.dim(0), "select_batch: index out of range");
  const std::size_t len = x.numel() / x.dim(0);
  Tensor<T> out(Shape{1, x.dim(1), x.dim(2), x.dim(3)});
  std::copy_n(x.data().data() + n * len, len, out.data().data());
  return tape.record(std::move(out), {input}, [input, n, len](const Tensor<T>& gout, Tape<T>& t) {
    Tensor<T>* gx = t.grad_buffer(input);
    T* dst = gx->data().data() + n * len;
    for (std::size_t i = 0; i < len; ++i) dst[i] += gout[i];
  });
}

template <typename T>
Var map_to_rows(Tape<T>& tape, Var input, std::size_t k) {
  const Tensor<T>& x = tape.value(input);
  require(x.rank() == 4 && x.dim(0) == 1, "map_to_rows: input must be [1,C,H,W]");
  require(k >= 1 && x.dim(1) % k == 0, "map_to_rows: channels not divisible by group size");
  const std::size_t a_count = x.dim(1) / k, h = x.dim(2), w = x.dim(3), hw = h * w;
  Tensor<T> out(Shape{hw * a_count, k});
  // Row index r = cell*A + a; source channel a*K + kk at that cell.
  auto index = [=](std::size_t cell, std::size_t a, std::size_t kk) { return (a * k + kk) * hw + cell; };
  for (std::size_t cell = 0; cell < hw; ++cell) {
    for (std::size_t a = 0; a < a_count; ++a) {
      for (std::size_t kk = 0; kk < k; ++kk) out[(cell * a_count + a) * k + kk] = x[index(cell, a, kk)];
    }
  }
  return tape.record(std::move(out), {input}, [input, index, hw, a_count, k](const Tensor<T>& gout, Tape<T>& t) {
    Tensor<T>* gx = t.grad_buffer(input);
    for (std::size_t cell = 0; cell < hw; ++cell) {
      for (std::size_t a = 0; a < a_count; ++a) {
        for (std::size_t kk = 0; kk < k; ++kk) (*gx)[index(cell, a, kk)] += gout[(cell * a_count + a) * k + kk];
      }
    }
  });
}

template <typename T>
Var weighted_sum(Tape<T>& tape, std::span<const Var> scalars, std::span<const T> weights) {
  require(scalars.size() == weights.size(), "weighted_sum: size mismatch");
  T total = 0;
  for (std::size_t i = 0; i < scalars.size(); ++i) total += weights[i] * tape.value(scalars[i]).item();
  std::vector<Var> vars(scalars.begin(), scalars.end());
  std::vector<T> ws(weights.begin(), weights.end());
  return tape.record(Tensor<T>::scalar(total), scalars, [vars, ws](const Tensor<T>& gout, Tape<T>& t) {
    for (std::size_t i = 0; i < vars.size(); ++i) {
      if (Tensor<T>* g = t.grad_buffer(vars[i])) (*g)[0] += ws[i] * gout[0];
    }
  });
}

#define CTX3D_INSTANTIATE_OPS(T)                                                        \
  template Var conv2d(Tape<T>&, Var, Var, Var, int, int);                               \
  template Var relu(Tape<T>&, Var);                                                     \
  template Var max_pool2(Tape<T>&, Var);                                                \
  template Var fully_connected(Tape<T>&, Var, Var, Var);                                \
  template Var concat_channels(Tape<T>&, std::span<const Var>);                         \
  template Var softmax_cross_entropy(Tape<T>&, Var, std::span<const int>, int);         \
  template Var smooth_l1(Tape<T>&, Var, const Tensor<T>&, const Tensor<T>&);            \
  template Var reshape(Tape<T>&, Var, Shape);                                           \
  template Var select_batch(Tape<T>&, Var, std::size_t);                                \
  template Var map_to_rows(Tape<T>&, Var, std::size_t);                                 \
  template Var weighted_sum(Tape<T>&, std::span<const Var>, std::span<const T>);        \
  template Tensor<T> softmax_rows(const Tensor<T>&);

CTX3D_INSTANTIATE_OPS(float)
CTX3D_INSTANTIATE_OPS(double)

}  // namespace ctx3d::nn
