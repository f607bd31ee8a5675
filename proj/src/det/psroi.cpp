#include "ctx3d/det/psroi.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

namespace ctx3d::det {
namespace {

struct Bin {
  std::size_t y0, y1, x0, x1;  // empty when y1 <= y0 or x1 <= x0
};

std::size_t clamp_cell(double v, std::size_t hi) {
  if (v <= 0) return 0;
  return std::min(static_cast<std::size_t>(v), hi);
}

}  // namespace

template <typename T>
nn::Var psroi_pool(nn::Tape<T>& tape, nn::Var feature, std::span<const Box> rois, int pooled_size, int stride) {
  const nn::Tensor<T>& f = tape.value(feature);
  if (f.rank() != 4 || f.dim(0) != 1) throw std::invalid_argument("psroi_pool: feature must be [1, C, H, W]");
  if (pooled_size < 1 || stride < 1) throw std::invalid_argument("psroi_pool: pooled size and stride must be >= 1");
  const auto s = static_cast<std::size_t>(pooled_size);
  if (f.dim(1) % (s * s) != 0) {
    throw std::invalid_argument("psroi_pool: channels " + std::to_string(f.dim(1)) + " not divisible by S^2 = " +
                                std::to_string(s * s));
  }
  if (rois.empty()) throw std::invalid_argument("psroi_pool: no ROIs");
  const std::size_t c_out = f.dim(1) / (s * s), h = f.dim(2), w = f.dim(3);

  auto bins = std::make_shared<std::vector<Bin>>(rois.size() * s * s);
  for (std::size_t r = 0; r < rois.size(); ++r) {
    const Box& b = rois[r];
    const double sx = b.x1 / stride, sy = b.y1 / stride;
    const double bw = (b.x2 - b.x1) / stride / static_cast<double>(s);
    const double bh = (b.y2 - b.y1) / stride / static_cast<double>(s);
    for (std::size_t i = 0; i < s; ++i) {
      const std::size_t y0 = clamp_cell(std::floor(sy + static_cast<double>(i) * bh), h);
      const std::size_t y1 = clamp_cell(std::ceil(sy + static_cast<double>(i + 1) * bh), h);
      for (std::size_t j = 0; j < s; ++j) {
        const std::size_t x0 = clamp_cell(std::floor(sx + static_cast<double>(j) * bw), w);
        const std::size_t x1 = clamp_cell(std::ceil(sx + static_cast<double>(j + 1) * bw), w);
        (*bins)[(r * s + i) * s + j] = {y0, y1, x0, x1};
      }
    }
  }

  nn::Tensor<T> out(nn::Shape{rois.size(), c_out, s, s});
  for (std::size_t r = 0; r < rois.size(); ++r) {
    for (std::size_t c = 0; c < c_out; ++c) {
      for (std::size_t bin = 0; bin < s * s; ++bin) {
        const Bin& bb = (*bins)[r * s * s + bin];
        if (bb.y1 <= bb.y0 || bb.x1 <= bb.x0) continue;
        const T* plane = f.data().data() + (c * s * s + bin) * h * w;
        T sum = 0;
        for (std::size_t y = bb.y0; y < bb.y1; ++y) {
          for (std::size_t x = bb.x0; x < bb.x1; ++x) sum += plane[y * w + x];
        }
        out[(r * c_out + c) * s * s + bin] = sum / static_cast<T>((bb.y1 - bb.y0) * (bb.x1 - bb.x0));
      }
    }
  }

  const std::size_t n_rois = rois.size();
  return tape.record(std::move(out), {feature},
                     [feature, bins, n_rois, c_out, s, h, w](const nn::Tensor<T>& gout, nn::Tape<T>& t) {
                       nn::Tensor<T>* gf = t.grad_buffer(feature);
                       for (std::size_t r = 0; r < n_rois; ++r) {
                         for (std::size_t c = 0; c < c_out; ++c) {
                           for (std::size_t bin = 0; bin < s * s; ++bin) {
                             const Bin& bb = (*bins)[r * s * s + bin];
                             if (bb.y1 <= bb.y0 || bb.x1 <= bb.x0) continue;
                             const T g = gout[(r * c_out + c) * s * s + bin] /
                                         static_cast<T>((bb.y1 - bb.y0) * (bb.x1 - bb.x0));
                             T* plane = gf->data().data() + (c * s * s + bin) * h * w;
                             for (std::size_t y = bb.y0; y < bb.y1; ++y) {
                               for (std::size_t x = bb.x0; x < bb.x1; ++x) plane[y * w + x] += g;
                             }
                           }
                         }
                       }
                     });
}

template nn::Var psroi_pool(nn::Tape<float>&, nn::Var, std::span<const Box>, int, int);
template nn::Var psroi_pool(nn::Tape<double>&, nn::Var, std::span<const Box>, int, int);

}  // namespace ctx3d::det
