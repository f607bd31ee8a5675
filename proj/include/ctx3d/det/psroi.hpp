#pragma once

#include <span>

#include "ctx3d/det/box.hpp"
#include "ctx3d/nn/tape.hpp"

namespace ctx3d::det {

/// Position-sensitive ROI average pooling.
///
/// `feature` is [1, S*S*C, H, W]. Each ROI, scaled by 1/stride into feature
/// coordinates, is split into an S x S grid; bin (i, j) of output channel c
/// averages feature channel c*S*S + i*S + j over the cells
/// [floor(start + i*bin), ceil(start + (i+1)*bin)) clipped to the map. Empty
/// bins produce 0. Output is [R, C, S, S]; the gradient is spread uniformly
/// over the averaged cells. ROI coordinates are not differentiated.
template <typename T>
nn::Var psroi_pool(nn::Tape<T>& tape, nn::Var feature, std::span<const Box> rois, int pooled_size, int stride);

}  // namespace ctx3d::det
