#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "ctx3d/det/box.hpp"

namespace ctx3d::det {

double intersection_area(const Box& a, const Box& b);
// |a ∩ b| / |a ∪ b|; 0 for disjoint boxes.
double iou(const Box& a, const Box& b);
// |gt ∩ det| / |det|.
double iobb(const Box& gt, const Box& det);

/// Anchor tiling. `ratios` are height/width; "scale" is sqrt(area) in pixels.
struct AnchorConfig {
  std::vector<double> scales{16, 24, 32, 48, 96};
  std::vector<double> ratios{0.5, 1.0, 2.0};
  int stride = 8;

  std::size_t per_cell() const { return scales.size() * ratios.size(); }
  void validate() const;
};

// Row-major over cells; within a cell scale-major, then ratio.
std::vector<Box> generate_anchors(const AnchorConfig& cfg, int feat_h, int feat_w);

using Deltas = std::array<double, 4>;  // tx, ty, tw, th

Deltas encode_bbox(const Box& gt, const Box& anchor);
// Inverse of encode_bbox, without clipping.
Box apply_deltas(const Deltas& d, const Box& anchor);
// apply_deltas followed by clipping to [0, image_w] x [0, image_h].
Box decode_bbox(const Deltas& d, const Box& anchor, double image_w, double image_h);
Box clip_box(const Box& b, double image_w, double image_h);

// Greedy suppression: keep the best remaining detection, drop every other with
// IoU > overlap_thresh. Output sorted by score (ties: earlier input first).
std::vector<Detection> nms(std::span<const Detection> dets, double overlap_thresh);
// Index form used by proposal generation.
std::vector<std::size_t> nms_indices(std::span<const Box> boxes, std::span<const double> scores,
                                     double overlap_thresh, std::size_t max_keep = SIZE_MAX);

using Rng = std::mt19937_64;

struct RpnTargetConfig {
  double positive_iou = 0.7;
  double negative_iou = 0.3;
  int batch_size = 256;
  double fg_fraction = 0.5;
};

struct RpnTargets {
  std::vector<int> labels;  // 1 positive, 0 negative, -1 ignored
  std::vector<Deltas> deltas;
};

// Anchors crossing the image boundary are ignored. Positive when IoU >= 0.7
// with some gt or the best anchor for some gt; negative when max IoU < 0.3.
// At most batch_size anchors are sampled, up to half positive.
RpnTargets assign_rpn_targets(std::span<const Box> anchors, std::span<const Box> gt_boxes, double image_w,
                              double image_h, const RpnTargetConfig& cfg, Rng& rng);

struct ProposalConfig {
  int pre_nms_top_n = 6000;
  int post_nms_top_n = 300;
  double nms_thresh = 0.7;
  double min_size = 4.0;
};

struct Proposal {
  Box box;
  double score = 0;
};

// Decode, clip, drop boxes with a side under min_size, keep the top pre_nms_n
// by score, NMS, keep the top post_nms_n. Ties resolve by anchor index.
std::vector<Proposal> propose(std::span<const double> fg_scores, std::span<const Deltas> deltas,
                              std::span<const Box> anchors, double image_w, double image_h,
                              const ProposalConfig& cfg);

struct RoiSamplingConfig {
  int batch_size = 128;
  double fg_fraction = 0.25;
  double fg_iou = 0.5;
  double bg_iou_hi = 0.5;
  double bg_iou_lo = 0.1;
  bool append_gt = true;
};

struct RoiSample {
  std::vector<Box> rois;
  std::vector<int> labels;  // 1 lesion, 0 background
  std::vector<Deltas> deltas;  // meaningful for foreground rows only
};

// Foreground rows first, then background.
RoiSample sample_rois(std::span<const Box> proposals, std::span<const Box> gt_boxes, const RoiSamplingConfig& cfg,
                      Rng& rng);

}  // namespace ctx3d::det
