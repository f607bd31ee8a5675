#include "ctx3d/det/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace ctx3d::det {
namespace {

// Deterministic partial Fisher-Yates: moves a uniform k-subset to the front.
void choose_front(std::vector<std::size_t>& idx, std::size_t k, Rng& rng) {
  k = std::min(k, idx.size());
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (idx.size() - i));
    std::swap(idx[i], idx[j]);
  }
}

// Largest tw/th accepted when decoding; keeps exp() bounded.
const double kMaxLogScale = std::log(1000.0 / 16.0);

std::vector<std::size_t> order_by_score(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace

double intersection_area(const Box& a, const Box& b) {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  return (w > 0 && h > 0) ? w * h : 0.0;
}

double iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  if (inter <= 0) return 0.0;
  return inter / (a.area() + b.area() - inter);
}

double iobb(const Box& gt, const Box& det) {
  const double inter = intersection_area(gt, det);
  if (inter <= 0) return 0.0;
  return inter / det.area();
}

void AnchorConfig::validate() const {
  if (scales.empty() || ratios.empty()) throw std::invalid_argument("anchors: scales and ratios must be non-empty");
  for (std::size_t i = 1; i < scales.size(); ++i) {
    if (!(scales[i] > scales[i - 1])) throw std::invalid_argument("anchors: scales must be strictly increasing");
  }
  for (double s : scales) {
    if (!(s > 0)) throw std::invalid_argument("anchors: scales must be positive");
  }
  for (double r : ratios) {
    if (!(r > 0)) throw std::invalid_argument("anchors: ratios must be positive");
  }
  if (stride < 1) throw std::invalid_argument("anchors: stride must be >= 1");
}

std::vector<Box> generate_anchors(const AnchorConfig& cfg, int feat_h, int feat_w) {
  cfg.validate();
  if (feat_h < 1 || feat_w < 1) throw std::invalid_argument("generate_anchors: feature dims must be positive");
  // Shapes shared by every cell: area scale^2, height/width = ratio.
  std::vector<std::pair<double, double>> half_wh;
  for (double s : cfg.scales) {
    for (double r : cfg.ratios) {
      const double w = s / std::sqrt(r);
      const double h = s * std::sqrt(r);
      half_wh.emplace_back(0.5 * w, 0.5 * h);
    }
  }
  std::vector<Box> anchors;
  anchors.reserve(static_cast<std::size_t>(feat_h) * feat_w * half_wh.size());
  for (int i = 0; i < feat_h; ++i) {
    const double cy = (i + 0.5) * cfg.stride;
    for (int j = 0; j < feat_w; ++j) {
      const double cx = (j + 0.5) * cfg.stride;
      for (const auto& [hw, hh] : half_wh) anchors.push_back({cx - hw, cy - hh, cx + hw, cy + hh});
    }
  }
  return anchors;
}

Deltas encode_bbox(const Box& gt, const Box& anchor) {
  return {(gt.cx() - anchor.cx()) / anchor.width(), (gt.cy() - anchor.cy()) / anchor.height(),
          std::log(gt.width() / anchor.width()), std::log(gt.height() / anchor.height())};
}

Box apply_deltas(const Deltas& d, const Box& anchor) {
  const double cx = anchor.cx() + d[0] * anchor.width();
  const double cy = anchor.cy() + d[1] * anchor.height();
  const double w = anchor.width() * std::exp(std::min(d[2], kMaxLogScale));
  const double h = anchor.height() * std::exp(std::min(d[3], kMaxLogScale));
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

Box clip_box(const Box& b, double image_w, double image_h) {
  return {std::clamp(b.x1, 0.0, image_w), std::clamp(b.y1, 0.0, image_h), std::clamp(b.x2, 0.0, image_w),
          std::clamp(b.y2, 0.0, image_h)};
}

Box decode_bbox(const Deltas& d, const Box& anchor, double image_w, double image_h) {
  return clip_box(apply_deltas(d, anchor), image_w, image_h);
}

std::vector<std::size_t> nms_indices(std::span<const Box> boxes, std::span<const double> scores,
                                     double overlap_thresh, std::size_t max_keep) {
  if (boxes.size() != scores.size()) throw std::invalid_argument("nms: boxes/scores size mismatch");
  const auto order = order_by_score(scores);
  // Score-ordered structure of arrays; same arithmetic as iou().
  const std::size_t n = order.size();
  std::vector<double> x1(n), y1(n), x2(n), y2(n), area(n);
  for (std::size_t q = 0; q < n; ++q) {
    const Box& b = boxes[order[q]];
    x1[q] = b.x1, y1[q] = b.y1, x2[q] = b.x2, y2[q] = b.y2, area[q] = b.area();
  }
  std::vector<unsigned char> suppressed(n, 0);
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < n && keep.size() < max_keep; ++i) {
    if (suppressed[i]) continue;
    keep.push_back(order[i]);
    for (std::size_t j = i + 1; j < n; ++j) {
      const double w = std::max(0.0, std::min(x2[i], x2[j]) - std::max(x1[i], x1[j]));
      const double h = std::max(0.0, std::min(y2[i], y2[j]) - std::max(y1[i], y1[j]));
      const double inter = w * h;
      const double overlap = inter > 0 ? inter / (area[i] + area[j] - inter) : 0.0;
      suppressed[j] |= static_cast<unsigned char>(overlap > overlap_thresh);
    }
  }
  return keep;
}

std::vector<Detection> nms(std::span<const Detection> dets, double overlap_thresh) {
  std::vector<Box> boxes;
  std::vector<double> scores;
  for (const auto& d : dets) {
    if (!std::isfinite(d.score)) throw std::invalid_argument("nms: non-finite score");
    boxes.push_back(d.box);
    scores.push_back(d.score);
  }
  std::vector<Detection> out;
  for (std::size_t i : nms_indices(boxes, scores, overlap_thresh)) out.push_back(dets[i]);
  return out;
}

RpnTargets assign_rpn_targets(std::span<const Box> anchors, std::span<const Box> gt_boxes, double image_w,
                              double image_h, const RpnTargetConfig& cfg, Rng& rng) {
  const std::size_t n = anchors.size();
  RpnTargets t;
  t.labels.assign(n, -1);
  t.deltas.assign(n, Deltas{0, 0, 0, 0});

  std::vector<std::size_t> inside;
  for (std::size_t i = 0; i < n; ++i) {
    const Box& a = anchors[i];
    if (a.x1 >= 0 && a.y1 >= 0 && a.x2 <= image_w && a.y2 <= image_h) inside.push_back(i);
  }

  if (gt_boxes.empty()) {
    for (std::size_t i : inside) t.labels[i] = 0;
  } else {
    std::vector<double> max_ov(n, 0.0), gt_max(gt_boxes.size(), 0.0);
    std::vector<std::size_t> argmax(n, 0);
    std::vector<double> ov(inside.size() * gt_boxes.size());
    for (std::size_t q = 0; q < inside.size(); ++q) {
      const std::size_t i = inside[q];
      for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
        const double v = iou(anchors[i], gt_boxes[g]);
        ov[q * gt_boxes.size() + g] = v;
        if (v > max_ov[i]) {
          max_ov[i] = v;
          argmax[i] = g;
        }
        gt_max[g] = std::max(gt_max[g], v);
      }
    }
    for (std::size_t i : inside) {
      if (max_ov[i] < cfg.negative_iou) t.labels[i] = 0;
    }
    for (std::size_t q = 0; q < inside.size(); ++q) {
      for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
        if (gt_max[g] > 0 && ov[q * gt_boxes.size() + g] == gt_max[g]) t.labels[inside[q]] = 1;
      }
    }
    for (std::size_t i : inside) {
      if (max_ov[i] >= cfg.positive_iou) t.labels[i] = 1;
      t.deltas[i] = encode_bbox(gt_boxes[argmax[i]], anchors[i]);
    }
  }

  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < n; ++i) {
    if (t.labels[i] == 1) pos.push_back(i);
    if (t.labels[i] == 0) neg.push_back(i);
  }
  const auto max_fg = static_cast<std::size_t>(cfg.fg_fraction * cfg.batch_size);
  if (pos.size() > max_fg) {
    choose_front(pos, max_fg, rng);
    for (std::size_t q = max_fg; q < pos.size(); ++q) t.labels[pos[q]] = -1;
    pos.resize(max_fg);
  }
  const std::size_t max_bg = static_cast<std::size_t>(cfg.batch_size) - pos.size();
  if (neg.size() > max_bg) {
    choose_front(neg, max_bg, rng);
    for (std::size_t q = max_bg; q < neg.size(); ++q) t.labels[neg[q]] = -1;
  }
  return t;
}

std::vector<Proposal> propose(std::span<const double> fg_scores, std::span<const Deltas> deltas,
                              std::span<const Box> anchors, double image_w, double image_h,
                              const ProposalConfig& cfg) {
  if (fg_scores.size() != anchors.size() || deltas.size() != anchors.size()) {
    throw std::invalid_argument("propose: scores/deltas not aligned with anchors");
  }
  std::vector<Box> boxes;
  std::vector<double> scores;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const Box b = decode_bbox(deltas[i], anchors[i], image_w, image_h);
    if (b.width() < cfg.min_size || b.height() < cfg.min_size) continue;
    boxes.push_back(b);
    scores.push_back(fg_scores[i]);
  }
  auto order = order_by_score(scores);
  if (order.size() > static_cast<std::size_t>(cfg.pre_nms_top_n)) order.resize(static_cast<std::size_t>(cfg.pre_nms_top_n));
  std::vector<Box> top_boxes;
  std::vector<double> top_scores;
  for (std::size_t i : order) {
    top_boxes.push_back(boxes[i]);
    top_scores.push_back(scores[i]);
  }
  std::vector<Proposal> out;
  for (std::size_t i : nms_indices(top_boxes, top_scores, cfg.nms_thresh, static_cast<std::size_t>(cfg.post_nms_top_n))) {
    out.push_back({top_boxes[i], top_scores[i]});
  }
  return out;
}

RoiSample sample_rois(std::span<const Box> proposals, std::span<const Box> gt_boxes, const RoiSamplingConfig& cfg,
                      Rng& rng) {
  std::vector<Box> all(proposals.begin(), proposals.end());
  if (cfg.append_gt) all.insert(all.end(), gt_boxes.begin(), gt_boxes.end());

  std::vector<double> max_ov(all.size(), 0.0);
  std::vector<std::size_t> argmax(all.size(), 0);
  for (std::size_t i = 0; i < all.size(); ++i) {
    for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
      const double v = iou(all[i], gt_boxes[g]);
      if (v > max_ov[i]) {
        max_ov[i] = v;
        argmax[i] = g;
      }
    }
  }
  std::vector<std::size_t> fg, bg;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (!gt_boxes.empty() && max_ov[i] >= cfg.fg_iou) {
      fg.push_back(i);
    } else if (gt_boxes.empty() || (max_ov[i] < cfg.bg_iou_hi && max_ov[i] >= cfg.bg_iou_lo)) {
      bg.push_back(i);
    }
  }
  const auto fg_quota = static_cast<std::size_t>(std::lround(cfg.fg_fraction * cfg.batch_size));
  const std::size_t n_fg = std::min(fg_quota, fg.size());
  choose_front(fg, n_fg, rng);
  const std::size_t n_bg = std::min(static_cast<std::size_t>(cfg.batch_size) - n_fg, bg.size());
  choose_front(bg, n_bg, rng);

  RoiSample s;
  for (std::size_t q = 0; q < n_fg; ++q) {
    const std::size_t i = fg[q];
    s.rois.push_back(all[i]);
    s.labels.push_back(1);
    s.deltas.push_back(encode_bbox(gt_boxes[argmax[i]], all[i]));
  }
  for (std::size_t q = 0; q < n_bg; ++q) {
    s.rois.push_back(all[bg[q]]);
    s.labels.push_back(0);
    s.deltas.push_back({0, 0, 0, 0});
  }
  return s;
}

}  // namespace ctx3d::det
