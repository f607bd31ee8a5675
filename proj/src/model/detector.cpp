#include "ctx3d/model/detector.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "ctx3d/det/psroi.hpp"
#include "ctx3d/nn/ops.hpp"

namespace ctx3d::model {

using nn::Shape;
using nn::Tape;
using nn::Tensor;
using nn::Var;

template <typename T>
Detector<T>::Detector(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  if (cfg_.backbone == Backbone::Tiny) {
    backbone_spec_ = {{"conv1", 3, 16, 3, true}, {"conv2", 16, 32, 3, true}, {"conv3", 32, 64, 3, true},
                      {"conv4", 64, 64, 3, false}};
  } else {
    backbone_spec_ = {{"conv1_1", 3, 64, 3, false},    {"conv1_2", 64, 64, 3, true},
                      {"conv2_1", 64, 128, 3, false},  {"conv2_2", 128, 128, 3, true},
                      {"conv3_1", 128, 256, 3, false}, {"conv3_2", 256, 256, 3, false},
                      {"conv3_3", 256, 256, 3, true},  {"conv4_1", 256, 512, 3, false},
                      {"conv4_2", 512, 512, 3, false}, {"conv4_3", 512, 512, 3, false},
                      {"conv5_1", 512, 512, 3, false}, {"conv5_2", 512, 512, 3, false},
                      {"conv5_3", 512, 512, 3, false}};
  }
  backbone_width_ = backbone_spec_.back().cout;

  std::uint64_t stream = seed;
  for (const auto& c : backbone_spec_) {
    // He initialisation stands in for pretrained weights.
    add_param(c.name + "/weight", Shape{std::size_t(c.cout), std::size_t(c.cin), std::size_t(c.k), std::size_t(c.k)},
              std::sqrt(2.0 / (c.cin * c.k * c.k)), stream);
    add_param(c.name + "/bias", Shape{std::size_t(c.cout)}, 0, stream);
  }
  const std::size_t c5 = static_cast<std::size_t>(backbone_width_);
  const std::size_t a = cfg_.anchor_config().per_cell();
  add_param("rpn_conv/weight", Shape{c5, c5, 3, 3}, 0.01, stream);
  add_param("rpn_conv/bias", Shape{c5}, 0, stream);
  add_param("rpn_cls/weight", Shape{2 * a, c5, 1, 1}, 0.01, stream);
  add_param("rpn_cls/bias", Shape{2 * a}, 0, stream);
  add_param("rpn_bbox/weight", Shape{4 * a, c5, 1, 1}, 0.001, stream);
  add_param("rpn_bbox/bias", Shape{4 * a}, 0, stream);
  add_param("conv6/weight", Shape{std::size_t(cfg_.conv6_channels()), c5, 1, 1}, 0.01, stream);
  add_param("conv6/bias", Shape{std::size_t(cfg_.conv6_channels())}, 0, stream);
  const std::size_t fc7 = static_cast<std::size_t>(cfg_.fc7_width);
  add_param("fc7/weight", Shape{std::size_t(cfg_.pooled_features()), fc7}, 0.01, stream);
  add_param("fc7/bias", Shape{fc7}, 0, stream);
  add_param("cls/weight", Shape{fc7, 2}, 0.01, stream);
  add_param("cls/bias", Shape{2}, 0, stream);
  add_param("bbox/weight", Shape{fc7, 4}, 0.001, stream);
  add_param("bbox/bias", Shape{4}, 0, stream);
}

template <typename T>
void Detector<T>::add_param(const std::string& name, Shape shape, double std, std::uint64_t& stream) {
  Tensor<T> t(shape);
  if (std > 0) {
    std::mt19937_64 rng(stream);
    std::normal_distribution<double> dist(0.0, std);
    for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  }
  stream = stream * 6364136223846793005ULL + 1442695040888963407ULL;
  params_.push_back({name, std::move(t)});
}

template <typename T>
std::size_t Detector<T>::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  throw std::out_of_range("detector: no parameter named '" + name + "'");
}

template <typename T>
Parameter<T>& Detector<T>::parameter(const std::string& name) {
  return params_[index_of(name)];
}
template <typename T>
const Parameter<T>& Detector<T>::parameter(const std::string& name) const {
  return params_[index_of(name)];
}

template <typename T>
SampleInput<T> Detector<T>::make_input(const ct::SliceGroup& group) const {
  if (group.num_images != cfg_.num_images) {
    throw std::invalid_argument("detector: sample has " + std::to_string(group.num_images) + " images, model expects " +
                                std::to_string(cfg_.num_images));
  }
  const std::size_t s = static_cast<std::size_t>(cfg_.stride());
  const std::size_t h = group.height, w = group.width;
  const std::size_t hp = (h + s - 1) / s * s, wp = (w + s - 1) / s * s;
  SampleInput<T> in;
  in.height = h;
  in.width = w;
  in.images = Tensor<T>(Shape{std::size_t(group.num_images), 3, hp, wp});
  const double mean = cfg_.pixel_mean, inv = 1.0 / cfg_.pixel_std;
  for (std::size_t plane = 0; plane < std::size_t(group.num_images) * 3; ++plane) {
    const float* src = group.pixels.data() + plane * h * w;
    T* dst = in.images.data().data() + plane * hp * wp;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) dst[y * wp + x] = static_cast<T>((src[y * w + x] - mean) * inv);
    }
  }
  return in;
}

template <typename T>
std::vector<Var> Detector<T>::bind(Tape<T>& tape, bool requires_grad) const {
  std::vector<Var> vars;
  vars.reserve(params_.size());
  for (const auto& p : params_) vars.push_back(tape.leaf(p.value, requires_grad));
  return vars;
}

template <typename T>
Var Detector<T>::backbone(Tape<T>& tape, const std::vector<Var>& p, Var images) const {
  Var x = images;
  for (std::size_t i = 0; i < backbone_spec_.size(); ++i) {
    const auto& c = backbone_spec_[i];
    x = nn::relu(tape, nn::conv2d(tape, x, p[2 * i], p[2 * i + 1], 1, c.k / 2));
    if (c.pool_after) x = nn::max_pool2(tape, x);
  }
  return x;
}

template <typename T>
Var Detector<T>::conv6(Tape<T>& tape, const std::vector<Var>& p, Var conv5) const {
  return nn::conv2d(tape, conv5, p[index_of("conv6/weight")], p[index_of("conv6/bias")], 1, 0);
}

template <typename T>
Var Detector<T>::fuse(Tape<T>& tape, const std::vector<Var>& conv6_maps) const {
  if (conv6_maps.size() != static_cast<std::size_t>(cfg_.num_images)) {
    throw std::invalid_argument("detector: fusion needs one Conv6 map per image");
  }
  Var fused = conv6_maps.size() == 1 ? conv6_maps[0] : nn::concat_channels<T>(tape, conv6_maps);
  if (tape.shape(fused)[1] != static_cast<std::size_t>(cfg_.fusion_channels())) {
    throw std::logic_error("detector: fused map has " + std::to_string(tape.shape(fused)[1]) + " channels, expected " +
                           std::to_string(cfg_.fusion_channels()));
  }
  return fused;
}

template <typename T>
typename Detector<T>::RpnOut Detector<T>::rpn(Tape<T>& tape, const std::vector<Var>& p, Var central) const {
  const Shape s = tape.shape(central);
  Var h = nn::relu(tape, nn::conv2d(tape, central, p[index_of("rpn_conv/weight")], p[index_of("rpn_conv/bias")], 1, 1));
  Var cls = nn::conv2d(tape, h, p[index_of("rpn_cls/weight")], p[index_of("rpn_cls/bias")], 1, 0);
  Var reg = nn::conv2d(tape, h, p[index_of("rpn_bbox/weight")], p[index_of("rpn_bbox/bias")], 1, 0);
  RpnOut out;
  out.scores = nn::map_to_rows(tape, cls, 2);
  out.deltas = nn::map_to_rows(tape, reg, 4);
  out.anchors = det::generate_anchors(cfg_.anchor_config(), static_cast<int>(s[2]), static_cast<int>(s[3]));
  return out;
}

template <typename T>
typename Detector<T>::HeadOut Detector<T>::head(Tape<T>& tape, const std::vector<Var>& p, Var fused,
                                                const std::vector<det::Box>& rois) const {
  const std::size_t r = rois.size();
  Var pooled = det::psroi_pool(tape, fused, std::span<const det::Box>(rois), cfg_.pooled_size, cfg_.stride());
  Var flat = nn::reshape(tape, pooled, Shape{r, std::size_t(cfg_.pooled_features())});
  Var fc7 = nn::relu(tape, nn::fully_connected(tape, flat, p[index_of("fc7/weight")], p[index_of("fc7/bias")]));
  HeadOut out;
  out.scores = nn::fully_connected(tape, fc7, p[index_of("cls/weight")], p[index_of("cls/bias")]);
  out.deltas = nn::fully_connected(tape, fc7, p[index_of("bbox/weight")], p[index_of("bbox/bias")]);
  return out;
}

namespace {

template <typename T>
std::vector<det::Deltas> rows_to_deltas(const Tensor<T>& t) {
  std::vector<det::Deltas> out(t.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t k = 0; k < 4; ++k) out[i][k] = static_cast<double>(t[i * 4 + k]);
  }
  return out;
}

template <typename T>
std::vector<double> foreground_probs(const Tensor<T>& logits) {
  const Tensor<T> prob = nn::softmax_rows(logits);
  std::vector<double> out(prob.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(prob[i * 2 + 1]);
  return out;
}

// Regression target and mask tensors for rows labelled 1.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> regression_targets(const std::vector<int>& labels, const std::vector<det::Deltas>& d) {
  Tensor<T> target(Shape{labels.size(), 4}), mask(Shape{labels.size(), 4});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t k = 0; k < 4; ++k) {
      target[i * 4 + k] = static_cast<T>(d[i][k]);
      mask[i * 4 + k] = T{1};
    }
  }
  return {std::move(target), std::move(mask)};
}

}  // namespace

template <typename T>
LossVars Detector<T>::forward_train(Tape<T>& tape, const std::vector<Var>& p, const SampleInput<T>& input,
                                    const std::vector<det::Box>& gt_boxes, det::Rng& rng, const TrainTargets* frozen,
                                    TrainTargets* used) const {
  const double img_w = static_cast<double>(input.width), img_h = static_cast<double>(input.height);
  const std::size_t m = static_cast<std::size_t>(cfg_.num_images);
  Var images = tape.constant(input.images);
  Var c5 = backbone(tape, p, images);
  Var central = m == 1 ? c5 : nn::select_batch(tape, c5, m / 2);
  RpnOut r = rpn(tape, p, central);

  TrainTargets targets;
  if (frozen) {
    targets = *frozen;
    if (targets.rpn_labels.size() != r.anchors.size()) {
      throw std::invalid_argument("forward_train: frozen RPN targets do not match the anchor count");
    }
  } else {
    auto rt = det::assign_rpn_targets(r.anchors, gt_boxes, img_w, img_h, cfg_.rpn_targets, rng);
    targets.rpn_labels = std::move(rt.labels);
    targets.rpn_deltas = std::move(rt.deltas);
    const auto fg = foreground_probs(tape.value(r.scores));
    const auto deltas = rows_to_deltas(tape.value(r.deltas));
    const auto proposals = det::propose(fg, deltas, r.anchors, img_w, img_h, cfg_.proposals_train);
    std::vector<det::Box> boxes;
    boxes.reserve(proposals.size());
    for (const auto& pr : proposals) boxes.push_back(pr.box);
    auto rs = det::sample_rois(boxes, gt_boxes, cfg_.roi_sampling, rng);
    targets.rois = std::move(rs.rois);
    targets.roi_labels = std::move(rs.labels);
    targets.roi_deltas = std::move(rs.deltas);
  }

  LossVars loss;
  loss.rpn_cls = nn::softmax_cross_entropy(tape, r.scores, std::span<const int>(targets.rpn_labels), -1);
  {
    auto [target, mask] = regression_targets<T>(targets.rpn_labels, targets.rpn_deltas);
    loss.rpn_reg = nn::smooth_l1(tape, r.deltas, target, mask);
  }
  if (targets.rois.empty()) {
    loss.head_cls = tape.constant(Tensor<T>::scalar(T{0}));
    loss.head_reg = tape.constant(Tensor<T>::scalar(T{0}));
  } else {
    Var c6 = conv6(tape, p, c5);
    std::vector<Var> maps;
    for (std::size_t i = 0; i < m; ++i) maps.push_back(m == 1 ? c6 : nn::select_batch(tape, c6, i));
    HeadOut h = head(tape, p, fuse(tape, maps), targets.rois);
    loss.head_cls = nn::softmax_cross_entropy(tape, h.scores, std::span<const int>(targets.roi_labels), -1);
    auto [target, mask] = regression_targets<T>(targets.roi_labels, targets.roi_deltas);
    loss.head_reg = nn::smooth_l1(tape, h.deltas, target, mask);
  }
  const Var terms[4] = {loss.rpn_cls, loss.rpn_reg, loss.head_cls, loss.head_reg};
  const T weights[4] = {T{1}, T{1}, T{1}, static_cast<T>(cfg_.bbox_reg_loss_weight)};
  loss.total = nn::weighted_sum<T>(tape, terms, weights);
  if (used) *used = std::move(targets);
  return loss;
}

template <typename T>
Tensor<T> Detector<T>::image_features(const Tensor<T>& image) const {
  Tape<T> tape;
  const auto p = bind(tape, false);
  return tape.value(backbone(tape, p, tape.constant(image)));
}

template <typename T>
std::vector<det::Detection> Detector<T>::detect_from_features(const std::vector<const Tensor<T>*>& conv5,
                                                              std::size_t height, std::size_t width) const {
  if (conv5.size() != static_cast<std::size_t>(cfg_.num_images)) {
    throw std::invalid_argument("detect: expected one feature map per image");
  }
  const double img_w = static_cast<double>(width), img_h = static_cast<double>(height);
  Tape<T> tape;
  const auto p = bind(tape, false);
  std::vector<Var> maps;
  for (const auto* f : conv5) maps.push_back(conv6(tape, p, tape.constant(*f)));
  RpnOut r = rpn(tape, p, tape.constant(*conv5[conv5.size() / 2]));
  const auto fg = foreground_probs(tape.value(r.scores));
  const auto rpn_deltas = rows_to_deltas(tape.value(r.deltas));
  const auto proposals = det::propose(fg, rpn_deltas, r.anchors, img_w, img_h, cfg_.proposals_test);
  if (proposals.empty()) return {};
  std::vector<det::Box> rois;
  for (const auto& pr : proposals) rois.push_back(pr.box);
  HeadOut h = head(tape, p, fuse(tape, maps), rois);
  const auto scores = foreground_probs(tape.value(h.scores));
  const auto deltas = rows_to_deltas(tape.value(h.deltas));
  std::vector<det::Detection> dets;
  dets.reserve(rois.size());
  for (std::size_t i = 0; i < rois.size(); ++i) {
    det::Detection d;
    d.box = det::decode_bbox(deltas[i], rois[i], img_w, img_h);
    d.score = scores[i];
    if (d.box.valid()) dets.push_back(d);
  }
  auto kept = det::nms(dets, cfg_.test_nms);
  if (kept.size() > static_cast<std::size_t>(cfg_.max_detections)) kept.resize(static_cast<std::size_t>(cfg_.max_detections));
  return kept;
}

template <typename T>
std::vector<det::Detection> Detector<T>::detect(const SampleInput<T>& input) const {
  const auto& s = input.images.shape();
  const std::size_t plane = 3 * s[2] * s[3];
  std::vector<Tensor<T>> feats;
  for (std::size_t m = 0; m < s[0]; ++m) {
    std::vector<T> buf(input.images.data().begin() + static_cast<long>(m * plane),
                       input.images.data().begin() + static_cast<long>((m + 1) * plane));
    feats.push_back(image_features(Tensor<T>(Shape{1, 3, s[2], s[3]}, std::move(buf))));
  }
  std::vector<const Tensor<T>*> ptrs;
  for (const auto& f : feats) ptrs.push_back(&f);
  return detect_from_features(ptrs, input.height, input.width);
}

template <typename To, typename From>
Detector<To> convert_detector(const Detector<From>& src) {
  Detector<To> out(src.config());
  auto& dst = out.parameters();
  const auto& from = src.parameters();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i].value = nn::tensor_cast<To>(from[i].value);
  return out;
}

template class Detector<float>;
template class Detector<double>;
template Detector<double> convert_detector<double, float>(const Detector<float>&);
template Detector<float> convert_detector<float, double>(const Detector<double>&);
template Detector<double> convert_detector<double, double>(const Detector<double>&);

}  // namespace ctx3d::model
