#include "ctx3d/model/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "ctx3d/binary_io.hpp"
#include "ctx3d/csv.hpp"

namespace ctx3d::model {
namespace {

std::string trim(std::string s) {
  const char* ws = " \t\r\"'";
  s.erase(0, s.find_first_not_of(ws));
  const auto end = s.find_last_not_of(ws);
  s.erase(end == std::string::npos ? 0 : end + 1);
  return s;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out)) {
    throw std::invalid_argument("config: " + key + " expects a number, got '" + v + "'");
  }
  return out;
}

int parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw std::invalid_argument("config: " + key + " expects an integer, got '" + v + "'");
  }
  return static_cast<int>(out);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("config: " + key + " expects true/false, got '" + v + "'");
}

std::vector<std::string> split_list(std::string v) {
  v = trim(v);
  if (!v.empty() && v.front() == '[') v.erase(0, 1);
  if (!v.empty() && v.back() == ']') v.pop_back();
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    auto pos = v.find(',', start);
    std::string item = trim(v.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
    if (!item.empty()) out.push_back(item);
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

// Accepts "h:w" or a plain real; stored as height/width.
double parse_ratio(const std::string& key, const std::string& item) {
  const auto colon = item.find(':');
  if (colon == std::string::npos) return parse_double(key, item);
  const double a = parse_double(key, trim(item.substr(0, colon)));
  const double b = parse_double(key, trim(item.substr(colon + 1)));
  if (!(b > 0)) throw std::invalid_argument("config: " + key + " has a zero ratio denominator");
  return a / b;
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + csv::fmt(v[i]);
  return s;
}
std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Binding {
  const char* key;
  std::function<void(ModelConfig&, const std::string&)> set;
  std::function<std::string(const ModelConfig&)> get;
};

#define INT_FIELD(KEY, FIELD)                                                          \
  Binding{KEY, [](ModelConfig& c, const std::string& v) { c.FIELD = parse_int(KEY, v); }, \
          [](const ModelConfig& c) { return std::to_string(c.FIELD); }}
#define REAL_FIELD(KEY, FIELD)                                                            \
  Binding{KEY, [](ModelConfig& c, const std::string& v) { c.FIELD = parse_double(KEY, v); }, \
          [](const ModelConfig& c) { return csv::fmt(c.FIELD); }}

const std::vector<Binding>& bindings() {
  static const std::vector<Binding> table = {
      INT_FIELD("model.M", num_images),
      INT_FIELD("model.D", feature_depth),
      INT_FIELD("model.S", pooled_size),
      Binding{"model.backbone", [](ModelConfig& c, const std::string& v) { c.backbone = parse_backbone(v); },
              [](const ModelConfig& c) { return backbone_name(c.backbone); }},
      Binding{"model.key_slice_only",
              [](ModelConfig& c, const std::string& v) { c.key_slice_only = parse_bool("model.key_slice_only", v); },
              [](const ModelConfig& c) { return std::string(c.key_slice_only ? "true" : "false"); }},
      INT_FIELD("model.fc7_width", fc7_width),
      Binding{"model.anchor_scales",
              [](ModelConfig& c, const std::string& v) {
                c.anchor_scales.clear();
                for (const auto& item : split_list(v)) c.anchor_scales.push_back(parse_double("model.anchor_scales", item));
              },
              [](const ModelConfig& c) { return join(c.anchor_scales); }},
      Binding{"model.anchor_ratios",
              [](ModelConfig& c, const std::string& v) {
                c.anchor_ratios.clear();
                for (const auto& item : split_list(v)) c.anchor_ratios.push_back(parse_ratio("model.anchor_ratios", item));
              },
              [](const ModelConfig& c) { return join(c.anchor_ratios); }},
      REAL_FIELD("model.pixel_mean", pixel_mean),
      REAL_FIELD("model.pixel_std", pixel_std),
      REAL_FIELD("loss.bbox_reg_weight", bbox_reg_loss_weight),
      REAL_FIELD("rpn.positive_iou", rpn_targets.positive_iou),
      REAL_FIELD("rpn.negative_iou", rpn_targets.negative_iou),
      INT_FIELD("rpn.batch_size", rpn_targets.batch_size),
      REAL_FIELD("rpn.fg_fraction", rpn_targets.fg_fraction),
      INT_FIELD("rpn.pre_nms_train", proposals_train.pre_nms_top_n),
      INT_FIELD("rpn.post_nms_train", proposals_train.post_nms_top_n),
      INT_FIELD("rpn.pre_nms_test", proposals_test.pre_nms_top_n),
      INT_FIELD("rpn.post_nms_test", proposals_test.post_nms_top_n),
      Binding{"rpn.nms",
              [](ModelConfig& c, const std::string& v) {
                c.proposals_train.nms_thresh = c.proposals_test.nms_thresh = parse_double("rpn.nms", v);
              },
              [](const ModelConfig& c) { return csv::fmt(c.proposals_train.nms_thresh); }},
      Binding{"rpn.min_size",
              [](ModelConfig& c, const std::string& v) {
                c.proposals_train.min_size = c.proposals_test.min_size = parse_double("rpn.min_size", v);
              },
              [](const ModelConfig& c) { return csv::fmt(c.proposals_train.min_size); }},
      INT_FIELD("rcnn.batch_size", roi_sampling.batch_size),
      REAL_FIELD("rcnn.fg_fraction", roi_sampling.fg_fraction),
      REAL_FIELD("rcnn.fg_iou", roi_sampling.fg_iou),
      REAL_FIELD("rcnn.bg_iou_hi", roi_sampling.bg_iou_hi),
      REAL_FIELD("rcnn.bg_iou_lo", roi_sampling.bg_iou_lo),
      REAL_FIELD("rcnn.nms", test_nms),
      INT_FIELD("rcnn.max_detections", max_detections),
      REAL_FIELD("train.base_lr", schedule.base_lr),
      Binding{"train.lr_decay_epochs",
              [](ModelConfig& c, const std::string& v) {
                c.schedule.decay_after_epochs.clear();
                for (const auto& item : split_list(v)) c.schedule.decay_after_epochs.push_back(parse_int("train.lr_decay_epochs", item));
              },
              [](const ModelConfig& c) { return join(c.schedule.decay_after_epochs); }},
      REAL_FIELD("train.lr_decay_factor", schedule.decay_factor),
      INT_FIELD("train.epochs", schedule.epochs),
      INT_FIELD("train.samples_per_batch", schedule.samples_per_batch),
      REAL_FIELD("train.momentum", schedule.momentum),
      REAL_FIELD("train.weight_decay", schedule.weight_decay),
  };
  return table;
}

#undef INT_FIELD
#undef REAL_FIELD

}  // namespace

std::string backbone_name(Backbone b) { return b == Backbone::Tiny ? "tiny" : "vgg16-like"; }

Backbone parse_backbone(const std::string& s) {
  if (s == "tiny") return Backbone::Tiny;
  if (s == "vgg16-like" || s == "vgg16") return Backbone::Vgg16Like;
  throw std::invalid_argument("config: unknown backbone '" + s + "' (expected tiny or vgg16-like)");
}

int ModelConfig::batch_samples() const {
  if (schedule.samples_per_batch > 0) return schedule.samples_per_batch;
  return num_images < 7 ? 2 : 1;
}

det::AnchorConfig ModelConfig::anchor_config() const { return det::AnchorConfig{anchor_scales, anchor_ratios, stride()}; }

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("config: " + m); };
  if (num_images < 1 || num_images % 2 == 0) fail("model.M must be odd and >= 1");
  if (key_slice_only && num_images != 1) fail("model.key_slice_only requires model.M = 1");
  if (feature_depth < 1) fail("model.D must be >= 1");
  if (pooled_size < 1) fail("model.S must be >= 1");
  if (fusion_channels() != pooled_size * pooled_size * feature_depth * num_images ||
      fusion_channels() != conv6_channels() * num_images) {
    fail("fusion channel arithmetic does not give S^2*D*M");
  }
  if (fc7_width < 1) fail("model.fc7_width must be >= 1");
  if (!(pixel_std > 0)) fail("model.pixel_std must be positive");
  anchor_config().validate();
  if (rpn_targets.batch_size < 1 || roi_sampling.batch_size < 1) fail("sampling batch sizes must be >= 1");
  if (!(rpn_targets.negative_iou <= rpn_targets.positive_iou)) fail("rpn.negative_iou must not exceed rpn.positive_iou");
  if (!(roi_sampling.bg_iou_lo <= roi_sampling.bg_iou_hi)) fail("rcnn.bg_iou_lo must not exceed rcnn.bg_iou_hi");
  for (const auto* p : {&proposals_train, &proposals_test}) {
    if (p->pre_nms_top_n < 1 || p->post_nms_top_n < 1) fail("proposal counts must be >= 1");
  }
  if (max_detections < 1) fail("rcnn.max_detections must be >= 1");
  if (!(schedule.base_lr > 0)) fail("train.base_lr must be positive");
  if (schedule.epochs < 1) fail("train.epochs must be >= 1");
  if (schedule.samples_per_batch < 0) fail("train.samples_per_batch must be >= 0");
}

std::uint64_t ModelConfig::fingerprint() const {
  std::string canon = "M=" + std::to_string(num_images) + ";D=" + std::to_string(feature_depth) +
                      ";S=" + std::to_string(pooled_size) + ";backbone=" + backbone_name(backbone) +
                      ";key_only=" + (key_slice_only ? "1" : "0") + ";fc7=" + std::to_string(fc7_width) +
                      ";scales=" + join(anchor_scales) + ";ratios=" + join(anchor_ratios) +
                      ";mean=" + csv::fmt(pixel_mean) + ";std=" + csv::fmt(pixel_std);
  return io::fnv1a64(canon);
}

void set_config_value(ModelConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& b : bindings()) {
    if (key == b.key) {
      b.set(cfg, trim(value));
      return;
    }
  }
  throw std::invalid_argument("config: unknown key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> config_entries(const ModelConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& b : bindings()) out.emplace_back(b.key, b.get(cfg));
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& b : bindings()) out.emplace_back(b.key);
  return out;
}

std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text, const std::string& what) {
  std::vector<std::pair<std::string, std::string>> out;
  std::string section;
  std::size_t start = 0, line_no = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') {
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(what + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    std::string key = trim(line.substr(0, eq));
    if (!section.empty()) key = section + "." + key;
    out.emplace_back(key, trim(line.substr(eq + 1)));
  }
  return out;
}

ModelConfig desk_preset() {
  ModelConfig c;
  c.proposals_train.post_nms_top_n = 600;
  c.proposals_test.post_nms_top_n = 100;
  return c;
}

}  // namespace ctx3d::model
