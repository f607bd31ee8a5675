#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ctx3d/det/geometry.hpp"

namespace ctx3d::model {

enum class Backbone { Tiny, Vgg16Like };

std::string backbone_name(Backbone b);
Backbone parse_backbone(const std::string& s);

struct ScheduleConfig {
  double base_lr = 1e-3;
  std::vector<int> decay_after_epochs{4, 5};  // lr drops after finishing these epochs
  double decay_factor = 0.1;
  int epochs = 6;
  int samples_per_batch = 0;  // 0: 2 samples when M < 7, else 1
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

/// Every detector hyperparameter. Keys in the flat text form are listed by
/// config_keys().
struct ModelConfig {
  int num_images = 3;      // M: three-channel images per sample (3M slices)
  int feature_depth = 10;  // D
  int pooled_size = 7;     // S
  Backbone backbone = Backbone::Tiny;
  bool key_slice_only = false;  // M = 1 fed with the key slice in all channels
  int fc7_width = 2048;
  std::vector<double> anchor_scales{16, 24, 32, 48, 96};
  std::vector<double> anchor_ratios{0.5, 1.0, 2.0};
  double bbox_reg_loss_weight = 10;
  double pixel_mean = 50;  // input normalisation on the [0, 255] scale
  double pixel_std = 50;

  det::RpnTargetConfig rpn_targets;
  det::ProposalConfig proposals_train{6000, 2000, 0.7, 4.0};
  det::ProposalConfig proposals_test{6000, 300, 0.7, 4.0};
  det::RoiSamplingConfig roi_sampling;
  double test_nms = 0.3;
  int max_detections = 100;

  ScheduleConfig schedule;

  int stride() const { return 8; }
  int fusion_channels() const { return pooled_size * pooled_size * feature_depth * num_images; }
  int conv6_channels() const { return pooled_size * pooled_size * feature_depth; }
  int pooled_features() const { return fusion_channels(); }
  int batch_samples() const;
  det::AnchorConfig anchor_config() const;

  // Throws std::invalid_argument for inconsistent settings (even M, channel
  // arithmetic, empty anchors, ...).
  void validate() const;

  // Hash of everything that determines parameter shapes and input semantics.
  std::uint64_t fingerprint() const;
};

// Apply "key = value"; throws std::invalid_argument for unknown keys or bad values.
void set_config_value(ModelConfig& cfg, const std::string& key, const std::string& value);
// Flat key/value snapshot of every setting (stable order).
std::vector<std::pair<std::string, std::string>> config_entries(const ModelConfig& cfg);
std::vector<std::string> config_keys();

// Parses the flat text form: "key = value" lines, '#' comments, optional
// "[section]" headers that prefix later keys with "section.".
std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text, const std::string& what);

// The desk-scale preset for CPU runs: fewer proposals per image.
ModelConfig desk_preset();

}  // namespace ctx3d::model
