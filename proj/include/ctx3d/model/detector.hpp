#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ctx3d/ct/preprocess.hpp"
#include "ctx3d/det/box.hpp"
#include "ctx3d/det/geometry.hpp"
#include "ctx3d/model/config.hpp"
#include "ctx3d/nn/tape.hpp"
#include "ctx3d/nn/tensor.hpp"

namespace ctx3d::model {

template <typename T>
struct Parameter {
  std::string name;
  nn::Tensor<T> value;
};

/// Targets sampled for one training sample. Returned by forward_train so a
/// caller can replay the exact same assignment (gradient checks).
struct TrainTargets {
  std::vector<int> rpn_labels;
  std::vector<det::Deltas> rpn_deltas;
  std::vector<det::Box> rois;
  std::vector<int> roi_labels;
  std::vector<det::Deltas> roi_deltas;
};

struct LossVars {
  nn::Var rpn_cls, rpn_reg, head_cls, head_reg, total;
};

/// Network input: M three-channel images of one sample, normalised and padded
/// to a multiple of the stride. `height`/`width` are the unpadded extents.
template <typename T>
struct SampleInput {
  nn::Tensor<T> images;  // [M, 3, Hp, Wp]
  std::size_t height = 0, width = 0;
};

/// 3DCE R-FCN detector: shared Conv1-5 backbone over the M images, RPN on the
/// central image, shared 1x1 Conv6, channel concatenation, PSROI pooling, FC head.
template <typename T>
class Detector {
 public:
  explicit Detector(ModelConfig cfg, std::uint64_t seed = 0);

  const ModelConfig& config() const { return cfg_; }
  std::vector<Parameter<T>>& parameters() { return params_; }
  const std::vector<Parameter<T>>& parameters() const { return params_; }
  Parameter<T>& parameter(const std::string& name);
  const Parameter<T>& parameter(const std::string& name) const;
  int backbone_width() const { return backbone_width_; }

  SampleInput<T> make_input(const ct::SliceGroup& group) const;

  // Places every parameter on the tape; Vars are indexed like parameters().
  std::vector<nn::Var> bind(nn::Tape<T>& tape, bool requires_grad) const;

  // Conv1-5 on a [N,3,H,W] batch -> [N, C5, H/8, W/8].
  nn::Var backbone(nn::Tape<T>& tape, const std::vector<nn::Var>& p, nn::Var images) const;
  // Conv6 on a [N, C5, h, w] map -> [N, S^2 D, h, w].
  nn::Var conv6(nn::Tape<T>& tape, const std::vector<nn::Var>& p, nn::Var conv5) const;
  // Concatenates per-image Conv6 maps ([1, S^2 D, h, w] each) to [1, S^2 D M, h, w].
  nn::Var fuse(nn::Tape<T>& tape, const std::vector<nn::Var>& conv6_maps) const;

  struct RpnOut {
    nn::Var scores;  // [hwA, 2]
    nn::Var deltas;  // [hwA, 4]
    std::vector<det::Box> anchors;
  };
  RpnOut rpn(nn::Tape<T>& tape, const std::vector<nn::Var>& p, nn::Var central_conv5) const;

  struct HeadOut {
    nn::Var scores;  // [R, 2]
    nn::Var deltas;  // [R, 4]
  };
  HeadOut head(nn::Tape<T>& tape, const std::vector<nn::Var>& p, nn::Var fused,
               const std::vector<det::Box>& rois) const;

  // Builds the four-term training loss. When `frozen` is given its targets are
  // reused instead of sampling new ones; `used` receives the targets applied.
  LossVars forward_train(nn::Tape<T>& tape, const std::vector<nn::Var>& p, const SampleInput<T>& input,
                         const std::vector<det::Box>& gt_boxes, det::Rng& rng,
                         const TrainTargets* frozen = nullptr, TrainTargets* used = nullptr) const;

  // Per-image features for inference: Conv5 of one 3-channel image [1,3,Hp,Wp].
  nn::Tensor<T> image_features(const nn::Tensor<T>& image) const;
  // Detections from the M per-image Conv5 maps of a sample (central = M/2).
  std::vector<det::Detection> detect_from_features(const std::vector<const nn::Tensor<T>*>& conv5,
                                                   std::size_t height, std::size_t width) const;
  std::vector<det::Detection> detect(const SampleInput<T>& input) const;

 private:
  struct ConvSpec {
    std::string name;
    int cin, cout, k;
    bool pool_after;
  };
  void add_param(const std::string& name, nn::Shape shape, double std, std::uint64_t& stream);
  std::size_t index_of(const std::string& name) const;

  ModelConfig cfg_;
  std::vector<ConvSpec> backbone_spec_;
  int backbone_width_ = 0;
  std::vector<Parameter<T>> params_;
};

// Copies parameter values across precisions (same config required).
template <typename To, typename From>
Detector<To> convert_detector(const Detector<From>& src);

}  // namespace ctx3d::model
