#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ctx3d/model/config.hpp"
#include "ctx3d/model/dataset.hpp"
#include "ctx3d/model/detector.hpp"

namespace ctx3d::model {

struct LossRecord {
  int iter = 0;   // 1-based, global
  int epoch = 0;  // 1-based
  double lr = 0;
  int samples = 0;  // samples in this minibatch
  double rpn_cls = 0, rpn_reg = 0, head_cls = 0, head_reg = 0, total = 0;
};

inline constexpr const char* kLossTraceHeader = "iter,epoch,lr,rpn_cls,rpn_reg,head_cls,head_reg,total";

std::string format_loss_trace(const std::vector<LossRecord>& trace);
// Parses the CSV form; the `samples` field is not stored and stays 0.
std::vector<LossRecord> parse_loss_trace(const std::string& text, const std::string& what);

// base_lr * factor^(number of listed decay epochs strictly before `epoch`), epoch 1-based.
double learning_rate(const ScheduleConfig& s, int epoch);

struct TrainOptions {
  std::uint64_t seed = 0;
  // When set, "epoch_<k>.ckpt" is written here at the end of every epoch.
  std::optional<std::filesystem::path> checkpoint_dir;
  std::function<void(const LossRecord&)> on_iteration;
};

// Momentum SGD over shuffled minibatches of cfg.batch_samples() samples; each
// minibatch averages the per-sample losses. Throws NumericError with the
// iteration, epoch and sample ids when a loss or gradient is not finite.
std::vector<LossRecord> train(Detector<float>& model, const std::vector<Sample>& samples, const TrainOptions& opts);

}  // namespace ctx3d::model
