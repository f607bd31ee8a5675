#include "ctx3d/model/trainer.hpp"

#include <cmath>
#include <numeric>

#include "ctx3d/csv.hpp"
#include "ctx3d/errors.hpp"
#include "ctx3d/model/checkpoint.hpp"
#include "ctx3d/nn/optim.hpp"

namespace ctx3d::model {

std::string format_loss_trace(const std::vector<LossRecord>& trace) {
  std::string out = std::string(kLossTraceHeader) + "\n";
  for (const auto& r : trace) {
    out += std::to_string(r.iter) + "," + std::to_string(r.epoch) + "," + csv::fmt(r.lr) + "," + csv::fmt(r.rpn_cls) +
           "," + csv::fmt(r.rpn_reg) + "," + csv::fmt(r.head_cls) + "," + csv::fmt(r.head_reg) + "," +
           csv::fmt(r.total) + "\n";
  }
  return out;
}

std::vector<LossRecord> parse_loss_trace(const std::string& text, const std::string& what) {
  const auto table = csv::parse(text, what);
  csv::require_columns(table, {"iter", "epoch", "lr", "rpn_cls", "rpn_reg", "head_cls", "head_reg", "total"}, what);
  std::vector<LossRecord> out;
  const auto c = [&](const char* name) { return table.column(name); };
  for (const auto& row : table.rows) {
    LossRecord r;
    r.iter = csv::to_int(row[c("iter")], what);
    r.epoch = csv::to_int(row[c("epoch")], what);
    r.lr = csv::to_double(row[c("lr")], what);
    r.rpn_cls = csv::to_double(row[c("rpn_cls")], what);
    r.rpn_reg = csv::to_double(row[c("rpn_reg")], what);
    r.head_cls = csv::to_double(row[c("head_cls")], what);
    r.head_reg = csv::to_double(row[c("head_reg")], what);
    r.total = csv::to_double(row[c("total")], what);
    out.push_back(r);
  }
  return out;
}

double learning_rate(const ScheduleConfig& s, int epoch) {
  int passed = 0;
  for (int e : s.decay_after_epochs) passed += e < epoch ? 1 : 0;
  return s.base_lr * std::pow(s.decay_factor, passed);
}

std::vector<LossRecord> train(Detector<float>& model, const std::vector<Sample>& samples, const TrainOptions& opts) {
  if (samples.empty()) throw DataError("train: no training samples");
  const ModelConfig& cfg = model.config();
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_samples());
  det::Rng rng(opts.seed);
  std::vector<std::size_t> order(samples.size());
  std::vector<nn::Tensor<float>> velocity;
  std::vector<nn::Tensor<float>*> param_ptrs;
  for (auto& p : model.parameters()) param_ptrs.push_back(&p.value);
  std::vector<LossRecord> trace;
  int iter = 0;

  for (int epoch = 1; epoch <= cfg.schedule.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    const double lr = learning_rate(cfg.schedule, epoch);

    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      const float inv = 1.0f / static_cast<float>(end - start);
      std::vector<nn::Tensor<float>> grads;
      for (auto* p : param_ptrs) grads.emplace_back(p->shape());
      LossRecord rec;
      rec.iter = ++iter;
      rec.epoch = epoch;
      rec.lr = lr;
      rec.samples = static_cast<int>(end - start);
      std::string ids;

      for (std::size_t b = start; b < end; ++b) {
        const Sample& s = samples[order[b]];
        ids += (ids.empty() ? "" : " ") + s.key.volume_id + "@" + std::to_string(s.key.key_slice);
        nn::Tape<float> tape;
        const auto vars = model.bind(tape, true);
        const auto input = model.make_input(s.group);
        const LossVars loss = model.forward_train(tape, vars, input, s.gt_boxes, rng);
        const double terms[5] = {tape.value(loss.rpn_cls).item(), tape.value(loss.rpn_reg).item(),
                                 tape.value(loss.head_cls).item(), tape.value(loss.head_reg).item(),
                                 tape.value(loss.total).item()};
        if (!std::isfinite(terms[4])) {
          throw NumericError("train: non-finite loss at iteration " + std::to_string(iter) + " (epoch " +
                             std::to_string(epoch) + ", sample " + s.key.volume_id + "@" +
                             std::to_string(s.key.key_slice) + "): rpn_cls=" + csv::fmt(terms[0]) +
                             " rpn_reg=" + csv::fmt(terms[1]) + " head_cls=" + csv::fmt(terms[2]) +
                             " head_reg=" + csv::fmt(terms[3]));
        }
        rec.rpn_cls += terms[0] * inv;
        rec.rpn_reg += terms[1] * inv;
        rec.head_cls += terms[2] * inv;
        rec.head_reg += terms[3] * inv;
        rec.total += terms[4] * inv;
        tape.backward(loss.total);
        for (std::size_t i = 0; i < vars.size(); ++i) {
          if (!tape.has_grad(vars[i])) continue;
          const nn::Tensor<float>& g = *tape.grad_buffer(vars[i]);
          auto& acc = grads[i];
          for (std::size_t j = 0; j < g.numel(); ++j) acc[j] += g[j] * inv;
        }
      }

      try {
        nn::sgd_step<float>(param_ptrs, grads, velocity,
                            nn::SgdOptions{lr, cfg.schedule.momentum, cfg.schedule.weight_decay});
      } catch (const NumericError& e) {
        throw NumericError("train: iteration " + std::to_string(iter) + " (epoch " + std::to_string(epoch) +
                           ", samples " + ids + "): " + e.what());
      }
      trace.push_back(rec);
      if (opts.on_iteration) opts.on_iteration(rec);
    }
    if (opts.checkpoint_dir) {
      std::filesystem::create_directories(*opts.checkpoint_dir);
      save_checkpoint(*opts.checkpoint_dir / ("epoch_" + std::to_string(epoch) + ".ckpt"), model, epoch);
    }
  }
  return trace;
}

}  // namespace ctx3d::model
