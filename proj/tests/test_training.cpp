#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ctx3d/binary_io.hpp"
#include "ctx3d/cli/cli.hpp"
#include "ctx3d/det/geometry.hpp"
#include "ctx3d/errors.hpp"
#include "ctx3d/model/checkpoint.hpp"
#include "ctx3d/model/inference.hpp"
#include "ctx3d/model/trainer.hpp"
#include "ctx3d/nn/tensor_io.hpp"
#include "model_fixtures.hpp"
#include "test_util.hpp"

using namespace ctx3d;
using namespace ctx3d::model;

namespace {

std::vector<Sample> micro_samples(const ModelConfig& cfg, int n, std::uint64_t seed = 50) {
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) out.push_back(testutil::micro_sample(cfg, testutil::micro_volume(seed + i)));
  return out;
}

ModelConfig desk_config(int m, bool key_only = false) {
  std::vector<std::string> sets{"model.M=" + std::to_string(m)};
  if (key_only) sets.push_back("model.key_slice_only=true");
  return cli::resolve_config(std::filesystem::path(CTX3D_CONFIG_DIR) / "synth_desk.conf", sets);
}

// Samples for the training split of a generated synthetic dataset.
std::vector<Sample> synth_train_samples(const ModelConfig& cfg, int volumes, std::uint64_t seed) {
  const auto ds = synth::generate_dataset(synth::SynthConfig{}, volumes, seed);
  std::vector<Sample> out;
  for (const auto& v : ds.volumes) {
    if (!std::binary_search(ds.split.train.begin(), ds.split.train.end(), v.volume.id)) continue;
    const auto w = ct::window_hu(v.volume);
    for (int k : v.key_slices) {
      Sample s{{v.volume.id, k}, sample_group(cfg, w, k), {}};
      for (const auto& a : v.annotations)
        if (a.key_slice == k) s.gt_boxes.push_back(a.box);
      out.push_back(std::move(s));
    }
  }
  return out;
}

double fixture_loss(const Detector<float>& d, const Sample& s) {
  nn::Tape<float> t;
  det::Rng rng(77);
  return t.value(d.forward_train(t, d.bind(t, false), d.make_input(s.group), s.gt_boxes, rng).total).item();
}

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("learning-rate schedule") {
    ScheduleConfig s;
    CHECK(learning_rate(s, 1) == 1e-3);
    CHECK(learning_rate(s, 3) == 1e-3);
    CHECK(learning_rate(s, 4) == 1e-3);
    CHECK(learning_rate(s, 5) == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(learning_rate(s, 6) == doctest::Approx(1e-5).epsilon(1e-12));
  }

  TEST_CASE("samples per minibatch") {
    for (int m : {1, 3, 5}) {
      ModelConfig c;
      c.num_images = m;
      CHECK(c.batch_samples() == 2);
    }
    for (int m : {7, 9}) {
      ModelConfig c;
      c.num_images = m;
      CHECK(c.batch_samples() == 1);
    }
  }

  TEST_CASE("loss trace follows the schedule and the batching rule") {
    for (int m : {3, 9}) {
      auto cfg = testutil::micro_config(m);
      const auto samples = micro_samples(cfg, 3);
      Detector<float> d(cfg, 1);
      TrainOptions o;
      o.seed = 3;
      const auto trace = train(d, samples, o);
      const std::size_t per_epoch = m < 7 ? 2 : 3;
      REQUIRE(trace.size() == 6 * per_epoch);
      for (const auto& r : trace) {
        CHECK(r.samples == (m < 7 ? (r.iter % 2 ? 2 : 1) : 1));
        CHECK(r.lr == learning_rate(cfg.schedule, r.epoch));
        CHECK(r.epoch == static_cast<int>((static_cast<std::size_t>(r.iter) - 1) / per_epoch) + 1);
      }
      const auto parsed = parse_loss_trace(format_loss_trace(trace), "trace");
      REQUIRE(parsed.size() == trace.size());
      for (std::size_t i = 0; i < trace.size(); ++i) {
        CHECK(parsed[i].lr == trace[i].lr);
        CHECK(parsed[i].total == trace[i].total);
        CHECK(parsed[i].head_reg == trace[i].head_reg);
      }
      CHECK(format_loss_trace(trace).rfind(kLossTraceHeader, 0) == 0);
    }
  }

  TEST_CASE("same seed gives bit-identical loss traces") {
    auto cfg = testutil::micro_config(3);
    cfg.schedule.epochs = 2;
    const auto samples = micro_samples(cfg, 4);
    TrainOptions o;
    o.seed = 9;
    Detector<float> a(cfg, 1), b(cfg, 1);
    const auto ta = train(a, samples, o), tb = train(b, samples, o);
    CHECK(format_loss_trace(ta) == format_loss_trace(tb));
    for (std::size_t k = 0; k < a.parameters().size(); ++k)
      CHECK(a.parameters()[k].value.storage() == b.parameters()[k].value.storage());
    o.seed = 10;
    Detector<float> c(cfg, 1);
    CHECK(format_loss_trace(train(c, samples, o)) != format_loss_trace(ta));
  }

  TEST_CASE("non-finite losses abort with diagnostics") {
    auto cfg = testutil::micro_config(1);
    cfg.schedule.base_lr = 1e12;
    cfg.schedule.epochs = 3;
    const auto samples = micro_samples(cfg, 2);
    Detector<float> d(cfg, 1);
    try {
      train(d, samples, TrainOptions{});
      FAIL("expected a numeric failure");
    } catch (const NumericError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("iteration") != std::string::npos);
      CHECK(msg.find("micro") != std::string::npos);
    }
  }

  TEST_CASE("checkpoints round-trip exactly and reject mismatches") {
    auto cfg = testutil::micro_config(3);
    cfg.schedule.epochs = 2;
    const auto samples = micro_samples(cfg, 2);
    Detector<float> d(cfg, 1);
    testutil::TempDir dir("ckpt");
    TrainOptions o;
    o.checkpoint_dir = dir.path();
    train(d, samples, o);
    CHECK(std::filesystem::exists(dir / "epoch_1.ckpt"));
    CHECK(std::filesystem::exists(dir / "epoch_2.ckpt"));
    save_checkpoint(dir / "m.ckpt", d, 2);
    const auto ck = load_checkpoint(dir / "m.ckpt");
    CHECK(ck.epoch == 2);
    CHECK(ck.config.fingerprint() == cfg.fingerprint());
    CHECK(load_checkpoint(dir / "epoch_2.ckpt").model.parameters()[0].value.storage() ==
          d.parameters()[0].value.storage());
    for (const auto& s : samples) {
      const auto a = d.detect(d.make_input(s.group)), b = ck.model.detect(ck.model.make_input(s.group));
      REQUIRE(a.size() == b.size());
      for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].box == b[i].box);
        CHECK(a[i].score == b[i].score);
      }
    }
    CHECK(config_text(parse_config_text(config_text(cfg), "t")) == config_text(cfg));

    const std::string bytes = io::read_file(dir / "m.ckpt");
    io::write_file_atomic(dir / "cut.ckpt", bytes.substr(0, bytes.size() - 7));
    CHECK_THROWS_AS(load_checkpoint(dir / "cut.ckpt"), DataError);

    auto other = cfg;
    other.num_images = 5;
    try {
      load_checkpoint(dir / "m.ckpt", other);
      FAIL("expected a fingerprint mismatch");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("fingerprint") != std::string::npos);
    }
    CHECK_NOTHROW(load_checkpoint(dir / "m.ckpt", cfg));

    auto tensors = nn::read_tensor_file(dir / "m.ckpt");
    tensors.erase(tensors.begin());
    nn::write_tensor_file(dir / "missing.ckpt", tensors);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), DataError);
  }

  TEST_CASE("feature cache changes nothing but the work done") {
    auto cfg = testutil::micro_config(3);
    Detector<float> d(cfg, 2);
    const auto mv = testutil::micro_volume(21, 32, 14);
    std::vector<int> all(mv.volume.nz);
    std::iota(all.begin(), all.end(), 0);
    VolumeInference cached(d, mv.volume, true), plain(d, mv.volume, false);
    const auto a = cached.detect_all(all), b = plain.detect_all(all);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].box == b[i].box);
      CHECK(a[i].score == b[i].score);
      CHECK(a[i].image == b[i].image);
    }
    CHECK(plain.backbone_runs() == 3 * mv.volume.nz);
    CHECK(cached.backbone_runs() == cached.cache_size());
    CHECK(cached.backbone_runs() < plain.backbone_runs());
    // the group's own images also match a direct detect call
    const auto direct = d.detect(d.make_input(ct::group_slices(mv.volume, 5, 3)));
    const auto one = plain.detect(5);
    REQUIRE(direct.size() == one.size());
    for (std::size_t i = 0; i < one.size(); ++i) CHECK(direct[i].box == one[i].box);
  }

  TEST_CASE("total loss falls across the first epoch for M in {1, 3}") {
    for (int m : {1, 3}) {
      CAPTURE(m);
      auto cfg = desk_config(m);
      cfg.schedule.epochs = 1;
      const auto samples = synth_train_samples(cfg, 140, 2024);
      REQUIRE(samples.size() >= 200);
      Detector<float> d(cfg, 1);
      TrainOptions o;
      o.seed = 1;
      const auto trace = train(d, samples, o);
      REQUIRE(trace.size() >= 100);
      auto window = [&](std::size_t start) {
        double s = 0;
        for (std::size_t i = start; i < start + 50; ++i) s += trace[i].total;
        return s / 50;
      };
      // 50-iteration moving average sampled every 25 iterations
      std::vector<double> ma;
      for (std::size_t start = 0; start + 50 <= trace.size(); start += 25) ma.push_back(window(start));
      ma.push_back(window(trace.size() - 50));
      for (std::size_t i = 1; i < ma.size(); ++i) CHECK(ma[i] < ma[i - 1]);
    }
  }

  TEST_CASE("toy training localises a synthetic lesion") {
    auto cfg = desk_config(3);
    const auto samples = synth_train_samples(cfg, 10, 5);
    REQUIRE(samples.size() >= 15);
    Detector<float> d(cfg, 1);
    const double before = fixture_loss(d, samples[0]);
    TrainOptions o;
    o.seed = 1;
    train(d, samples, o);
    CHECK(fixture_loss(d, samples[0]) < before);
    int hits = 0;
    for (const auto& s : samples) {
      const auto dets = d.detect(d.make_input(s.group));
      REQUIRE(!dets.empty());
      double best = 0;
      for (const auto& g : s.gt_boxes) best = std::max(best, det::iou(g, dets.front().box));
      hits += best >= 0.5;
    }
    const auto top = d.detect(d.make_input(samples[0].group)).front();
    double iou0 = 0;
    for (const auto& g : samples[0].gt_boxes) iou0 = std::max(iou0, det::iou(g, top.box));
    CHECK(iou0 >= 0.5);
    MESSAGE("top-1 hits on training images: " << hits << "/" << samples.size());
  }
}
