#include <doctest.h>

#include <cmath>
#include <map>
#include <random>

#include "ctx3d/det/psroi.hpp"
#include "ctx3d/model/detector.hpp"
#include "ctx3d/nn/grad_check.hpp"
#include "ctx3d/nn/ops.hpp"
#include "model_fixtures.hpp"

using namespace ctx3d;
using namespace ctx3d::model;
using nn::Shape;
using nn::Tape;
using nn::Tensor;
using nn::Var;

namespace {

using Params = std::map<std::string, Var>;

Params named(const Detector<double>& d, const std::vector<Var>& p) {
  Params out;
  for (std::size_t i = 0; i < p.size(); ++i) out[d.parameters()[i].name] = p[i];
  return out;
}

Tensor<double> image_at(const Tensor<double>& images, std::size_t m) {
  const std::size_t plane = 3 * images.dim(2) * images.dim(3);
  std::vector<double> v(images.storage().begin() + static_cast<long>(m * plane),
                        images.storage().begin() + static_cast<long>((m + 1) * plane));
  return Tensor<double>(Shape{1, 3, images.dim(2), images.dim(3)}, std::move(v));
}

Var conv(Tape<double>& t, Params& p, const std::string& name, Var x, int pad) {
  return nn::conv2d(t, x, p.at(name + "/weight"), p.at(name + "/bias"), 1, pad);
}

// The tiny backbone written out layer by layer.
Var ref_backbone(Tape<double>& t, Params& p, Var x) {
  for (const char* name : {"conv1", "conv2", "conv3"}) x = nn::max_pool2(t, nn::relu(t, conv(t, p, name, x, 1)));
  return nn::relu(t, conv(t, p, "conv4", x, 1));
}

Tensor<double> label_mask(const std::vector<int>& labels, const std::vector<det::Deltas>& d, Tensor<double>* target) {
  Tensor<double> mask(Shape{labels.size(), 4});
  *target = Tensor<double>(Shape{labels.size(), 4});
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == 1)
      for (std::size_t k = 0; k < 4; ++k) {
        mask[i * 4 + k] = 1;
        (*target)[i * 4 + k] = d[i][k];
      }
  return mask;
}

struct RefOut {
  Var rpn_scores, rpn_deltas, head_scores, head_deltas;
  Var rpn_cls, rpn_reg, head_cls, head_reg, total;
};

// Reference graph: image m uses its own parameter set per_image[m]; RPN and
// head use the central set. With one shared set for all images this is the
// 3DCE graph; with M = 1 it is a single-image R-FCN.
RefOut ref_forward(Tape<double>& t, std::vector<Params>& per_image, const ModelConfig& cfg, const Tensor<double>& images,
                   const TrainTargets& tg) {
  const std::size_t m = images.dim(0), c = m / 2;
  std::vector<Var> c5(m), c6(m);
  for (std::size_t i = 0; i < m; ++i) {
    c5[i] = ref_backbone(t, per_image[i], t.constant(image_at(images, i)));
    c6[i] = conv(t, per_image[i], "conv6", c5[i], 0);
  }
  Params& pc = per_image[c];
  RefOut o;
  Var h = nn::relu(t, conv(t, pc, "rpn_conv", c5[c], 1));
  o.rpn_scores = nn::map_to_rows(t, conv(t, pc, "rpn_cls", h, 0), 2);
  o.rpn_deltas = nn::map_to_rows(t, conv(t, pc, "rpn_bbox", h, 0), 4);
  Var fused = m == 1 ? c6[0] : nn::concat_channels<double>(t, c6);
  Var pooled = det::psroi_pool(t, fused, std::span<const det::Box>(tg.rois), cfg.pooled_size, 8);
  Var flat = nn::reshape(t, pooled, Shape{tg.rois.size(), std::size_t(cfg.pooled_size * cfg.pooled_size) *
                                                               std::size_t(cfg.feature_depth) * m});
  Var fc7 = nn::relu(t, nn::fully_connected(t, flat, pc.at("fc7/weight"), pc.at("fc7/bias")));
  o.head_scores = nn::fully_connected(t, fc7, pc.at("cls/weight"), pc.at("cls/bias"));
  o.head_deltas = nn::fully_connected(t, fc7, pc.at("bbox/weight"), pc.at("bbox/bias"));
  Tensor<double> rt, ht;
  const auto rm = label_mask(tg.rpn_labels, tg.rpn_deltas, &rt);
  const auto hm = label_mask(tg.roi_labels, tg.roi_deltas, &ht);
  o.rpn_cls = nn::softmax_cross_entropy(t, o.rpn_scores, std::span<const int>(tg.rpn_labels), -1);
  o.rpn_reg = nn::smooth_l1(t, o.rpn_deltas, rt, rm);
  o.head_cls = nn::softmax_cross_entropy(t, o.head_scores, std::span<const int>(tg.roi_labels), -1);
  o.head_reg = nn::smooth_l1(t, o.head_deltas, ht, hm);
  const Var terms[4] = {o.rpn_cls, o.rpn_reg, o.head_cls, o.head_reg};
  const double w[4] = {1, 1, 1, cfg.bbox_reg_loss_weight};
  o.total = nn::weighted_sum<double>(t, terms, w);
  return o;
}

// Closed forms evaluated with plain loops.
double ce_closed(const Tensor<double>& z, const std::vector<int>& labels) {
  double s = 0;
  int n = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) continue;
    const double a = z[i * 2], b = z[i * 2 + 1], mx = std::max(a, b);
    const double lse = mx + std::log(std::exp(a - mx) + std::exp(b - mx));
    s += lse - z[i * 2 + static_cast<std::size_t>(labels[i])];
    ++n;
  }
  return n ? s / n : 0.0;
}

double sl1_closed(const Tensor<double>& x, const std::vector<int>& labels, const std::vector<det::Deltas>& d) {
  double s = 0;
  int n = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t k = 0; k < 4; ++k) {
      const double e = std::abs(x[i * 4 + k] - d[i][k]);
      s += e < 1 ? 0.5 * e * e : e - 0.5;
      ++n;
    }
  }
  return n ? s / n : 0.0;
}

struct Fixture {
  ModelConfig cfg;
  Detector<double> model;
  SampleInput<double> input;
  std::vector<det::Box> gt;
  TrainTargets targets;

  explicit Fixture(int m, std::uint64_t seed = 1, double head_scale = 1.0)
      : cfg(testutil::micro_config(m)), model(cfg, seed) {
    const auto mv = testutil::micro_volume(seed + 100);
    const auto s = testutil::micro_sample(cfg, mv);
    input = model.make_input(s.group);
    gt = s.gt_boxes;
    // Larger head weights keep every gradient well above rounding noise.
    for (auto& p : model.parameters())
      if (p.name.rfind("conv", 0) != 0 || p.name.rfind("conv6", 0) == 0)
        for (auto& v : p.value.data()) v *= head_scale;
    Tape<double> t;
    det::Rng rng(seed);
    model.forward_train(t, model.bind(t, false), input, gt, rng, nullptr, &targets);
  }
};

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("channel arithmetic for the full-size configuration") {
    ModelConfig cfg;
    cfg.num_images = 3;
    CHECK(cfg.fusion_channels() == 1470);
    CHECK(cfg.conv6_channels() == 490);
    Detector<float> d(cfg, 1);
    CHECK(d.parameter("conv6/weight").value.shape() == Shape{490, 64, 1, 1});
    CHECK(d.parameter("fc7/weight").value.shape() == Shape{1470, 2048});
    CHECK(d.parameter("cls/weight").value.shape() == Shape{2048, 2});
    CHECK(d.parameter("bbox/weight").value.shape() == Shape{2048, 4});
    CHECK(d.parameter("rpn_cls/weight").value.shape() == Shape{30, 64, 1, 1});

    Tape<float> t;
    const auto p = d.bind(t, false);
    Var c5 = d.backbone(t, p, t.constant(Tensor<float>(Shape{3, 3, 16, 16})));
    std::vector<Var> maps;
    Var c6 = d.conv6(t, p, c5);
    for (std::size_t i = 0; i < 3; ++i) maps.push_back(nn::select_batch(t, c6, i));
    Var fused = d.fuse(t, maps);
    CHECK(t.shape(fused)[1] == 1470);
    auto h = d.head(t, p, fused, {{0, 0, 16, 16}, {2, 2, 10, 12}});
    CHECK(t.shape(h.scores) == Shape{2, 2});
    CHECK(t.shape(h.deltas) == Shape{2, 4});
  }

  TEST_CASE("fused channels are S*S*D*M for M in {1, 3, 5, 9}") {
    for (int m : {1, 3, 5, 9}) {
      ModelConfig cfg;
      cfg.num_images = m;
      cfg.fc7_width = 8;
      Detector<float> d(cfg, 1);
      Tape<float> t;
      const auto p = d.bind(t, false);
      Var c6 = d.conv6(t, p, d.backbone(t, p, t.constant(Tensor<float>(Shape{std::size_t(m), 3, 16, 16}))));
      std::vector<Var> maps;
      for (int i = 0; i < m; ++i) maps.push_back(m == 1 ? c6 : nn::select_batch(t, c6, std::size_t(i)));
      Var fused = d.fuse(t, maps);
      CHECK(t.shape(fused)[1] == std::size_t(490 * m));
      Var pooled = det::psroi_pool(t, fused, std::vector<det::Box>{{0, 0, 16, 16}}, 7, 8);
      CHECK(t.shape(pooled) == Shape{1, std::size_t(10 * m), 7, 7});
    }
  }

  TEST_CASE("tiny backbone has stride 8") {
    ModelConfig cfg;
    cfg.num_images = 1;
    cfg.fc7_width = 8;
    Detector<float> d(cfg, 1);
    Tape<float> t;
    const auto p = d.bind(t, false);
    Var c5 = d.backbone(t, p, t.constant(Tensor<float>(Shape{1, 3, 128, 128})));
    CHECK(t.shape(c5) == Shape{1, 64, 16, 16});
    const auto r = d.rpn(t, p, c5);
    CHECK(r.anchors.size() == 16u * 16u * 15u);
    CHECK(t.shape(r.scores) == Shape{16 * 16 * 15, 2});
    CHECK(t.shape(r.deltas) == Shape{16 * 16 * 15, 4});
  }

  TEST_CASE("vgg16-like backbone keeps stride 8 with 13 convolutions") {
    ModelConfig cfg;
    cfg.num_images = 1;
    cfg.backbone = Backbone::Vgg16Like;
    cfg.fc7_width = 8;
    Detector<float> d(cfg, 1);
    int convs = 0;
    for (const auto& p : d.parameters())
      if (p.name.rfind("conv", 0) == 0 && p.name.find("/weight") != std::string::npos && p.name != "conv6/weight") ++convs;
    CHECK(convs == 13);
    CHECK(d.backbone_width() == 512);
    Tape<float> t;
    const auto p = d.bind(t, false);
    CHECK(t.shape(d.backbone(t, p, t.constant(Tensor<float>(Shape{1, 3, 16, 24})))) == Shape{1, 512, 2, 3});
  }

  TEST_CASE("config validation") {
    ModelConfig c;
    c.num_images = 4;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c.num_images = 3;
    c.key_slice_only = true;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c.key_slice_only = false;
    c.anchor_scales = {};
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    CHECK_THROWS_AS(Detector<float>(c, 1), std::invalid_argument);
    ModelConfig ok;
    CHECK_NOTHROW(ok.validate());
    CHECK(ok.feature_depth == 10);
    CHECK(ok.pooled_size == 7);
    CHECK(ok.fc7_width == 2048);
    CHECK(ok.bbox_reg_loss_weight == 10);
    CHECK(ok.schedule.base_lr == 1e-3);
  }

  TEST_CASE("input normalisation and padding") {
    auto cfg = testutil::micro_config(3);
    Detector<float> d(cfg, 1);
    ct::WindowedVolume v("v", 5, 13, 18, {2.0, 0.8, 0.8}, 67.0f);
    const auto in = d.make_input(ct::group_slices(v, 2, 3));
    CHECK(in.images.shape() == Shape{3, 3, 16, 24});
    CHECK(in.height == 13);
    CHECK(in.width == 18);
    CHECK(in.images.at(1, 2, 12, 17) == doctest::Approx((67.0 - 61) / 3));
    CHECK(in.images.at(0, 0, 13, 0) == 0.0f);
    CHECK(in.images.at(0, 0, 0, 18) == 0.0f);
    CHECK_THROWS_AS(d.make_input(ct::group_slices(v, 2, 1)), std::invalid_argument);
  }

  TEST_CASE("initialisation is deterministic in the seed") {
    auto cfg = testutil::micro_config(1);
    Detector<float> a(cfg, 5), b(cfg, 5), c(cfg, 6);
    for (std::size_t i = 0; i < a.parameters().size(); ++i) {
      CHECK(a.parameters()[i].value.storage() == b.parameters()[i].value.storage());
    }
    CHECK(a.parameter("fc7/weight").value.storage() != c.parameter("fc7/weight").value.storage());
    for (float v : a.parameter("cls/bias").value.data()) CHECK(v == 0.0f);
  }

  TEST_CASE("loss terms equal their closed forms") {
    for (int m : {1, 3}) {
      Fixture f(m);
      REQUIRE(!f.targets.rois.empty());
      REQUIRE(std::count(f.targets.roi_labels.begin(), f.targets.roi_labels.end(), 1) > 0);
      REQUIRE(std::count(f.targets.rpn_labels.begin(), f.targets.rpn_labels.end(), 1) > 0);
      Tape<double> t;
      det::Rng rng(0);
      const auto p = f.model.bind(t, false);
      const auto loss = f.model.forward_train(t, p, f.input, f.gt, rng, &f.targets);

      // Raw network outputs from a separate graph; losses recomputed by hand.
      Tape<double> r;
      auto named_p = named(f.model, f.model.bind(r, false));
      std::vector<Params> per(static_cast<std::size_t>(m), named_p);
      const auto ref = ref_forward(r, per, f.cfg, f.input.images, f.targets);
      const double rpn_cls = ce_closed(r.value(ref.rpn_scores), f.targets.rpn_labels);
      const double rpn_reg = sl1_closed(r.value(ref.rpn_deltas), f.targets.rpn_labels, f.targets.rpn_deltas);
      const double head_cls = ce_closed(r.value(ref.head_scores), f.targets.roi_labels);
      const double head_reg = sl1_closed(r.value(ref.head_deltas), f.targets.roi_labels, f.targets.roi_deltas);
      CHECK(t.value(loss.rpn_cls).item() == doctest::Approx(rpn_cls).epsilon(1e-5));
      CHECK(t.value(loss.rpn_reg).item() == doctest::Approx(rpn_reg).epsilon(1e-5));
      CHECK(t.value(loss.head_cls).item() == doctest::Approx(head_cls).epsilon(1e-5));
      CHECK(t.value(loss.head_reg).item() == doctest::Approx(head_reg).epsilon(1e-5));
      CHECK(t.value(loss.total).item() ==
            doctest::Approx(rpn_cls + rpn_reg + head_cls + 10 * head_reg).epsilon(1e-5));
      for (Var v : {loss.rpn_cls, loss.rpn_reg, loss.head_cls, loss.head_reg}) {
        CHECK(std::isfinite(t.value(v).item()));
        CHECK(t.value(v).item() >= 0.0);
      }
    }
  }

  TEST_CASE("regression weight enters the total linearly") {
    Fixture f(3);
    for (double w : {0.0, 1.0, 10.0}) {
      auto cfg = f.cfg;
      cfg.bbox_reg_loss_weight = w;
      Detector<double> d(cfg, 1);
      d.parameters() = f.model.parameters();
      Tape<double> t;
      det::Rng rng(0);
      const auto l = d.forward_train(t, d.bind(t, false), f.input, f.gt, rng, &f.targets);
      const double three = t.value(l.rpn_cls).item() + t.value(l.rpn_reg).item() + t.value(l.head_cls).item();
      CHECK(t.value(l.total).item() == doctest::Approx(three + w * t.value(l.head_reg).item()).epsilon(1e-12));
    }
  }

  TEST_CASE("M = 1 reduces to a single-image R-FCN") {
    Fixture f(1);
    Tape<double> t;
    det::Rng rng(0);
    const auto loss = f.model.forward_train(t, f.model.bind(t, false), f.input, f.gt, rng, &f.targets);
    Tape<double> r;
    std::vector<Params> one{named(f.model, f.model.bind(r, false))};
    const auto ref = ref_forward(r, one, f.cfg, f.input.images, f.targets);
    CHECK(t.value(loss.total).item() == r.value(ref.total).item());
    CHECK(t.value(loss.head_cls).item() == r.value(ref.head_cls).item());
  }

  TEST_CASE("shared Conv1-6 gradients sum the per-image contributions") {
    Fixture f(3);
    Tape<double> t;
    det::Rng rng(0);
    const auto p = f.model.bind(t, true);
    t.backward(f.model.forward_train(t, p, f.input, f.gt, rng, &f.targets).total);

    // Each image gets its own copy of every parameter; the copies' gradients are summed.
    Tape<double> r;
    std::vector<std::vector<Var>> copies;
    std::vector<Params> per;
    for (int i = 0; i < 3; ++i) {
      copies.push_back(f.model.bind(r, true));
      per.push_back(named(f.model, copies.back()));
    }
    r.backward(ref_forward(r, per, f.cfg, f.input.images, f.targets).total);

    int checked = 0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      const auto& name = f.model.parameters()[k].name;
      const bool shared = name.rfind("conv", 0) == 0;  // conv1-4 and conv6
      if (!shared) continue;
      const auto g = t.grad(p[k]);
      Tensor<double> sum(g.shape());
      int contributing = 0;
      for (int i = 0; i < 3; ++i) {
        const auto gi = r.grad(copies[static_cast<std::size_t>(i)][k]);
        double norm = 0;
        for (std::size_t e = 0; e < gi.numel(); ++e) {
          sum[e] += gi[e];
          norm += std::abs(gi[e]);
        }
        contributing += norm > 0;
      }
      CHECK(contributing == 3);
      double scale = 0;
      for (double v : g.data()) scale = std::max(scale, std::abs(v));
      REQUIRE(scale > 0);
      for (std::size_t e = 0; e < g.numel(); ++e) CHECK(std::abs(g[e] - sum[e]) <= 1e-5 * scale);
      ++checked;
    }
    CHECK(checked == 10);
  }

  TEST_CASE("end-to-end gradient check on the micro model") {
    for (int m : {1, 3}) {
      Fixture f(m, 3, 10.0);
      const auto targets = f.targets;
      for (const char* name : {"conv1/weight", "conv4/bias", "conv6/weight", "rpn_cls/weight", "rpn_bbox/bias",
                               "fc7/bias", "cls/weight", "bbox/weight"}) {
        CAPTURE(m);
        CAPTURE(name);
        std::size_t idx = 0;
        while (f.model.parameters()[idx].name != name) ++idx;
        const auto r = nn::grad_check(
            [&](Tape<double>& t, Var x) {
              auto p = f.model.bind(t, false);
              p[idx] = x;
              det::Rng rng(0);
              return f.model.forward_train(t, p, f.input, f.gt, rng, &targets).total;
            },
            f.model.parameters()[idx].value, 1e-5);
        CHECK(r.max_rel_error < 1e-4);
      }
    }
  }

  TEST_CASE("image without lesions trains the head on background only") {
    auto cfg = testutil::micro_config(3);
    Detector<double> d(cfg, 2);
    const auto mv = testutil::micro_volume(9);
    auto in = d.make_input(ct::group_slices(mv.volume, mv.key_slice, 3));
    Tape<double> t;
    det::Rng rng(1);
    TrainTargets used;
    const auto l = d.forward_train(t, d.bind(t, false), in, {}, rng, nullptr, &used);
    for (int v : used.rpn_labels) CHECK(v != 1);
    for (int v : used.roi_labels) CHECK(v == 0);
    CHECK(t.value(l.rpn_reg).item() == 0.0);
    CHECK(t.value(l.head_reg).item() == 0.0);
    CHECK(std::isfinite(t.value(l.total).item()));
  }

  TEST_CASE("zeroed classifier scores every detection 0.5 and is deterministic") {
    auto cfg = testutil::micro_config(3);
    Detector<float> d(cfg, 4);
    d.parameter("cls/weight").value.fill(0);
    d.parameter("cls/bias").value.fill(0);
    const auto mv = testutil::micro_volume(11);
    const auto in = d.make_input(ct::group_slices(mv.volume, mv.key_slice, 3));
    const auto a = d.detect(in), b = d.detect(in);
    REQUIRE(!a.empty());
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].score == 0.5);
      CHECK(a[i].box == b[i].box);
    }
  }

  TEST_CASE("float and double detectors agree") {
    auto cfg = testutil::micro_config(3);
    Detector<float> f(cfg, 4);
    const auto d = convert_detector<double>(f);
    const auto mv = testutil::micro_volume(12);
    const auto g = ct::group_slices(mv.volume, mv.key_slice, 3);
    Tape<float> tf;
    Tape<double> td;
    const auto in_f = f.make_input(g);
    const auto in_d = d.make_input(g);
    const auto& a = tf.value(f.backbone(tf, f.bind(tf, false), tf.constant(in_f.images)));
    const auto& b = td.value(d.backbone(td, d.bind(td, false), td.constant(in_d.images)));
    double peak = 0;
    for (double v : b.data()) peak = std::max(peak, std::abs(v));
    REQUIRE(peak > 0);
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-4 * peak);
  }
}
