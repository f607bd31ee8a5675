#include "ctx3d/cli/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <sstream>

#include "ctx3d/binary_io.hpp"
#include "ctx3d/cli/stage.hpp"
#include "ctx3d/csv.hpp"
#include "ctx3d/ct/manifest.hpp"
#include "ctx3d/ct/preprocess.hpp"
#include "ctx3d/det/detection_io.hpp"
#include "ctx3d/errors.hpp"
#include "ctx3d/eval/froc.hpp"
#include "ctx3d/model/checkpoint.hpp"
#include "ctx3d/model/dataset.hpp"
#include "ctx3d/model/inference.hpp"
#include "ctx3d/model/trainer.hpp"
#include "ctx3d/synth/synth.hpp"

namespace ctx3d::cli {
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

model::ModelConfig resolve_config(const std::optional<fs::path>& file, const std::vector<std::string>& overrides) {
  model::ModelConfig cfg = model::desk_preset();
  if (file) {
    for (const auto& [k, v] : model::parse_key_values(io::read_file(*file), file->string())) {
      model::set_config_value(cfg, k, v);
    }
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + o + "'");
    model::set_config_value(cfg, o.substr(0, eq), o.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

namespace {

struct RunRecord {
  std::string command;
  std::vector<std::string> argv;
  json config = json::object();
  std::optional<std::uint64_t> seed;
  json inputs = json::object();
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void set_config(const model::ModelConfig& cfg) {
    config = json::object();
    for (const auto& [k, v] : model::config_entries(cfg)) config[k] = v;
    config["fingerprint"] = io::hex64(cfg.fingerprint());
  }

  // Writes the run manifest into the stage (named `name`) and commits.
  void finish(OutputStage& stage, const std::string& name) const {
    json j;
    j["command"] = command;
    j["argv"] = argv;
    j["config"] = config;
    if (seed) {
      j["seed"] = *seed;
    } else {
      j["seed"] = nullptr;
    }
    j["inputs"] = inputs;
    json outputs = json::array();
    for (const auto& [path, hash] : stage.hashes()) {
      outputs.push_back({{"path", (stage.base_dir() / path).generic_string()}, {"fnv1a64", io::hex64(hash)}});
    }
    j["outputs"] = outputs;
    j["wall_clock_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    stage.write(name, j.dump(2) + "\n");
    stage.commit();
  }
};

std::string manifest_name_for(const fs::path& file) { return file.filename().string() + ".run.json"; }

fs::path parent_or_dot(const fs::path& p) { return p.has_parent_path() ? p.parent_path() : fs::path("."); }

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
  std::string out;
  int volumes = 100;
  std::uint64_t seed = 0;
  synth::SynthConfig cfg;
};

int cmd_synth(const SynthArgs& a, RunRecord rec, std::ostream& out) {
  rec.seed = a.seed;
  rec.config = {{"volumes", a.volumes},
                {"nz", a.cfg.nz},
                {"ny", a.cfg.ny},
                {"nx", a.cfg.nx},
                {"lesions", a.cfg.num_lesions},
                {"confusers", a.cfg.num_confusers},
                {"radius_min_mm", a.cfg.radius_min_mm},
                {"radius_max_mm", a.cfg.radius_max_mm},
                {"background_hu", a.cfg.background_hu},
                {"noise_std_hu", a.cfg.noise_std_hu},
                {"object_offset_hu", a.cfg.object_offset_hu}};
  const auto ds = synth::generate_dataset(a.cfg, a.volumes, a.seed);
  OutputStage stage(a.out);
  synth::write_dataset(ds, stage.path(""));
  rec.finish(stage, "run_manifest.json");
  out << "synth: " << ds.volumes.size() << " volumes (train " << ds.split.train.size() << ", val "
      << ds.split.val.size() << ", test " << ds.split.test.size() << ") -> " << a.out << "\n";
  return kOk;
}

// ---- preprocess -----------------------------------------------------------

struct PreprocessArgs {
  std::string volume, out, annotations, annotations_out;
  double border_threshold = ct::kDefaultBorderThreshold;
};

int cmd_preprocess(const PreprocessArgs& a, RunRecord rec, std::ostream& out) {
  if (a.annotations.empty() != a.annotations_out.empty()) {
    throw std::invalid_argument("--annotations and --annotations-out go together");
  }
  rec.inputs["volume"] = a.volume;
  rec.config = {{"border_threshold", a.border_threshold}};
  const ct::Volume raw = ct::read_volume(a.volume);
  const ct::PreprocessResult res = ct::preprocess(raw, a.border_threshold);
  ct::Volume v = res.volume;
  v.id = fs::path(a.out).stem().string();
  const fs::path out_path(a.out);
  OutputStage stage(parent_or_dot(out_path));
  stage.write(out_path.filename(), ct::encode_volume(v));
  if (!a.annotations.empty()) {
    rec.inputs["annotations"] = a.annotations;
    auto rows = ct::parse_annotations(io::read_file(a.annotations), a.annotations);
    for (auto& r : rows) {
      if (r.volume_id != raw.id) continue;
      r.box = res.transform.apply(r.box);
      r.key_slice = res.transform.apply_slice(r.key_slice);
      r.volume_id = v.id;
    }
    const fs::path ann(a.annotations_out);
    if (parent_or_dot(ann) != parent_or_dot(out_path)) {
      throw std::invalid_argument("--annotations-out must be in the same directory as --out");
    }
    stage.write(ann.filename(), ct::format_annotations(rows));
  }
  rec.finish(stage, manifest_name_for(out_path));
  out << "preprocess: " << raw.nz << "x" << raw.ny << "x" << raw.nx << " -> " << v.nz << "x" << v.ny << "x" << v.nx
      << " (crop y " << res.region.y0 << ".." << res.region.y1 << ", x " << res.region.x0 << ".." << res.region.x1
      << ")\n";
  return kOk;
}

// ---- train ----------------------------------------------------------------

struct ConfigArgs {
  std::string config;
  std::vector<std::string> sets;
  model::ModelConfig resolve() const {
    return resolve_config(config.empty() ? std::nullopt : std::optional<fs::path>(config), sets);
  }
};

struct TrainArgs {
  ConfigArgs cfg;
  std::string train, annotations, out;
  std::uint64_t seed = 0;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a, RunRecord rec, std::ostream& out) {
  const model::ModelConfig cfg = a.cfg.resolve();
  rec.set_config(cfg);
  rec.seed = a.seed;
  rec.inputs = {{"train", a.train}, {"annotations", a.annotations}};
  if (!a.cfg.config.empty()) rec.inputs["config"] = a.cfg.config;
  const auto manifest = ct::read_manifest(a.train);
  const auto annotations = ct::read_annotations(a.annotations);
  const auto samples = model::load_samples(cfg, manifest, annotations);

  OutputStage stage(a.out);
  model::Detector<float> detector(cfg, a.seed);
  model::TrainOptions opts;
  opts.seed = a.seed;
  opts.checkpoint_dir = stage.path("checkpoints");
  int last_epoch = 0;
  opts.on_iteration = [&](const model::LossRecord& r) {
    if (!a.quiet && r.epoch != last_epoch) {
      out << "train: epoch " << r.epoch << " lr " << csv::fmt(r.lr) << "\n";
      last_epoch = r.epoch;
    }
  };
  const auto trace = model::train(detector, samples, opts);
  stage.write("loss_trace.csv", model::format_loss_trace(trace));
  model::save_checkpoint(stage.path("model.ckpt"), detector, cfg.schedule.epochs);
  rec.finish(stage, "run_manifest.json");
  out << "train: " << samples.size() << " samples, " << trace.size() << " iterations, final loss "
      << csv::fmt(trace.back().total) << " -> " << a.out << "\n";
  return kOk;
}

// ---- infer ----------------------------------------------------------------

struct InferArgs {
  std::string checkpoint, volume, slices = "all", manifest, out;
  bool no_cache = false;
};

std::vector<int> parse_slices(const std::string& spec, std::size_t nz) {
  std::vector<int> out;
  if (spec == "all") {
    for (std::size_t k = 0; k < nz; ++k) out.push_back(static_cast<int>(k));
    return out;
  }
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto dash = item.find('-', 1);
    const int lo = static_cast<int>(csv::to_int(item.substr(0, dash), "--slices"));
    const int hi = dash == std::string::npos ? lo : static_cast<int>(csv::to_int(item.substr(dash + 1), "--slices"));
    for (int k = lo; k <= hi; ++k) {
      if (k < 0 || static_cast<std::size_t>(k) >= nz) {
        throw DataError("--slices: slice " + std::to_string(k) + " is outside the volume (" + std::to_string(nz) +
                        " slices)");
      }
      out.push_back(k);
    }
  }
  return out;
}

int cmd_infer(const InferArgs& a, RunRecord rec, std::ostream& out) {
  if (a.volume.empty() == a.manifest.empty()) throw std::invalid_argument("infer needs exactly one of --volume or --manifest");
  const model::Checkpoint ck = model::load_checkpoint(a.checkpoint);
  rec.set_config(ck.config);
  rec.inputs = {{"checkpoint", a.checkpoint}};
  rec.config["feature_cache"] = !a.no_cache;

  // Key slices grouped per volume file, in first-appearance order.
  std::vector<std::pair<std::string, std::vector<int>>> jobs;
  std::map<std::string, std::string> ids;
  if (!a.volume.empty()) {
    rec.inputs["volume"] = a.volume;
    rec.inputs["slices"] = a.slices;
    jobs.emplace_back(a.volume, std::vector<int>{});
  } else {
    rec.inputs["manifest"] = a.manifest;
    for (const auto& e : ct::read_manifest(a.manifest)) {
      auto it = std::find_if(jobs.begin(), jobs.end(), [&](const auto& j) { return j.first == e.path; });
      if (it == jobs.end()) {
        jobs.emplace_back(e.path, std::vector<int>{});
        it = std::prev(jobs.end());
      }
      it->second.push_back(e.key_slice);
      ids[e.path] = e.volume_id;
    }
  }

  std::vector<det::Detection> dets;
  std::size_t images = 0;
  for (auto& [path, slices] : jobs) {
    ct::WindowedVolume vol = model::load_windowed_volume(path);
    if (auto it = ids.find(path); it != ids.end()) vol.id = it->second;
    if (!a.volume.empty()) slices = parse_slices(a.slices, vol.nz);
    for (int k : slices) {
      if (k < 0 || static_cast<std::size_t>(k) >= vol.nz) {
        throw DataError("infer: key slice " + std::to_string(k) + " is outside volume '" + vol.id + "'");
      }
    }
    model::VolumeInference inf(ck.model, vol, !a.no_cache);
    const auto d = inf.detect_all(slices);
    dets.insert(dets.end(), d.begin(), d.end());
    images += slices.size();
  }
  const fs::path out_path(a.out);
  OutputStage stage(parent_or_dot(out_path));
  stage.write(out_path.filename(), det::format_detections(dets));
  rec.finish(stage, manifest_name_for(out_path));
  out << "infer: " << images << " key slices, " << dets.size() << " detections -> " << a.out << "\n";
  return kOk;
}

// ---- eval -----------------------------------------------------------------

struct EvalArgs {
  std::string dets, gt, manifest, criterion = "iou", out = ".", label = "model";
  double threshold = 0.5;
  double fp_rate = 4;
};

int cmd_eval(const EvalArgs& a, RunRecord rec, std::ostream& out) {
  const eval::Criterion crit = eval::parse_criterion(a.criterion);
  rec.inputs = {{"dets", a.dets}, {"gt", a.gt}};
  rec.config = {{"criterion", eval::criterion_name(crit)}, {"threshold", a.threshold}, {"fp_rate", a.fp_rate}};
  const auto dets = det::read_detections(a.dets);
  const auto annotations = ct::read_annotations(a.gt);
  eval::GroundTruthSet gts;
  if (!a.manifest.empty()) {
    rec.inputs["manifest"] = a.manifest;
    gts = model::ground_truth(ct::read_manifest(a.manifest), annotations);
  } else {
    for (const auto& ann : annotations) {
      gts.images[det::ImageKey{ann.volume_id, ann.key_slice}].push_back(
          eval::GtLesion{ann.box, ann.type, ann.diameter_mm});
    }
    for (const auto& d : dets) gts.images[d.image];
  }
  if (gts.num_lesions() == 0) throw DataError("eval: the ground truth holds no lesions");
  for (const auto& d : dets) {
    if (!gts.images.count(d.image)) {
      throw DataError("eval: detection on image " + d.image.volume_id + "@" + std::to_string(d.image.key_slice) +
                      " which is not in the manifest");
    }
  }
  const auto curve = eval::froc_curve(dets, gts, crit, a.threshold);
  const auto table = eval::sensitivity_table(curve);
  const auto report = eval::stratified_report(dets, gts, crit, a.threshold, a.fp_rate);
  const std::string table_text = eval::format_sensitivity_header() + "\n" + eval::format_sensitivity_row(a.label, table) + "\n";

  OutputStage stage(a.out);
  stage.write("froc.csv", eval::format_froc_csv(curve));
  stage.write("sensitivity.txt", table_text);
  stage.write("sensitivity.csv", eval::format_sensitivity_csv(a.label, table));
  stage.write("stratified.txt", eval::format_stratified_text(a.label, report));
  stage.write("stratified.csv", eval::format_stratified_csv(report));
  rec.finish(stage, "eval_manifest.json");
  out << table_text;
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"3D-context lesion detection: synthetic data, preprocessing, training, inference, FROC evaluation",
               args.empty() ? "ctx3d" : fs::path(args[0]).filename().string()};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  SynthArgs sa;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic sphere/disk dataset");
  synth_cmd->add_option("--out", sa.out, "Output directory")->required();
  synth_cmd->add_option("--volumes", sa.volumes, "Number of volumes (>= 3)")->capture_default_str();
  synth_cmd->add_option("--seed", sa.seed, "RNG seed")->capture_default_str();
  synth_cmd->add_option("--slices", sa.cfg.nz, "Slices per volume")->capture_default_str();
  synth_cmd->add_option("--size", sa.cfg.ny, "In-plane size in pixels (square)")->capture_default_str();
  synth_cmd->add_option("--lesions", sa.cfg.num_lesions, "Spheres per volume")->capture_default_str();
  synth_cmd->add_option("--confusers", sa.cfg.num_confusers, "Disks per volume")->capture_default_str();
  synth_cmd->add_option("--noise", sa.cfg.noise_std_hu, "Noise std in HU")->capture_default_str();

  PreprocessArgs pa;
  auto* pre_cmd = app.add_subcommand("preprocess", "Resample to 0.8 mm x 2 mm and clip black borders");
  pre_cmd->add_option("--volume", pa.volume, "Input CTVOL file")->required()->check(CLI::ExistingFile);
  pre_cmd->add_option("--out", pa.out, "Output CTVOL file")->required();
  pre_cmd->add_option("--annotations", pa.annotations, "Annotations in the raw volume frame")->check(CLI::ExistingFile);
  pre_cmd->add_option("--annotations-out", pa.annotations_out, "Transformed annotations");
  pre_cmd->add_option("--border-threshold", pa.border_threshold, "Black-border threshold on [0,255]")
      ->capture_default_str();

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a detector");
  train_cmd->add_option("--config", ta.cfg.config, "Config file (key = value lines)")->check(CLI::ExistingFile);
  train_cmd->add_option("--set", ta.cfg.sets, "Override key=value (repeatable)");
  train_cmd->add_option("--train", ta.train, "Training manifest CSV")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--annotations", ta.annotations, "Annotation CSV")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", ta.out, "Output directory")->required();
  train_cmd->add_option("--seed", ta.seed, "RNG seed")->capture_default_str();
  train_cmd->add_flag("--quiet", ta.quiet, "No per-epoch progress");

  InferArgs ia;
  auto* infer_cmd = app.add_subcommand("infer", "Detect lesions");
  infer_cmd->add_option("--checkpoint", ia.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("--volume", ia.volume, "CTVOL file")->check(CLI::ExistingFile);
  infer_cmd->add_option("--slices", ia.slices, "Key slices for --volume: all, or a list like 3,5,8-10")
      ->capture_default_str();
  infer_cmd->add_option("--manifest", ia.manifest, "Manifest CSV of key slices")->check(CLI::ExistingFile);
  infer_cmd->add_option("--out", ia.out, "Detections CSV")->required();
  infer_cmd->add_flag("--no-cache", ia.no_cache, "Recompute per-image features for every key slice");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "FROC evaluation");
  eval_cmd->add_option("--dets", ea.dets, "Detections CSV")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--gt", ea.gt, "Annotation CSV")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--manifest", ea.manifest, "Evaluated images (adds lesion-free images and slice intervals)")
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--criterion", ea.criterion, "iou or iobb")->capture_default_str();
  eval_cmd->add_option("--threshold", ea.threshold, "Overlap must exceed this")->capture_default_str();
  eval_cmd->add_option("--fp-rate", ea.fp_rate, "FPs per image for the stratified report")->capture_default_str();
  eval_cmd->add_option("--label", ea.label, "Row label in the tables")->capture_default_str();
  eval_cmd->add_option("--out", ea.out, "Output directory")->capture_default_str();

  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    // CLI11 checks required options before leftover tokens; name the unknown token first.
    const auto extra = app.remaining(true);
    if (e.get_exit_code() != 0 && !extra.empty()) {
      err << "usage error: unrecognised argument '" << extra.front() << "'\n"
          << "Run with --help for more information.\n";
      return kUsage;
    }
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }
  RunRecord rec;
  rec.argv = args;
  try {
    if (*synth_cmd) {
      rec.command = "synth";
      sa.cfg.nx = sa.cfg.ny;
      return cmd_synth(sa, rec, out);
    }
    if (*pre_cmd) {
      rec.command = "preprocess";
      return cmd_preprocess(pa, rec, out);
    }
    if (*train_cmd) {
      rec.command = "train";
      return cmd_train(ta, rec, out);
    }
    if (*infer_cmd) {
      rec.command = "infer";
      return cmd_infer(ia, rec, out);
    }
    rec.command = "eval";
    return cmd_eval(ea, rec, out);
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kNumericError;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::invalid_argument& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  }
}

}  // namespace ctx3d::cli
