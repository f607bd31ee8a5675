#include "ctx3d/synth/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "ctx3d/ct/preprocess.hpp"

namespace ctx3d::synth {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  // 53 random bits -> [0, 1)
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

bool clear_of(const SynthObject& a, const std::vector<SynthObject>& placed, double margin) {
  for (const auto& b : placed) {
    const double d = std::sqrt((a.cz_mm - b.cz_mm) * (a.cz_mm - b.cz_mm) + (a.cy_mm - b.cy_mm) * (a.cy_mm - b.cy_mm) +
                               (a.cx_mm - b.cx_mm) * (a.cx_mm - b.cx_mm));
    if (d < a.radius_mm + b.radius_mm + margin) return false;
  }
  return true;
}

}  // namespace

void SynthConfig::validate() const {
  if (nz < 1 || ny < 1 || nx < 1) throw std::invalid_argument("synth: dimensions must be >= 1");
  if (!(spacing.dz > 0 && spacing.dy > 0 && spacing.dx > 0)) throw std::invalid_argument("synth: spacing must be positive");
  if (num_lesions < 0 || num_confusers < 0) throw std::invalid_argument("synth: object counts must be >= 0");
  if (!(radius_min_mm > 0) || radius_max_mm < radius_min_mm) throw std::invalid_argument("synth: bad radius range");
  const double interval = std::max(spacing.dz, ct::kTargetSliceInterval);
  if (radius_min_mm < 2 * interval) {
    throw std::invalid_argument("synth: minimum radius must be at least two slice intervals (" +
                                std::to_string(2 * interval) + " mm)");
  }
  if (noise_std_hu < 0 || margin_mm < 0 || max_attempts < 1) throw std::invalid_argument("synth: bad noise/margin/attempts");
  if (num_confusers > 0 && confusers_on_key_slices && num_lesions == 0) {
    throw std::invalid_argument("synth: confusers on key slices need at least one lesion");
  }
}

SynthVolume generate_volume(const SynthConfig& cfg, std::uint64_t seed, std::string id) {
  cfg.validate();
  std::mt19937_64 rng(splitmix64(seed));
  SynthVolume out;
  const ct::Spacing sp = cfg.spacing;
  const double z_max = static_cast<double>(cfg.nz - 1) * sp.dz;
  const double y_max = static_cast<double>(cfg.ny - 1) * sp.dy;
  const double x_max = static_cast<double>(cfg.nx - 1) * sp.dx;

  auto place = [&](bool sphere, int slice_hint) {
    for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
      SynthObject o;
      o.sphere = sphere;
      o.radius_mm = uniform(rng, cfg.radius_min_mm, cfg.radius_max_mm);
      const double lo = cfg.margin_mm + o.radius_mm;
      if (lo > y_max - lo || lo > x_max - lo) continue;
      o.cy_mm = uniform(rng, lo, y_max - lo);
      o.cx_mm = uniform(rng, lo, x_max - lo);
      if (slice_hint >= 0) {
        o.center_slice = slice_hint;
      } else if (sphere) {
        const int first = static_cast<int>(std::ceil(o.radius_mm / sp.dz - 1e-9));
        const int last = static_cast<int>(cfg.nz) - 1 - first;
        if (last < first) continue;
        o.center_slice = first + static_cast<int>(rng() % static_cast<std::uint64_t>(last - first + 1));
      } else {
        o.center_slice = static_cast<int>(rng() % cfg.nz);
      }
      o.cz_mm = o.center_slice * sp.dz;
      if (sphere && (o.cz_mm - o.radius_mm < 0 || o.cz_mm + o.radius_mm > z_max)) continue;
      if (!clear_of(o, out.objects, cfg.margin_mm)) continue;
      out.objects.push_back(o);
      return;
    }
    throw std::runtime_error("synth: could not place " + std::string(sphere ? "lesion" : "confuser") + " #" +
                             std::to_string(out.objects.size()) + " in volume '" + id + "' after " +
                             std::to_string(cfg.max_attempts) + " attempts");
  };

  for (int i = 0; i < cfg.num_lesions; ++i) place(true, -1);
  std::vector<int> centers;
  for (const auto& o : out.objects) centers.push_back(o.center_slice);
  for (int i = 0; i < cfg.num_confusers; ++i) {
    place(false, cfg.confusers_on_key_slices ? centers[static_cast<std::size_t>(i) % centers.size()] : -1);
  }

  // Render: background + noise, objects raised by the offset.
  out.volume = ct::Volume(id, cfg.nz, cfg.ny, cfg.nx, sp);
  std::vector<double> hu(out.volume.voxels.size(), cfg.background_hu);
  for (const auto& o : out.objects) {
    const double r2 = o.radius_mm * o.radius_mm;
    const int z0 = o.sphere ? static_cast<int>(std::ceil((o.cz_mm - o.radius_mm) / sp.dz)) : o.center_slice;
    const int z1 = o.sphere ? static_cast<int>(std::floor((o.cz_mm + o.radius_mm) / sp.dz)) : o.center_slice;
    const int y0 = static_cast<int>(std::ceil((o.cy_mm - o.radius_mm) / sp.dy));
    const int y1 = static_cast<int>(std::floor((o.cy_mm + o.radius_mm) / sp.dy));
    const int x0 = static_cast<int>(std::ceil((o.cx_mm - o.radius_mm) / sp.dx));
    const int x1 = static_cast<int>(std::floor((o.cx_mm + o.radius_mm) / sp.dx));
    for (int z = std::max(z0, 0); z <= std::min(z1, static_cast<int>(cfg.nz) - 1); ++z) {
      const double dzm = o.sphere ? z * sp.dz - o.cz_mm : 0.0;
      for (int y = std::max(y0, 0); y <= std::min(y1, static_cast<int>(cfg.ny) - 1); ++y) {
        const double dym = y * sp.dy - o.cy_mm;
        for (int x = std::max(x0, 0); x <= std::min(x1, static_cast<int>(cfg.nx) - 1); ++x) {
          const double dxm = x * sp.dx - o.cx_mm;
          if (dzm * dzm + dym * dym + dxm * dxm <= r2) {
            hu[(static_cast<std::size_t>(z) * cfg.ny + static_cast<std::size_t>(y)) * cfg.nx + static_cast<std::size_t>(x)] =
                cfg.background_hu + cfg.object_offset_hu;
          }
        }
      }
    }
  }
  std::normal_distribution<double> noise(0.0, cfg.noise_std_hu > 0 ? cfg.noise_std_hu : 1.0);
  for (std::size_t i = 0; i < hu.size(); ++i) {
    double v = hu[i];
    if (cfg.noise_std_hu > 0) v += noise(rng);
    out.volume.voxels[i] = static_cast<std::int16_t>(std::clamp(std::nearbyint(v), -32768.0, 32767.0));
  }

  // Annotations live in the preprocessed frame (0.8 mm pixels, 2 mm slices).
  const std::size_t nz_pre =
      static_cast<std::size_t>(std::floor(z_max / ct::kTargetSliceInterval + 1e-9)) + 1;
  auto to_px = [](double mm, double spacing) { return (mm / spacing + 0.5) * (spacing / ct::kTargetPixelSpacing); };
  for (const auto& o : out.objects) {
    if (!o.sphere) continue;
    out.key_slices.push_back(static_cast<int>(std::lround(o.cz_mm / ct::kTargetSliceInterval)));
    for (std::size_t j = 0; j < nz_pre; ++j) {
      const double dzm = static_cast<double>(j) * ct::kTargetSliceInterval - o.cz_mm;
      if (std::abs(dzm) >= o.radius_mm) continue;
      const double rj = std::sqrt(o.radius_mm * o.radius_mm - dzm * dzm);
      ct::Annotation a;
      a.volume_id = id;
      a.key_slice = static_cast<int>(j);
      a.box = {to_px(o.cx_mm - rj, sp.dx), to_px(o.cy_mm - rj, sp.dy), to_px(o.cx_mm + rj, sp.dx),
               to_px(o.cy_mm + rj, sp.dy)};
      a.type = 0;
      a.diameter_mm = 2 * rj;
      out.annotations.push_back(a);
    }
  }
  std::sort(out.annotations.begin(), out.annotations.end(),
            [](const ct::Annotation& a, const ct::Annotation& b) { return a.key_slice < b.key_slice; });
  std::sort(out.key_slices.begin(), out.key_slices.end());
  out.key_slices.erase(std::unique(out.key_slices.begin(), out.key_slices.end()), out.key_slices.end());
  return out;
}

DatasetSplit split_volumes(std::vector<std::string> ids, std::uint64_t seed) {
  std::mt19937_64 rng(splitmix64(seed ^ 0x5b1175ULL));
  for (std::size_t i = ids.size(); i > 1; --i) {
    std::swap(ids[i - 1], ids[static_cast<std::size_t>(rng() % i)]);
  }
  const std::size_t n = ids.size();
  const std::size_t n_val = n * 15 / 100, n_test = n * 15 / 100;
  DatasetSplit s;
  s.val.assign(ids.begin(), ids.begin() + static_cast<long>(n_val));
  s.test.assign(ids.begin() + static_cast<long>(n_val), ids.begin() + static_cast<long>(n_val + n_test));
  s.train.assign(ids.begin() + static_cast<long>(n_val + n_test), ids.end());
  for (auto* v : {&s.train, &s.val, &s.test}) std::sort(v->begin(), v->end());
  return s;
}

SynthDataset generate_dataset(const SynthConfig& cfg, int n_volumes, std::uint64_t seed) {
  if (n_volumes < 3) throw std::invalid_argument("generate_dataset: need at least 3 volumes");
  SynthDataset ds;
  std::vector<std::string> ids;
  for (int i = 0; i < n_volumes; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "synth_%04d", i);
    ds.volumes.push_back(generate_volume(cfg, splitmix64(seed) ^ splitmix64(static_cast<std::uint64_t>(i) + 1), name));
    ids.emplace_back(name);
  }
  ds.split = split_volumes(std::move(ids), seed);
  return ds;
}

std::vector<ct::ManifestEntry> manifest_for(const SynthDataset& ds, const std::vector<std::string>& ids) {
  std::vector<ct::ManifestEntry> out;
  for (const auto& id : ids) {
    auto it = std::find_if(ds.volumes.begin(), ds.volumes.end(), [&](const SynthVolume& v) { return v.volume.id == id; });
    if (it == ds.volumes.end()) throw std::invalid_argument("manifest_for: unknown volume " + id);
    for (int k : it->key_slices) out.push_back({id, "volumes/" + id + ".ctvol", k, it->volume.spacing.dz});
  }
  return out;
}

std::vector<std::filesystem::path> write_dataset(const SynthDataset& ds, const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> written;
  std::filesystem::create_directories(dir / "volumes");
  std::vector<ct::Annotation> all;
  for (const auto& v : ds.volumes) {
    const auto p = dir / "volumes" / (v.volume.id + ".ctvol");
    ct::write_volume(p, v.volume);
    written.push_back(p);
    all.insert(all.end(), v.annotations.begin(), v.annotations.end());
  }
  ct::write_annotations(dir / "annotations.csv", all);
  written.push_back(dir / "annotations.csv");
  const std::pair<const char*, const std::vector<std::string>*> splits[] = {
      {"train.csv", &ds.split.train}, {"val.csv", &ds.split.val}, {"test.csv", &ds.split.test}};
  for (const auto& [name, ids] : splits) {
    ct::write_manifest(dir / name, manifest_for(ds, *ids));
    written.push_back(dir / name);
  }
  return written;
}

}  // namespace ctx3d::synth
