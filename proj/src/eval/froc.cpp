#include "ctx3d/eval/froc.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ctx3d/csv.hpp"
#include "ctx3d/det/geometry.hpp"

namespace ctx3d::eval {
namespace {

std::vector<std::size_t> score_order(std::span<const Detection> dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  return order;
}

std::string pct(std::optional<double> v) { return v ? csv::fixed(100.0 * *v, 2) : std::string("-"); }

}  // namespace

std::string criterion_name(Criterion c) { return c == Criterion::IoU ? "iou" : "iobb"; }

Criterion parse_criterion(const std::string& s) {
  std::string lower;
  for (char ch : s) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  if (lower == "iou") return Criterion::IoU;
  if (lower == "iobb") return Criterion::IoBB;
  throw std::invalid_argument("unknown overlap criterion '" + s + "' (expected iou or iobb)");
}

double overlap(Criterion c, const Box& gt, const Box& det) {
  return c == Criterion::IoU ? det::iou(gt, det) : det::iobb(gt, det);
}

std::size_t GroundTruthSet::num_lesions() const {
  std::size_t n = 0;
  for (const auto& [key, lesions] : images) n += lesions.size();
  return n;
}

MatchResult match_detections(std::span<const Detection> dets, const GroundTruthSet& gts, Criterion criterion,
                             double threshold) {
  MatchResult m;
  m.det_tp.assign(dets.size(), 0);
  m.det_gt.assign(dets.size(), -1);
  for (const auto& [key, lesions] : gts.images) m.gt_matched[key].assign(lesions.size(), 0);
  for (std::size_t i : score_order(dets)) {
    const Detection& d = dets[i];
    auto it = gts.images.find(d.image);
    if (it == gts.images.end()) {
      throw std::invalid_argument("match_detections: detection on unknown image " + d.image.volume_id + ":" +
                                  std::to_string(d.image.key_slice));
    }
    auto& matched = m.gt_matched[d.image];
    int best = -1;
    double best_ov = -1;
    for (std::size_t g = 0; g < it->second.size(); ++g) {
      if (matched[g]) continue;
      const double ov = overlap(criterion, it->second[g].box, d.box);
      if (ov > best_ov) {
        best_ov = ov;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0 && best_ov > threshold) {
      matched[static_cast<std::size_t>(best)] = 1;
      m.det_tp[i] = 1;
      m.det_gt[i] = best;
    }
  }
  return m;
}

double FrocCurve::sensitivity_at(double fp_rate) const {
  const OperatingPoint* p = operating_point(fp_rate);
  return p ? p->sensitivity : 0.0;
}

const OperatingPoint* FrocCurve::operating_point(double fp_rate) const {
  const OperatingPoint* best = nullptr;
  for (const auto& p : points) {
    if (p.fp_per_image <= fp_rate && (!best || p.sensitivity > best->sensitivity)) best = &p;
  }
  return best;
}

FrocCurve froc_from_matches(std::span<const Detection> dets, const MatchResult& match, const GroundTruthSet& gts) {
  FrocCurve c;
  c.num_images = gts.num_images();
  c.num_lesions = gts.num_lesions();
  if (c.num_lesions == 0) throw std::invalid_argument("froc_curve: ground truth holds no lesions");
  const auto order = score_order(dets);
  std::size_t tp = 0, fp = 0;
  for (std::size_t q = 0; q < order.size(); ++q) {
    const std::size_t i = order[q];
    if (match.det_tp[i]) {
      ++tp;
    } else {
      ++fp;
    }
    // Emit once per distinct score, after all tied detections are counted.
    if (q + 1 < order.size() && dets[order[q + 1]].score == dets[i].score) continue;
    c.points.push_back({dets[i].score, static_cast<double>(fp) / static_cast<double>(c.num_images),
                        static_cast<double>(tp) / static_cast<double>(c.num_lesions), tp, fp});
  }
  return c;
}

FrocCurve froc_curve(std::span<const Detection> dets, const GroundTruthSet& gts, Criterion criterion,
                     double threshold) {
  if (gts.num_lesions() == 0) throw std::invalid_argument("froc_curve: ground truth holds no lesions");
  return froc_from_matches(dets, match_detections(dets, gts, criterion, threshold), gts);
}

std::array<double, 6> sensitivity_table(const FrocCurve& curve) {
  std::array<double, 6> out{};
  for (std::size_t i = 0; i < kFrocFpRates.size(); ++i) out[i] = curve.sensitivity_at(kFrocFpRates[i]);
  return out;
}

const std::array<const char*, 8>& lesion_type_names() {
  static const std::array<const char*, 8> names{"LU", "ME", "LV", "ST", "PV", "AB", "KD", "BN"};
  return names;
}

std::string diameter_bucket(double d) {
  if (d < 10) return "<10";
  if (d <= 30) return "10~30";
  return ">30";
}

std::optional<std::string> interval_bucket(double s) {
  if (!std::isfinite(s)) return std::nullopt;
  return s < 2.5 ? std::string("<2.5") : std::string(">2.5");
}

const Stratum* StratifiedReport::find(const std::string& group, const std::string& name) const {
  for (const auto& s : strata) {
    if (s.group == group && s.name == name) return &s;
  }
  return nullptr;
}

StratifiedReport stratified_report(std::span<const Detection> dets, const GroundTruthSet& gts, Criterion criterion,
                                   double threshold, double fp_rate) {
  const MatchResult match = match_detections(dets, gts, criterion, threshold);
  const FrocCurve curve = froc_from_matches(dets, match, gts);
  StratifiedReport r;
  r.fp_rate = fp_rate;
  const OperatingPoint* op = curve.operating_point(fp_rate);
  r.score_cutoff = op ? op->score_cutoff : std::numeric_limits<double>::infinity();
  r.overall_sensitivity = op ? op->sensitivity : 0.0;

  // Lesions detected at the global cutoff.
  std::map<ImageKey, std::vector<char>> hit;
  for (const auto& [key, lesions] : gts.images) hit[key].assign(lesions.size(), 0);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (match.det_tp[i] && dets[i].score >= r.score_cutoff) hit[dets[i].image][static_cast<std::size_t>(match.det_gt[i])] = 1;
  }

  for (const char* name : lesion_type_names()) r.strata.push_back({"type", name, 0, 0, std::nullopt});
  for (const char* name : {"<10", "10~30", ">30"}) r.strata.push_back({"diameter", name, 0, 0, std::nullopt});
  for (const char* name : {"<2.5", ">2.5"}) r.strata.push_back({"interval", name, 0, 0, std::nullopt});
  auto bump = [&](const std::string& group, const std::string& name, bool detected) {
    for (auto& s : r.strata) {
      if (s.group == group && s.name == name) {
        ++s.lesions;
        if (detected) ++s.detected;
      }
    }
  };
  for (const auto& [key, lesions] : gts.images) {
    for (std::size_t g = 0; g < lesions.size(); ++g) {
      const GtLesion& l = lesions[g];
      const bool d = hit[key][g] != 0;
      if (l.type >= 0 && l.type < 8) bump("type", lesion_type_names()[static_cast<std::size_t>(l.type)], d);
      bump("diameter", diameter_bucket(l.diameter_mm), d);
      if (auto b = interval_bucket(l.slice_interval_mm)) bump("interval", *b, d);
    }
  }
  for (auto& s : r.strata) {
    if (s.lesions > 0) s.sensitivity = static_cast<double>(s.detected) / static_cast<double>(s.lesions);
  }
  return r;
}

std::string format_sensitivity_header() {
  std::string s = "FPs per image";
  for (double r : kFrocFpRates) s += "\t" + csv::fmt(r);
  return s;
}

std::string format_sensitivity_row(const std::string& label, const std::array<double, 6>& values) {
  std::string s = label;
  for (double v : values) s += "\t" + csv::fixed(100.0 * v, 2);
  return s;
}

std::string format_sensitivity_csv(const std::string& label, const std::array<double, 6>& values) {
  std::string s = "method";
  for (double r : kFrocFpRates) s += ",fp_" + csv::fmt(r);
  s += "\n" + label;
  for (double v : values) s += "," + csv::fixed(100.0 * v, 2);
  return s + "\n";
}

std::string format_froc_csv(const FrocCurve& curve) {
  std::string s = "fp_per_image,sensitivity\n";
  for (const auto& p : curve.points) s += csv::fmt(p.fp_per_image) + "," + csv::fmt(p.sensitivity) + "\n";
  return s;
}

std::string format_stratified_text(const std::string& label, const StratifiedReport& report) {
  std::string head = "Sensitivity (%) at " + csv::fmt(report.fp_rate) + " FPs per image\n";
  std::string names = "";
  std::string values = label;
  const std::string groups[] = {"type", "diameter", "interval"};
  for (const auto& g : groups) {
    names += "\t|";
    values += "\t|";
    for (const auto& s : report.strata) {
      if (s.group != g) continue;
      names += "\t" + s.name;
      values += "\t" + pct(s.sensitivity);
    }
  }
  return head + "lesion type / diameter (mm) / slice interval (mm)\n" + names + "\n" + values + "\n";
}

std::string format_stratified_csv(const StratifiedReport& report) {
  std::string s = "group,stratum,lesions,detected,sensitivity\n";
  for (const auto& st : report.strata) {
    s += st.group + "," + st.name + "," + std::to_string(st.lesions) + "," + std::to_string(st.detected) + "," +
         (st.sensitivity ? csv::fixed(100.0 * *st.sensitivity, 2) : std::string("absent")) + "\n";
  }
  return s;
}

}  // namespace ctx3d::eval
