#pragma once

#include <array>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctx3d/det/box.hpp"

namespace ctx3d::eval {

using det::Box;
using det::Detection;
using det::ImageKey;

enum class Criterion { IoU, IoBB };

std::string criterion_name(Criterion c);
// Accepts "iou" / "iobb" (case-insensitive).
Criterion parse_criterion(const std::string& s);
double overlap(Criterion c, const Box& gt, const Box& det);

struct GtLesion {
  Box box;
  int type = 0;  // 0..7: LU ME LV ST PV AB KD BN
  double diameter_mm = 0;
  double slice_interval_mm = std::numeric_limits<double>::quiet_NaN();  // source scan; NaN if unknown
};

/// Per-image lesions. Images with no lesions must still be present: they
/// count toward the false-positives-per-image denominator.
struct GroundTruthSet {
  std::map<ImageKey, std::vector<GtLesion>> images;

  std::size_t num_images() const { return images.size(); }
  std::size_t num_lesions() const;
};

struct MatchResult {
  std::vector<char> det_tp;   // per input detection
  std::vector<int> det_gt;    // matched lesion index within its image, or -1
  std::map<ImageKey, std::vector<char>> gt_matched;
};

// Greedy by descending score (ties: input order). A detection is a TP when its
// best-overlapping unmatched lesion on the same image has overlap strictly
// greater than `threshold`; that lesion is then consumed. Detections on images
// absent from `gts` are rejected with std::invalid_argument.
MatchResult match_detections(std::span<const Detection> dets, const GroundTruthSet& gts, Criterion criterion,
                             double threshold);

struct OperatingPoint {
  double score_cutoff = 0;  // detections with score >= cutoff are kept
  double fp_per_image = 0;
  double sensitivity = 0;
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
};

inline constexpr std::array<double, 6> kFrocFpRates{0.5, 1, 2, 4, 8, 16};

struct FrocCurve {
  std::vector<OperatingPoint> points;  // one per distinct score, descending cutoff
  std::size_t num_images = 0;
  std::size_t num_lesions = 0;

  // Step convention: best sensitivity among points with fp_per_image <= rate; 0 if none.
  double sensitivity_at(double fp_rate) const;
  // The point realising sensitivity_at(fp_rate), or nullptr.
  const OperatingPoint* operating_point(double fp_rate) const;
};

// Throws std::invalid_argument if `gts` holds no lesions.
FrocCurve froc_curve(std::span<const Detection> dets, const GroundTruthSet& gts, Criterion criterion,
                     double threshold = 0.5);
FrocCurve froc_from_matches(std::span<const Detection> dets, const MatchResult& match, const GroundTruthSet& gts);

std::array<double, 6> sensitivity_table(const FrocCurve& curve);

struct Stratum {
  std::string group;  // "type", "diameter", "interval"
  std::string name;   // e.g. "LU", "<10", ">2.5"
  std::size_t lesions = 0;
  std::size_t detected = 0;
  std::optional<double> sensitivity;  // absent for an empty stratum
};

struct StratifiedReport {
  double fp_rate = 4;
  double score_cutoff = 0;
  double overall_sensitivity = 0;
  std::vector<Stratum> strata;  // fixed order: 8 types, 3 diameters, 2 intervals

  const Stratum* find(const std::string& group, const std::string& name) const;
};

// The cutoff is fixed globally at the operating point for fp_rate; each
// stratum's sensitivity is then taken over that stratum's lesions only.
StratifiedReport stratified_report(std::span<const Detection> dets, const GroundTruthSet& gts, Criterion criterion,
                                   double threshold, double fp_rate = 4);

const std::array<const char*, 8>& lesion_type_names();
std::string diameter_bucket(double diameter_mm);
std::optional<std::string> interval_bucket(double slice_interval_mm);

// Report rendering.
std::string format_sensitivity_header();
std::string format_sensitivity_row(const std::string& label, const std::array<double, 6>& values);
std::string format_sensitivity_csv(const std::string& label, const std::array<double, 6>& values);
std::string format_froc_csv(const FrocCurve& curve);
std::string format_stratified_text(const std::string& label, const StratifiedReport& report);
std::string format_stratified_csv(const StratifiedReport& report);

}  // namespace ctx3d::eval
