#pragma once

#include <array>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "vlpd/box.hpp"

namespace vlpd {

struct SubsetSpec {
  std::string name;
  double h_min = 0.0;
  double h_max = std::numeric_limits<double>::infinity();
  double v_min = 0.0;
  double v_max = 1.0;

  bool contains(const BoundingBox& gt) const;

  static SubsetSpec reasonable();
  static SubsetSpec small();
  static SubsetSpec heavy_occlusion();  // "HO"
  static SubsetSpec reasonable_plus_ho();  // "R+HO"
  static SubsetSpec heavy();
  static std::vector<SubsetSpec> predefined();
  // Throws InvalidArgument for an unknown name.
  static SubsetSpec by_name(const std::string& name);
};

struct SubsetPartition {
  std::vector<BoundingBox> evaluated;
  std::vector<BoundingBox> ignored;
};

// Boxes outside the spec (or already flagged ignore) become ignore regions.
// Throws AnnotationError if a box lacks visible_ratio.
SubsetPartition filter_subset(const std::vector<BoundingBox>& gts, const SubsetSpec& spec);

enum class MatchLabel { kTruePositive, kFalsePositive, kIgnored };

struct MatchResult {
  std::vector<MatchLabel> labels;  // per detection, in input order
  std::vector<bool> gt_matched;    // per evaluated gt
};

// Greedy by descending score (input order breaks ties): each detection takes
// the unmatched gt of highest IoU >= thr, else an ignore region, else is a FP.
MatchResult match_detections(const std::vector<BoundingBox>& dets, const std::vector<BoundingBox>& gts,
                             const std::vector<BoundingBox>& ignores, double iou_threshold = 0.5);

struct CurvePoint {
  double score_threshold = 0.0;
  double fppi = 0.0;
  double miss_rate = 1.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

struct SubsetEvaluation {
  std::string subset;
  double mr2 = 1.0;
  std::array<double, 9> reference_fppi{};
  std::array<double, 9> reference_miss_rate{};
  std::vector<CurvePoint> curve;
  std::size_t num_images = 0;
  std::size_t num_gt = 0;
};

inline constexpr double kMissRateFloor = 1e-10;

// The 9 FPPI reference points, log-uniform in [1e-2, 1e0].
std::array<double, 9> fppi_reference_points();

using BoxesByImage = std::map<std::string, std::vector<BoundingBox>>;

// Log-average miss rate over the union of images in `gts` and `dets`. An image
// missing from `dets` has no detections; one missing from `gts` is a negative
// image whose detections are all false positives. Throws UndefinedMetricError
// when the subset has no evaluated gt.
SubsetEvaluation evaluate_subset(const BoxesByImage& dets, const BoxesByImage& gts, const SubsetSpec& spec,
                                 double iou_threshold = 0.5);

double log_average_miss_rate(const BoxesByImage& dets, const BoxesByImage& gts, const SubsetSpec& spec);

// Ground-truth file: "image_id x y w h visible_ratio" per line.
BoxesByImage read_ground_truth_file(const std::string& path);
void write_ground_truth_file(const std::string& path, const BoxesByImage& gts);
// Detection file: "image_id x y w h score" per line.
BoxesByImage read_detection_file(const std::string& path);
void write_detection_file(const std::string& path, const BoxesByImage& dets);

// Structured report (JSON) with per-subset MR-2, reference samples and curve.
std::string evaluation_report_json(const std::vector<SubsetEvaluation>& evals);
std::vector<SubsetEvaluation> parse_evaluation_report(const std::string& json_text);

}  // namespace vlpd
