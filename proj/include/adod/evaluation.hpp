#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "adod/postprocess.hpp"

namespace adod {

enum class Interpolation { kAllPoint, kElevenPoint };

struct EvalConfig {
  double iou_match_threshold = 0.5;
  Interpolation interpolation = Interpolation::kAllPoint;
  bool per_class_breakdown = true;

  void validate() const;
};

struct LabeledDetection {
  double score = 0.0;
  bool true_positive = false;
};

// Ground-truth box in normalized corner format.
struct GtBox {
  std::size_t class_id = 0;
  BBox bbox;
};

// Single-class greedy matching. `dets[i]` pairs an image index with a
// detection; detections are processed by descending score (stable), each
// claiming the highest-IoU unmatched GT of its class in its image.
struct MatchResult {
  std::vector<LabeledDetection> labeled;
  std::size_t num_gt = 0;
};
MatchResult match_detections(const std::vector<DumpRecord>& dets,
                             const std::vector<std::vector<GtBox>>& gts_per_image,
                             std::size_t class_id, double iou_threshold);

// AP in [0,1] from a score-ranked TP/FP list.
double average_precision(std::vector<LabeledDetection> labeled, std::size_t num_gt,
                         Interpolation interpolation = Interpolation::kAllPoint);

// Mean of per-class APs (fractions) as a percent rounded to 2 decimals.
double mean_ap(const std::vector<double>& per_class_ap);
double round2(double percent);

struct EvalReport {
  std::vector<std::string> class_names;
  std::vector<double> ap_percent;  // per class
  double map_percent = 0.0;
  std::vector<std::size_t> gt_per_class;
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
};

EvalReport evaluate(const std::vector<DumpRecord>& dets,
                    const std::vector<std::vector<GtBox>>& gts_per_image,
                    const std::vector<std::string>& class_names, const EvalConfig& cfg = {});

enum class ReportFormat { kText, kCsv, kJson };

std::string render_report(const EvalReport& report, ReportFormat format);
void emit_report(const EvalReport& report, ReportFormat format, const std::string& path);
// Parses the csv rendering back (class names, APs, mAP).
EvalReport parse_csv_report(const std::string& text);

std::vector<std::string> default_class_names();

}  // namespace adod
