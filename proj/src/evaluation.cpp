#include "adod/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "adod/config.hpp"
#include "adod/error.hpp"

namespace adod {

std::vector<std::string> default_class_names() {
  return {"echinus", "starfish", "holothurian", "scallop", "waterweed"};
}

void EvalConfig::validate() const {
  if (!(iou_match_threshold > 0.0 && iou_match_threshold < 1.0))
    throw ValidationError("iou_match_threshold must lie in (0,1)");
}

MatchResult match_detections(const std::vector<DumpRecord>& dets,
                             const std::vector<std::vector<GtBox>>& gts_per_image,
                             std::size_t class_id, double iou_threshold) {
  MatchResult result;
  std::vector<std::vector<bool>> used(gts_per_image.size());
  for (std::size_t i = 0; i < gts_per_image.size(); ++i) {
    used[i].assign(gts_per_image[i].size(), false);
    for (const auto& g : gts_per_image[i])
      if (g.class_id == class_id) ++result.num_gt;
  }
  std::vector<const DumpRecord*> mine;
  for (const auto& d : dets)
    if (d.det.class_id == class_id) mine.push_back(&d);
  std::stable_sort(mine.begin(), mine.end(), [](const DumpRecord* a, const DumpRecord* b) {
    return a->det.score > b->det.score;
  });
  for (const DumpRecord* d : mine) {
    bool tp = false;
    if (d->image_id < gts_per_image.size()) {
      const auto& gts = gts_per_image[d->image_id];
      double best = -1.0;
      std::size_t best_idx = 0;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (gts[g].class_id != class_id || used[d->image_id][g]) continue;
        const double v = iou(d->det.bbox, gts[g].bbox);
        if (v > best) {
          best = v;
          best_idx = g;
        }
      }
      if (best >= iou_threshold) {
        used[d->image_id][best_idx] = true;
        tp = true;
      }
    }
    result.labeled.push_back({d->det.score, tp});
  }
  return result;
}

double average_precision(std::vector<LabeledDetection> labeled, std::size_t num_gt,
                         Interpolation interpolation) {
  if (num_gt == 0) return 0.0;
  std::stable_sort(labeled.begin(), labeled.end(),
                   [](const LabeledDetection& a, const LabeledDetection& b) {
                     return a.score > b.score;
                   });
  std::vector<double> recall, precision;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    if (labeled[i].true_positive) ++tp;
    recall.push_back(static_cast<double>(tp) / static_cast<double>(num_gt));
    precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
  }
  // Precision envelope: max precision at any rank at or beyond this one.
  std::vector<double> envelope(precision);
  for (std::size_t i = envelope.size(); i-- > 1;)
    envelope[i - 1] = std::max(envelope[i - 1], envelope[i]);

  if (interpolation == Interpolation::kElevenPoint) {
    double s = 0.0;
    for (int t = 0; t <= 10; ++t) {
      const double r = t / 10.0;
      double p = 0.0;
      for (std::size_t i = 0; i < recall.size(); ++i)
        if (recall[i] >= r - 1e-12) {
          p = envelope[i];
          break;
        }
      s += p;
    }
    return s / 11.0;
  }
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    if (recall[i] > prev_recall) {
      ap += (recall[i] - prev_recall) * envelope[i];
      prev_recall = recall[i];
    }
  }
  return ap;
}

double round2(double percent) { return std::round(percent * 100.0) / 100.0; }

double mean_ap(const std::vector<double>& per_class_ap) {
  if (per_class_ap.empty()) throw ValidationError("mean_ap needs at least one class");
  const double mean = std::accumulate(per_class_ap.begin(), per_class_ap.end(), 0.0) /
                      static_cast<double>(per_class_ap.size());
  return round2(100.0 * mean);
}

EvalReport evaluate(const std::vector<DumpRecord>& dets,
                    const std::vector<std::vector<GtBox>>& gts_per_image,
                    const std::vector<std::string>& class_names, const EvalConfig& cfg) {
  cfg.validate();
  if (class_names.empty()) throw ValidationError("evaluate needs at least one class");
  EvalReport rep;
  rep.class_names = class_names;
  std::vector<double> aps;
  for (std::size_t k = 0; k < class_names.size(); ++k) {
    MatchResult m = match_detections(dets, gts_per_image, k, cfg.iou_match_threshold);
    for (const auto& l : m.labeled) (l.true_positive ? rep.true_positives : rep.false_positives)++;
    const double ap = average_precision(m.labeled, m.num_gt, cfg.interpolation);
    aps.push_back(ap);
    rep.ap_percent.push_back(round2(100.0 * ap));
    rep.gt_per_class.push_back(m.num_gt);
  }
  rep.map_percent = mean_ap(aps);
  return rep;
}

namespace {

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace

std::string render_report(const EvalReport& r, ReportFormat format) {
  std::ostringstream os;
  switch (format) {
    case ReportFormat::kText: {
      std::vector<std::size_t> widths;
      for (const auto& n : r.class_names) widths.push_back(std::max<std::size_t>(n.size(), 6));
      for (std::size_t k = 0; k < r.class_names.size(); ++k) {
        os << (k ? "  " : "");
        os << std::string(widths[k] - r.class_names[k].size(), ' ') << r.class_names[k];
      }
      os << "     mAP\n";
      for (std::size_t k = 0; k < r.class_names.size(); ++k) {
        const std::string v = fixed2(r.ap_percent[k]);
        os << (k ? "  " : "") << std::string(widths[k] - v.size(), ' ') << v;
      }
      const std::string m = fixed2(r.map_percent);
      os << "  " << std::string(6 - std::min<std::size_t>(6, m.size()), ' ') << m << "\n";
      break;
    }
    case ReportFormat::kCsv: {
      for (const auto& n : r.class_names) os << n << ',';
      os << "mAP\n";
      for (double v : r.ap_percent) os << fixed2(v) << ',';
      os << fixed2(r.map_percent) << '\n';
      break;
    }
    case ReportFormat::kJson: {
      nlohmann::json detection = nlohmann::json::object();
      nlohmann::json counts = nlohmann::json::object();
      for (std::size_t k = 0; k < r.class_names.size(); ++k) {
        detection[r.class_names[k]] = round2(r.ap_percent[k]);
        counts["gt_" + r.class_names[k]] = r.gt_per_class.size() > k ? r.gt_per_class[k] : 0;
      }
      detection["mAP"] = round2(r.map_percent);
      counts["true_positives"] = r.true_positives;
      counts["false_positives"] = r.false_positives;
      nlohmann::json j;
      j["detection"] = detection;
      j["counts"] = counts;
      os << j.dump(2) << '\n';
      break;
    }
  }
  return os.str();
}

void emit_report(const EvalReport& report, ReportFormat format, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write report " + path);
  out << render_report(report, format);
  if (!out) throw IoError("failed writing report " + path);
}

EvalReport parse_csv_report(const std::string& text) {
  std::istringstream is(text);
  std::string header, values;
  if (!std::getline(is, header) || !std::getline(is, values))
    throw ValidationError("csv report needs a header and a value row");
  const auto names = split(header, ',');
  const auto vals = split(values, ',');
  if (names.size() != vals.size() || names.size() < 2 || names.back() != "mAP")
    throw ValidationError("csv report header/value mismatch");
  EvalReport r;
  for (std::size_t i = 0; i + 1 < names.size(); ++i) {
    r.class_names.push_back(names[i]);
    r.ap_percent.push_back(std::stod(vals[i]));
  }
  r.map_percent = std::stod(vals.back());
  return r;
}

}  // namespace adod
