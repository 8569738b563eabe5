#include "adod/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <tuple>

#include "adod/error.hpp"
#include "adod/ops.hpp"

namespace adod {

double BBox::area() const {
  return std::max(0.0, x_max - x_min) * std::max(0.0, y_max - y_min);
}

BBox BBox::clamped() const {
  auto c = [](double v) { return std::clamp(v, 0.0, 1.0); };
  BBox b{c(x_min), c(y_min), c(x_max), c(y_max)};
  b.x_max = std::max(b.x_max, b.x_min);
  b.y_max = std::max(b.y_max, b.y_min);
  return b;
}

double iou(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  const double inter = (iw > 0 && ih > 0) ? iw * ih : 0.0;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

std::vector<std::vector<Detection>> decode_predictions(
    const Tensor& head, const std::array<Anchor, kAnchorsPerScale>& anchors,
    std::size_t num_classes, std::size_t input_width, double conf_threshold,
    std::size_t scale_origin) {
  if (!(conf_threshold >= 0.0 && conf_threshold <= 1.0))
    throw ValidationError("decode_predictions: conf_threshold must lie in [0,1]");
  const std::size_t per_anchor = 5 + num_classes;
  if (head.rank() != 4 || head.dim(1) != kAnchorsPerScale * per_anchor)
    throw ValidationError("decode_predictions: head " + shape_str(head.shape()) +
                          " inconsistent with " + std::to_string(num_classes) + " classes");
  const std::size_t n = head.dim(0), gh = head.dim(2), gw = head.dim(3);
  const double W = static_cast<double>(input_width);
  std::vector<std::vector<Detection>> out(n);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t a = 0; a < kAnchorsPerScale; ++a) {
      const std::size_t base = a * per_anchor;
      for (std::size_t cy = 0; cy < gh; ++cy)
        for (std::size_t cx = 0; cx < gw; ++cx) {
          const double obj = ops::sigmoid_scalar(head.at(b, base + 4, cy, cx));
          if (obj < conf_threshold) continue;
          const double px = (ops::sigmoid_scalar(head.at(b, base + 0, cy, cx)) + cx) / gw;
          const double py = (ops::sigmoid_scalar(head.at(b, base + 1, cy, cx)) + cy) / gh;
          const double pw = anchors[a].w * std::exp(head.at(b, base + 2, cy, cx)) / W;
          const double ph = anchors[a].h * std::exp(head.at(b, base + 3, cy, cx)) / W;
          const BBox box =
              BBox{px - pw / 2, py - ph / 2, px + pw / 2, py + ph / 2}.clamped();
          for (std::size_t k = 0; k < num_classes; ++k) {
            const double score = obj * ops::sigmoid_scalar(head.at(b, base + 5 + k, cy, cx));
            if (score >= conf_threshold && score > 0.0)
              out[b].push_back({box, k, score, scale_origin});
          }
        }
    }
  return out;
}

bool detection_order(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.class_id != b.class_id) return a.class_id < b.class_id;
  return std::tie(a.bbox.x_min, a.bbox.y_min, a.bbox.x_max, a.bbox.y_max) <
         std::tie(b.bbox.x_min, b.bbox.y_min, b.bbox.x_max, b.bbox.y_max);
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0))
    throw ValidationError("nms: iou_threshold must lie in (0,1]");
  std::stable_sort(dets.begin(), dets.end(), detection_order);
  std::vector<Detection> kept;
  // Per-class index into `kept` keeps the inner loop to same-class boxes.
  std::vector<std::vector<std::size_t>> by_class;
  for (const Detection& d : dets) {
    if (d.class_id >= by_class.size()) by_class.resize(d.class_id + 1);
    bool keep = true;
    for (std::size_t idx : by_class[d.class_id])
      if (iou(kept[idx].bbox, d.bbox) >= iou_threshold) {
        keep = false;
        break;
      }
    if (keep) {
      by_class[d.class_id].push_back(kept.size());
      kept.push_back(d);
    }
  }
  return kept;
}

std::vector<std::vector<Detection>> detect(const Network& net, const Tensor& images,
                                           double conf_threshold, double nms_iou) {
  Tape tape;
  ForwardOptions fo;
  fo.mode = ops::Mode::kEval;
  fo.compute_domain = false;
  const MultiScaleOutput out = net.forward(tape, images, fo);
  const NetworkSpec& spec = net.spec();
  std::vector<std::vector<Detection>> per_image(images.dim(0));
  for (std::size_t s = 0; s < kNumScales; ++s) {
    auto dets = decode_predictions(out.heads[s].value(), spec.scale_anchors(s), spec.num_classes,
                                   spec.input_width, conf_threshold, s);
    for (std::size_t n = 0; n < dets.size(); ++n)
      per_image[n].insert(per_image[n].end(), dets[n].begin(), dets[n].end());
  }
  for (auto& d : per_image) d = nms(std::move(d), nms_iou);
  return per_image;
}

std::string format_dump_line(std::size_t image_id, const Detection& det) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%zu %zu %.6f %.6f %.6f %.6f %.6f", image_id, det.class_id,
                det.score, det.bbox.x_min, det.bbox.y_min, det.bbox.x_max, det.bbox.y_max);
  return buf;
}

void write_detection_dump(std::ostream& out, const std::vector<DumpRecord>& records) {
  for (const auto& r : records) out << format_dump_line(r.image_id, r.det) << '\n';
}

std::vector<DumpRecord> read_detection_dump(std::istream& in) {
  std::vector<DumpRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    std::istringstream is(line);
    DumpRecord r;
    if (!(is >> r.image_id >> r.det.class_id >> r.det.score >> r.det.bbox.x_min >>
          r.det.bbox.y_min >> r.det.bbox.x_max >> r.det.bbox.y_max))
      throw ValidationError("detection dump line " + std::to_string(lineno) + " is malformed");
    out.push_back(r);
  }
  return out;
}

}  // namespace adod
