#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "adod/network.hpp"
#include "adod/tensor.hpp"

namespace adod {

// Corner-format box in normalized image coordinates.
struct BBox {
  double x_min = 0.0, y_min = 0.0, x_max = 0.0, y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const;
  BBox clamped() const;
  friend bool operator==(const BBox&, const BBox&) = default;
};

struct Detection {
  BBox bbox;
  std::size_t class_id = 0;
  double score = 0.0;
  std::size_t scale_origin = 0;
  friend bool operator==(const Detection&, const Detection&) = default;
};

double iou(const BBox& a, const BBox& b);

// YOLOv3 decode of one head: per image, every (cell, anchor, class) with
// sigmoid(objectness) * sigmoid(class logit) >= conf_threshold.
std::vector<std::vector<Detection>> decode_predictions(
    const Tensor& head, const std::array<Anchor, kAnchorsPerScale>& anchors,
    std::size_t num_classes, std::size_t input_width, double conf_threshold,
    std::size_t scale_origin = 0);

// Greedy per-class suppression. Candidates are visited by score descending,
// then class id, then lexicographic bbox.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold);

// Canonical NMS visiting order, exposed so reference implementations can
// share the tie-breaking contract.
bool detection_order(const Detection& a, const Detection& b);

// Eval-mode forward, decode of all three heads, then per-image NMS.
std::vector<std::vector<Detection>> detect(const Network& net, const Tensor& images,
                                           double conf_threshold, double nms_iou = 0.45);

// `image_id class_id score x_min y_min x_max y_max`, 6 decimals.
struct DumpRecord {
  std::size_t image_id = 0;
  Detection det;
};
std::string format_dump_line(std::size_t image_id, const Detection& det);
void write_detection_dump(std::ostream& out, const std::vector<DumpRecord>& records);
std::vector<DumpRecord> read_detection_dump(std::istream& in);

}  // namespace adod
