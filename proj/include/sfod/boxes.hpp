#pragma once

#include <array>
#include <span>
#include <vector>

namespace sfod {

/// Axis-aligned box in continuous pixel coordinates, half-open [x1,x2)x[y1,y2).
struct Box {
  float x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  float width() const { return x2 - x1; }
  float height() const { return y2 - y1; }
  float area() const { return width() > 0 && height() > 0 ? width() * height() : 0.0f; }
  float center_x() const { return 0.5f * (x1 + x2); }
  float center_y() const { return 0.5f * (y1 + y2); }
  bool valid() const;

  bool operator==(const Box&) const = default;
};

/// Ground-truth (or pseudo-label) box with its class.
struct Annotation {
  Box box;
  int class_id = 0;

  bool operator==(const Annotation&) const = default;
};

struct Detection {
  Box box;
  int class_id = 0;
  float score = 0;

  bool operator==(const Detection&) const = default;
};

float iou(const Box& a, const Box& b);

Box clip_box(const Box& b, float width, float height);

/// Canonical detection order: score descending, then class id ascending,
/// then (x1, y1, x2, y2) ascending.
bool detection_before(const Detection& a, const Detection& b);

/// Greedy per-class suppression; output in canonical order.
std::vector<Detection> nms(std::vector<Detection> dets, float iou_threshold);

using Deltas = std::array<float, 4>;

/// (dx, dy, dw, dh) = ((x - xa)/wa, (y - ya)/ha, log(w/wa), log(h/ha)) on centers.
Deltas encode_deltas(const Box& box, const Box& anchor);
Box decode_deltas(const Deltas& deltas, const Box& anchor);

/// Anchors for a feature map of `rows` x `cols` cells at `stride` pixels.
/// Ordered by (row, col, scale, aspect); aspect is height/width.
std::vector<Box> make_anchors(int rows, int cols, int stride, std::span<const float> scales,
                              std::span<const float> aspects);

struct AnchorLabel {
  enum Kind { Negative, Ignore, Positive };
  Kind kind = Negative;
  int gt = -1;  // matched ground-truth index when Positive

  bool operator==(const AnchorLabel&) const = default;
};

/// RPN assignment. An anchor is positive when its best IoU reaches pos_thr or
/// it is the (lowest-index) best anchor of some ground truth with IoU > 0;
/// negative when its best IoU is <= neg_thr; ignored otherwise. Positives are
/// matched to their best ground truth (lowest index on ties).
std::vector<AnchorLabel> match_anchors(std::span<const Box> anchors, std::span<const Box> gt_boxes,
                                       float pos_thr, float neg_thr);

}  // namespace sfod
