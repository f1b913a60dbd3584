#include "sfod/boxes.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <tuple>

namespace sfod {

bool Box::valid() const {
  return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
         x1 < x2 && y1 < y2;
}

float iou(const Box& a, const Box& b) {
  const float iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const float ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0f;
  const float inter = iw * ih;
  const float uni = a.area() + b.area() - inter;
  return uni > 0 ? std::clamp(inter / uni, 0.0f, 1.0f) : 0.0f;
}

Box clip_box(const Box& b, float width, float height) {
  return {std::clamp(b.x1, 0.0f, width), std::clamp(b.y1, 0.0f, height),
          std::clamp(b.x2, 0.0f, width), std::clamp(b.y2, 0.0f, height)};
}

bool detection_before(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  return std::tie(a.class_id, a.box.x1, a.box.y1, a.box.x2, a.box.y2) <
         std::tie(b.class_id, b.box.x1, b.box.y1, b.box.x2, b.box.y2);
}

std::vector<Detection> nms(std::vector<Detection> dets, float iou_threshold) {
  std::sort(dets.begin(), dets.end(), detection_before);
  std::vector<Detection> kept;
  kept.reserve(dets.size());
  for (const Detection& d : dets) {
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (k.class_id == d.class_id && iou(k.box, d.box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

Deltas encode_deltas(const Box& box, const Box& anchor) {
  const float wa = anchor.width(), ha = anchor.height();
  if (!(wa > 0 && ha > 0)) throw std::invalid_argument("encode_deltas: anchor has non-positive size");
  return {(box.center_x() - anchor.center_x()) / wa, (box.center_y() - anchor.center_y()) / ha,
          std::log(box.width() / wa), std::log(box.height() / ha)};
}

Box decode_deltas(const Deltas& d, const Box& anchor) {
  const float wa = anchor.width(), ha = anchor.height();
  if (!(wa > 0 && ha > 0)) throw std::invalid_argument("decode_deltas: anchor has non-positive size");
  // Cap the log-scale terms so exp() cannot overflow.
  constexpr float kMaxLog = 4.135166556742356f;  // log(1000 / 16)
  const float cx = anchor.center_x() + d[0] * wa;
  const float cy = anchor.center_y() + d[1] * ha;
  const float w = wa * std::exp(std::min(d[2], kMaxLog));
  const float h = ha * std::exp(std::min(d[3], kMaxLog));
  return {cx - 0.5f * w, cy - 0.5f * h, cx + 0.5f * w, cy + 0.5f * h};
}

std::vector<Box> make_anchors(int rows, int cols, int stride, std::span<const float> scales,
                              std::span<const float> aspects) {
  std::vector<Box> anchors;
  anchors.reserve(static_cast<std::size_t>(rows) * cols * scales.size() * aspects.size());
  for (int y = 0; y < rows; ++y) {
    for (int x = 0; x < cols; ++x) {
      const float cx = (static_cast<float>(x) + 0.5f) * static_cast<float>(stride);
      const float cy = (static_cast<float>(y) + 0.5f) * static_cast<float>(stride);
      for (float s : scales) {
        for (float a : aspects) {
          // Area s^2, height/width = a.
          const float w = s / std::sqrt(a);
          const float h = s * std::sqrt(a);
          anchors.push_back({cx - 0.5f * w, cy - 0.5f * h, cx + 0.5f * w, cy + 0.5f * h});
        }
      }
    }
  }
  return anchors;
}

std::vector<AnchorLabel> match_anchors(std::span<const Box> anchors, std::span<const Box> gt_boxes,
                                       float pos_thr, float neg_thr) {
  if (!(pos_thr > neg_thr)) throw std::invalid_argument("match_anchors: pos_thr must exceed neg_thr");
  const std::size_t na = anchors.size(), ng = gt_boxes.size();
  std::vector<AnchorLabel> labels(na);
  if (ng == 0) return labels;

  std::vector<float> best_iou(na, 0.0f);
  std::vector<int> best_gt(na, 0);
  std::vector<float> gt_best(ng, 0.0f);
  std::vector<std::size_t> gt_best_anchor(ng, 0);
  for (std::size_t a = 0; a < na; ++a) {
    for (std::size_t g = 0; g < ng; ++g) {
      const float v = iou(anchors[a], gt_boxes[g]);
      if (v > best_iou[a]) {
        best_iou[a] = v;
        best_gt[a] = static_cast<int>(g);
      }
      if (v > gt_best[g]) {
        gt_best[g] = v;
        gt_best_anchor[g] = a;
      }
    }
  }
  for (std::size_t a = 0; a < na; ++a) {
    if (best_iou[a] >= pos_thr) {
      labels[a] = {AnchorLabel::Positive, best_gt[a]};
    } else if (best_iou[a] <= neg_thr) {
      labels[a] = {AnchorLabel::Negative, -1};
    } else {
      labels[a] = {AnchorLabel::Ignore, -1};
    }
  }
  for (std::size_t g = 0; g < ng; ++g) {
    if (gt_best[g] > 0) {
      const std::size_t a = gt_best_anchor[g];
      labels[a] = {AnchorLabel::Positive, best_gt[a]};
    }
  }
  return labels;
}

}  // namespace sfod
