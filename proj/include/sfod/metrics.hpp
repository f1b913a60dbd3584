#pragma once

#include <vector>

#include "sfod/boxes.hpp"

namespace sfod {

struct EvalResult {
  std::vector<double> per_class_ap;  // 0 for classes without ground truth
  std::vector<int> gt_count;         // ground-truth instances per class
  double map = 0;                    // mean over classes with gt_count > 0
};

/// VOC-style AP at IoU 0.5 with all-point interpolation.
///
/// Within each image, detections are matched in canonical order (score
/// descending, ties broken by class and coordinates) to the unmatched
/// ground truth of the same class with the highest IoU >= 0.5. The
/// precision/recall curve is sampled only at distinct score levels, so the
/// result does not depend on image order or on how equal-score detections
/// are listed.
EvalResult evaluate_ap50(const std::vector<std::vector<Detection>>& dets_per_image,
                         const std::vector<std::vector<Annotation>>& gts_per_image, int num_classes);

}  // namespace sfod
