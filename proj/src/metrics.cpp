#include "sfod/metrics.hpp"

#include <algorithm>
#include <stdexcept>

namespace sfod {
namespace {

struct Scored {
  float score;
  bool tp;
};

}  // namespace

EvalResult evaluate_ap50(const std::vector<std::vector<Detection>>& dets_per_image,
                         const std::vector<std::vector<Annotation>>& gts_per_image, int num_classes) {
  if (dets_per_image.size() != gts_per_image.size()) {
    throw std::invalid_argument("evaluate_ap50: " + std::to_string(dets_per_image.size()) +
                                " detection lists for " + std::to_string(gts_per_image.size()) +
                                " images");
  }
  EvalResult result;
  result.per_class_ap.assign(static_cast<std::size_t>(num_classes), 0.0);
  result.gt_count.assign(static_cast<std::size_t>(num_classes), 0);
  std::vector<std::vector<Scored>> scored(static_cast<std::size_t>(num_classes));

  for (std::size_t img = 0; img < gts_per_image.size(); ++img) {
    const auto& gts = gts_per_image[img];
    for (const Annotation& g : gts) {
      if (g.class_id < 0 || g.class_id >= num_classes) {
        throw std::out_of_range("evaluate_ap50: ground-truth class " + std::to_string(g.class_id));
      }
      ++result.gt_count[static_cast<std::size_t>(g.class_id)];
    }
    std::vector<Detection> dets = dets_per_image[img];
    std::sort(dets.begin(), dets.end(), detection_before);
    std::vector<bool> matched(gts.size(), false);
    for (const Detection& d : dets) {
      if (d.class_id < 0 || d.class_id >= num_classes) continue;
      int best = -1;
      float best_iou = 0.5f;
      for (std::size_t j = 0; j < gts.size(); ++j) {
        if (matched[j] || gts[j].class_id != d.class_id) continue;
        const float v = iou(d.box, gts[j].box);
        if (v >= best_iou && (best < 0 || v > best_iou)) {
          best = static_cast<int>(j);
          best_iou = v;
        }
      }
      if (best >= 0) matched[static_cast<std::size_t>(best)] = true;
      scored[static_cast<std::size_t>(d.class_id)].push_back({d.score, best >= 0});
    }
  }

  int present = 0;
  double sum = 0;
  for (int c = 0; c < num_classes; ++c) {
    const auto cu = static_cast<std::size_t>(c);
    const int npos = result.gt_count[cu];
    if (npos == 0) continue;
    auto& list = scored[cu];
    std::sort(list.begin(), list.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });
    // One curve point per distinct score level.
    std::vector<double> precision, recall;
    int tp = 0, fp = 0;
    for (std::size_t i = 0; i < list.size(); ++i) {
      (list[i].tp ? tp : fp) += 1;
      if (i + 1 == list.size() || list[i + 1].score != list[i].score) {
        precision.push_back(static_cast<double>(tp) / (tp + fp));
        recall.push_back(static_cast<double>(tp) / npos);
      }
    }
    for (std::size_t i = precision.size(); i-- > 1;) {
      precision[i - 1] = std::max(precision[i - 1], precision[i]);
    }
    double ap = 0, prev_recall = 0;
    for (std::size_t i = 0; i < precision.size(); ++i) {
      ap += (recall[i] - prev_recall) * precision[i];
      prev_recall = recall[i];
    }
    result.per_class_ap[cu] = ap;
    sum += ap;
    ++present;
  }
  result.map = present > 0 ? sum / present : 0.0;
  return result;
}

}  // namespace sfod
