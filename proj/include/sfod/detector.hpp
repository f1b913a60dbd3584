#pragma once

#include <vector>

#include "sfod/batchnorm.hpp"
#include "sfod/boxes.hpp"
#include "sfod/model.hpp"
#include "sfod/ops.hpp"
#include "sfod/rng.hpp"
#include "sfod/tensor.hpp"

namespace sfod {

struct LossBreakdown {
  double rpn_cls = 0;
  double rpn_reg = 0;
  double roi_cls = 0;
  double roi_reg = 0;
  double total = 0;

  bool operator==(const LossBreakdown&) const = default;
};

struct TrainOptions {
  bool include_reg = true;
  int rpn_batch = 64;  // sampled anchors per image
  float rpn_pos_fraction = 0.5f;
  float rpn_pos_iou = 0.7f;
  float rpn_neg_iou = 0.3f;
  int roi_batch = 32;  // sampled proposals per image
  float roi_pos_fraction = 0.25f;
  float roi_fg_iou = 0.5f;
  int pre_nms_top_n = 300;
  int post_nms_top_n = 64;
  float proposal_nms_iou = 0.7f;
};

struct InferenceOptions {
  int rpn_top_n = 50;
  int pre_nms_top_n = 300;
  float proposal_nms_iou = 0.7f;
  float score_floor = 0.05f;
  float nms_iou = 0.5f;
  int max_dets = 50;
};

/// Sampling decisions of one training step: which anchors and proposals
/// enter the loss, with their labels and regression targets. Replaying a
/// plan makes the loss a smooth function of the parameters.
struct SamplePlan {
  struct Image {
    std::vector<int> anchors;          // anchor indices
    std::vector<int> anchor_labels;    // 0 background, 1 object
    std::vector<Deltas> anchor_targets;
    std::vector<Box> rois;             // image coordinates
    std::vector<int> roi_labels;       // 0 background, 1..num_classes
    std::vector<Deltas> roi_targets;
  };
  std::vector<Image> images;
};

template <typename Scalar>
struct TrainOutput {
  LossBreakdown losses;
  Gradients<Scalar> grads;
  SamplePlan plan;
};

/// Backbone activations plus what the backward pass needs.
template <typename Scalar>
struct BackboneTrace {
  struct Block {
    Tensor<Scalar> input;
    Tensor<Scalar> bn_output;  // ReLU input
    BNCache<Scalar> bn;
    Shape pre_pool_shape;
    std::vector<Index> pool_argmax;  // empty when the block does not pool
  };
  std::vector<Block> blocks;
  std::vector<Tensor<Scalar>> batch_means;  // per BN layer, Train mode
  std::vector<Tensor<Scalar>> batch_vars;
  std::vector<BNState<Scalar>> bn_states;   // refreshed running estimates
  Tensor<Scalar> features;
};

template <typename Scalar>
BackboneTrace<Scalar> backbone_forward(const BasicModelState<Scalar>& model, const Tensor<Scalar>& images,
                                       BNMode mode);

/// Full two-stage loss (RPN cls/reg + ROI cls/reg) and gradients for a
/// batch [N,3,H,W]. BN runs in Train mode and the model's running statistics
/// are refreshed in place. Pass `fixed_plan` to replay sampling decisions.
/// Throws NumericalError on a non-finite loss.
template <typename Scalar>
TrainOutput<Scalar> forward_train(BasicModelState<Scalar>& model, const Tensor<Scalar>& images,
                                  const std::vector<std::vector<Annotation>>& targets,
                                  const TrainOptions& options, Rng& rng,
                                  const SamplePlan* fixed_plan = nullptr);

template <typename Scalar>
struct RoiPoolResult {
  Tensor<Scalar> output;       // [C, out, out]
  std::vector<Index> argmax;   // flat index into the [C,H,W] map per output
};

/// Max-pools `proposal` (feature-map coordinates) from `features` [C,H,W]
/// onto an out x out grid. Each cell takes the max over the feature cells
/// its sub-window overlaps; a proposal narrower or shorter than one cell
/// samples the single cell under its center.
template <typename Scalar>
RoiPoolResult<Scalar> roi_pool(const Tensor<Scalar>& features, const Box& proposal, int out_size);

/// Detections for each image of a batch [N,3,H,W]. Eval mode uses running
/// statistics; Train mode normalizes with the batch statistics without
/// touching the model.
std::vector<std::vector<Detection>> forward_inference_batch(const ModelState& model,
                                                            const TensorF& images,
                                                            const InferenceOptions& options,
                                                            BNMode bn_mode = BNMode::Eval);

std::vector<Detection> forward_inference(const ModelState& model, const TensorF& image,
                                         const InferenceOptions& options);

}  // namespace sfod
