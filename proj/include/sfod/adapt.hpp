#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sfod/augment.hpp"
#include "sfod/detector.hpp"
#include "sfod/metrics.hpp"
#include "sfod/synth.hpp"

namespace sfod {

struct AdaptConfig {
  std::string strategy = "custom";
  float alpha = 0.9996f;     // teacher EMA rate
  float tau = 0.8f;          // pseudo-label confidence threshold
  bool weak_strong = true;   // student sees strong views of the teacher's weak views
  bool fixed_pls = false;    // label once with the initial model, never again
  bool adabn_first = false;  // AdaBN statistics before anything else
  bool mosaic = false;
  bool include_reg = true;
  BNMode teacher_bn = BNMode::Eval;
  float lr = 0.001f;
  float momentum = 0.9f;
  int batch_size = 4;
  int max_steps = 4000;
  int eval_period = 100;
  std::uint64_t seed = 0;
  StrongAugParams strong;
  InferenceOptions inference;
  TrainOptions train;

  void validate() const;
  /// Model whose target-test AP is tracked: the teacher for a moving EMA
  /// teacher (0 < alpha < 1, labels regenerated), otherwise the student.
  bool evaluates_teacher() const { return !fixed_pls && alpha > 0.0f && alpha < 1.0f; }
};

nlohmann::json adapt_config_to_json(const AdaptConfig& c);

/// Named strategy presets: adabn, sf_pl, sf_fm, fixed_sf_pl, fixed_sf_fm,
/// adabn_fixed_sf_pl, adabn_fixed_sf_fm, mean_teacher, sf_ut,
/// adabn_fixed_sf_pl_mosaic, adabn_fixed_sf_fm_mosaic.
const std::map<std::string, AdaptConfig>& strategy_presets();
AdaptConfig strategy_preset(const std::string& name);  // throws std::out_of_range

/// teacher <- alpha * teacher + (1 - alpha) * student for every entry,
/// BN running statistics included.
void ema_update(ModelState& teacher, const ModelState& student, float alpha);

/// EMA teacher accumulated in double precision. A float teacher at alpha
/// near 1 stalls once (1 - alpha) * (student - teacher) drops below half an
/// ulp; the double master copy keeps the k-step closed form
/// alpha^k * t + (1 - alpha^k) * s to float rounding.
class EmaTeacher {
 public:
  explicit EmaTeacher(const ModelState& init);
  void update(const ModelState& student, float alpha);
  const ModelState& model() const { return model_; }

 private:
  BasicModelState<double> master_;
  ModelState model_;
};

/// Labeler detections with score >= tau, one list per image. In Eval mode
/// every image is run on its own; Train mode normalizes with the statistics
/// of the given batch.
std::vector<std::vector<Detection>> generate_pseudo_labels(const ModelState& labeler,
                                                           const std::vector<const Image*>& images,
                                                           float tau, const InferenceOptions& options,
                                                           BNMode bn_mode = BNMode::Eval);

/// Fixed pseudo-labels for every target image in both flip states, so a
/// weak view can be looked up without running the labeler again.
struct PseudoLabelSet {
  std::vector<std::vector<Detection>> plain;    // per image
  std::vector<std::vector<Detection>> flipped;  // per image, flipped view

  const std::vector<Detection>& get(std::size_t image, bool flip) const {
    return flip ? flipped.at(image) : plain.at(image);
  }
  std::size_t total() const;
  bool operator==(const PseudoLabelSet&) const = default;
};

PseudoLabelSet build_pseudo_label_set(const ModelState& labeler, const std::vector<Scene>& images,
                                      const AdaptConfig& config);

struct AdaptStepRecord {
  int step = 0;  // 1-based optimizer step
  LossBreakdown losses;
  int num_pls = 0;
};

struct AdaptEvalRecord {
  int step = 0;
  LossBreakdown mean_losses;  // averaged over the steps since the previous record
  double mean_num_pls = 0;
  EvalResult eval;
};

struct AdaptTrace {
  std::vector<AdaptStepRecord> steps;
  std::vector<AdaptEvalRecord> evals;
};

struct AdaptResult {
  ModelState initial;    // source, or AdaBN-adapted source
  ModelState final_model;
  ModelState best_model; // highest trace mAP (earliest on ties); final when no evals ran
  int best_step = 0;
  EvalResult initial_eval;
  EvalResult final_eval;
  EvalResult best_eval;
  AdaptTrace trace;
  std::optional<PseudoLabelSet> fixed_labels;
  std::vector<int> labeling_steps;  // step of each generate_pseudo_labels call (0 = before training)
  bool diverged = false;
  int diverged_step = -1;
  std::string divergence_message;
};

struct AdaptHooks {
  std::function<void(const AdaptEvalRecord&)> on_eval;
  /// Called after every optimizer step with (step, student, teacher).
  std::function<void(int, const ModelState&, const ModelState&)> on_step;
};

/// Source-free self-training of `source` on unlabeled `target_train`,
/// tracking AP50 on `eval_set` every eval_period steps.
AdaptResult adapt(const ModelState& source, const std::vector<Scene>& target_train,
                  const std::vector<Scene>& eval_set, const AdaptConfig& config, const AdaptHooks& hooks = {});

}  // namespace sfod
