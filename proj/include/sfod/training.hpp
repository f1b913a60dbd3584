#pragma once

#include <functional>
#include <vector>

#include "sfod/detector.hpp"
#include "sfod/metrics.hpp"
#include "sfod/synth.hpp"

namespace sfod {

/// SGD with optional heavy-ball momentum and L2 weight decay on trainable
/// entries. momentum = 0 and weight_decay = 0 reduce to sgd_step.
class SgdOptimizer {
 public:
  SgdOptimizer(float lr, float momentum = 0.0f, float weight_decay = 0.0f)
      : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {}

  void step(ModelState& params, const Gradients<float>& grads);
  void set_lr(float lr) { lr_ = lr; }
  float lr() const { return lr_; }

 private:
  float lr_, momentum_, weight_decay_;
  std::vector<TensorF> velocity_;
};

struct SourceTrainConfig {
  int steps = 3000;
  float lr = 0.01f;
  float momentum = 0.9f;
  float weight_decay = 1e-4f;
  int warmup_steps = 100;  // linear lr ramp from lr/10
  int batch_size = 4;
  bool flip = true;        // random horizontal flips
  std::uint64_t seed = 0;
  TrainOptions train;
};

struct SourceTrainResult {
  ModelState model;
  std::vector<LossBreakdown> losses;  // one per step
};

/// Supervised training on labeled scenes, starting from init_model(arch, seed).
/// Images are visited in a fresh seeded permutation each epoch.
SourceTrainResult train_source(const std::vector<Scene>& scenes, const ArchDescriptor& arch,
                               const SourceTrainConfig& config,
                               const std::function<void(int, const LossBreakdown&)>& on_step = {});

/// Eval-mode inference over `scenes` in batches, then AP50.
EvalResult evaluate_model(const ModelState& model, const std::vector<Scene>& scenes,
                          const InferenceOptions& options = {}, int batch_size = 8);

std::vector<std::vector<Detection>> detect_all(const ModelState& model, const std::vector<Scene>& scenes,
                                               const InferenceOptions& options, int batch_size = 8,
                                               BNMode bn_mode = BNMode::Eval);

std::vector<std::vector<Annotation>> annotations_of(const std::vector<Scene>& scenes);

}  // namespace sfod
