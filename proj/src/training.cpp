#include "sfod/training.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "sfod/augment.hpp"

namespace sfod {

void SgdOptimizer::step(ModelState& params, const Gradients<float>& grads) {
  params.require_compatible(grads, "SgdOptimizer::step");
  auto& entries = params.entries();
  const auto& g = grads.entries();
  if (velocity_.empty() && momentum_ > 0) {
    for (const auto& e : entries) velocity_.emplace_back(e.value.shape());
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!entries[i].trainable()) continue;
    auto& w = entries[i].value.array();
    const bool decay = weight_decay_ > 0 && entries[i].kind == ParamKind::Weight;
    if (momentum_ > 0) {
      auto& v = velocity_[i].array();
      if (decay) {
        v = momentum_ * v + g[i].value.array() + weight_decay_ * w;
      } else {
        v = momentum_ * v + g[i].value.array();
      }
      w -= lr_ * v;
    } else if (decay) {
      w -= lr_ * (g[i].value.array() + weight_decay_ * w);
    } else {
      w -= lr_ * g[i].value.array();
    }
  }
}

std::vector<std::vector<Annotation>> annotations_of(const std::vector<Scene>& scenes) {
  std::vector<std::vector<Annotation>> out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) out.push_back(s.annotations);
  return out;
}

SourceTrainResult train_source(const std::vector<Scene>& scenes, const ArchDescriptor& arch,
                               const SourceTrainConfig& config,
                               const std::function<void(int, const LossBreakdown&)>& on_step) {
  if (config.steps < 0 || config.batch_size <= 0) throw std::invalid_argument("train_source: bad steps or batch size");
  if (config.steps > 0 && scenes.empty()) throw std::invalid_argument("train_source: no training scenes");
  SourceTrainResult result{init_model(arch, config.seed), {}};
  SgdOptimizer opt(config.lr, config.momentum, config.weight_decay);

  std::vector<std::size_t> order(scenes.size());
  std::size_t cursor = order.size();
  std::uint64_t epoch = 0;
  for (int step = 0; step < config.steps; ++step) {
    std::vector<Scene> batch;
    for (int b = 0; b < config.batch_size; ++b) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle = derive_rng(config.seed, {0x5eed, epoch++});
        std::shuffle(order.begin(), order.end(), shuffle);
        cursor = 0;
      }
      batch.push_back(scenes[order[cursor++]]);
    }
    Rng rng = derive_rng(config.seed, {0x7a1, static_cast<std::uint64_t>(step)});
    if (config.flip) {
      for (auto& s : batch) s = weak_augment(s, rng);
    }
    std::vector<const Image*> images;
    std::vector<std::vector<Annotation>> targets;
    for (const auto& s : batch) {
      images.push_back(&s.image);
      targets.push_back(s.annotations);
    }
    const float warm = config.warmup_steps > 0 && step < config.warmup_steps
                           ? 0.1f + 0.9f * static_cast<float>(step) / static_cast<float>(config.warmup_steps)
                           : 1.0f;
    opt.set_lr(config.lr * warm);
    auto out = forward_train(result.model, images_to_tensor(images), targets, config.train, rng);
    opt.step(result.model, out.grads);
    result.losses.push_back(out.losses);
    if (on_step) on_step(step, out.losses);
  }
  return result;
}

std::vector<std::vector<Detection>> detect_all(const ModelState& model, const std::vector<Scene>& scenes,
                                               const InferenceOptions& options, int batch_size, BNMode bn_mode) {
  if (batch_size <= 0) throw std::invalid_argument("detect_all: batch size must be positive");
  std::vector<std::vector<Detection>> out;
  out.reserve(scenes.size());
  for (std::size_t b = 0; b < scenes.size(); b += static_cast<std::size_t>(batch_size)) {
    std::vector<const Image*> images;
    for (std::size_t i = b; i < std::min(scenes.size(), b + static_cast<std::size_t>(batch_size)); ++i) {
      images.push_back(&scenes[i].image);
    }
    auto dets = forward_inference_batch(model, images_to_tensor(images), options, bn_mode);
    for (auto& d : dets) out.push_back(std::move(d));
  }
  return out;
}

EvalResult evaluate_model(const ModelState& model, const std::vector<Scene>& scenes, const InferenceOptions& options,
                          int batch_size) {
  return evaluate_ap50(detect_all(model, scenes, options, batch_size), annotations_of(scenes),
                       model.arch().num_classes);
}

}  // namespace sfod
