#include "sfod/adapt.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "sfod/adabn.hpp"
#include "sfod/training.hpp"

namespace sfod {

void AdaptConfig::validate() const {
  if (!(alpha >= 0.0f && alpha <= 1.0f)) throw std::invalid_argument("adapt: alpha must be in [0,1]");
  if (!(tau >= 0.0f)) throw std::invalid_argument("adapt: tau must be non-negative");
  if (!(lr >= 0.0f) || !(momentum >= 0.0f && momentum < 1.0f)) throw std::invalid_argument("adapt: bad lr or momentum");
  if (batch_size <= 0) throw std::invalid_argument("adapt: batch size must be positive");
  if (max_steps < 0) throw std::invalid_argument("adapt: max_steps must be non-negative");
  if (eval_period <= 0) throw std::invalid_argument("adapt: eval_period must be positive");
  strong.validate();
}

nlohmann::json adapt_config_to_json(const AdaptConfig& c) {
  return {{"strategy", c.strategy},
          {"alpha", c.alpha},
          {"tau", c.tau},
          {"weak_strong", c.weak_strong},
          {"fixed_pls", c.fixed_pls},
          {"adabn_first", c.adabn_first},
          {"mosaic", c.mosaic},
          {"include_reg", c.include_reg},
          {"teacher_bn", c.teacher_bn == BNMode::Eval ? "eval" : "train"},
          {"lr", c.lr},
          {"momentum", c.momentum},
          {"batch_size", c.batch_size},
          {"max_steps", c.max_steps},
          {"eval_period", c.eval_period},
          {"seed", c.seed},
          {"score_floor", c.inference.score_floor},
          {"nms_iou", c.inference.nms_iou}};
}

const std::map<std::string, AdaptConfig>& strategy_presets() {
  static const std::map<std::string, AdaptConfig> presets = [] {
    std::map<std::string, AdaptConfig> m;
    const auto make = [&m](const std::string& name, float alpha, bool weak_strong, bool fixed, bool adabn,
                           bool mosaic) {
      AdaptConfig c;
      c.strategy = name;
      c.alpha = alpha;
      c.weak_strong = weak_strong;
      c.fixed_pls = fixed;
      c.adabn_first = adabn;
      c.mosaic = mosaic;
      m[name] = c;
    };
    make("adabn", 1.0f, false, true, true, false);
    m["adabn"].max_steps = 0;
    make("sf_pl", 0.0f, false, false, false, false);
    make("sf_fm", 0.0f, true, false, false, false);
    make("fixed_sf_pl", 1.0f, false, true, false, false);
    make("fixed_sf_fm", 1.0f, true, true, false, false);
    make("adabn_fixed_sf_pl", 1.0f, false, true, true, false);
    make("adabn_fixed_sf_fm", 1.0f, true, true, true, false);
    make("mean_teacher", 0.9996f, false, false, false, false);
    make("sf_ut", 0.9996f, true, false, false, false);
    make("adabn_fixed_sf_pl_mosaic", 1.0f, false, true, true, true);
    make("adabn_fixed_sf_fm_mosaic", 1.0f, true, true, true, true);
    return m;
  }();
  return presets;
}

AdaptConfig strategy_preset(const std::string& name) {
  const auto& p = strategy_presets();
  const auto it = p.find(name);
  if (it == p.end()) throw std::out_of_range("unknown strategy preset '" + name + "'");
  return it->second;
}

void ema_update(ModelState& teacher, const ModelState& student, float alpha) {
  if (!(alpha >= 0.0f && alpha <= 1.0f)) throw std::invalid_argument("ema_update: alpha must be in [0,1]");
  teacher.require_compatible(student, "ema_update");
  if (!(teacher.arch() == student.arch())) throw std::invalid_argument("ema_update: architecture mismatch");
  const float beta = 1.0f - alpha;
  auto& t = teacher.entries();
  const auto& s = student.entries();
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i].value.array() = alpha * t[i].value.array() + beta * s[i].value.array();
  }
}

EmaTeacher::EmaTeacher(const ModelState& init) : master_(init.cast<double>()), model_(init) {}

void EmaTeacher::update(const ModelState& student, float alpha) {
  if (!(alpha >= 0.0f && alpha <= 1.0f)) throw std::invalid_argument("ema_update: alpha must be in [0,1]");
  model_.require_compatible(student, "ema_update");
  if (alpha == 1.0f) return;
  const double a = alpha, b = 1.0 - a;
  auto& m = master_.entries();
  auto& out = model_.entries();
  const auto& s = student.entries();
  for (std::size_t i = 0; i < m.size(); ++i) {
    m[i].value.array() = a * m[i].value.array() + b * s[i].value.array().cast<double>();
    out[i].value.array() = m[i].value.array().cast<float>();
  }
}

std::vector<std::vector<Detection>> generate_pseudo_labels(const ModelState& labeler,
                                                           const std::vector<const Image*>& images, float tau,
                                                           const InferenceOptions& options, BNMode bn_mode) {
  std::vector<std::vector<Detection>> out;
  if (images.empty()) return out;
  if (bn_mode == BNMode::Eval) {
    for (const Image* im : images) out.push_back(forward_inference(labeler, image_to_tensor(*im), options));
  } else {
    out = forward_inference_batch(labeler, images_to_tensor(images), options, BNMode::Train);
  }
  for (auto& dets : out) {
    std::erase_if(dets, [tau](const Detection& d) { return !(d.score >= tau); });
  }
  return out;
}

std::size_t PseudoLabelSet::total() const {
  std::size_t n = 0;
  for (const auto& d : plain) n += d.size();
  for (const auto& d : flipped) n += d.size();
  return n;
}

PseudoLabelSet build_pseudo_label_set(const ModelState& labeler, const std::vector<Scene>& images,
                                      const AdaptConfig& config) {
  PseudoLabelSet set;
  const std::size_t chunk = config.teacher_bn == BNMode::Eval ? images.size() : static_cast<std::size_t>(config.batch_size);
  for (std::size_t b = 0; b < images.size(); b += std::max<std::size_t>(chunk, 1)) {
    const std::size_t e = std::min(images.size(), b + std::max<std::size_t>(chunk, 1));
    std::vector<Scene> flips;
    std::vector<const Image*> plain_views, flip_views;
    for (std::size_t i = b; i < e; ++i) flips.push_back(flip_horizontal(images[i]));
    for (std::size_t i = b; i < e; ++i) {
      plain_views.push_back(&images[i].image);
      flip_views.push_back(&flips[i - b].image);
    }
    for (auto& d : generate_pseudo_labels(labeler, plain_views, config.tau, config.inference, config.teacher_bn)) {
      set.plain.push_back(std::move(d));
    }
    for (auto& d : generate_pseudo_labels(labeler, flip_views, config.tau, config.inference, config.teacher_bn)) {
      set.flipped.push_back(std::move(d));
    }
  }
  return set;
}

namespace {

std::vector<Annotation> as_targets(const std::vector<Detection>& dets) {
  std::vector<Annotation> out;
  out.reserve(dets.size());
  for (const auto& d : dets) out.push_back({d.box, d.class_id});
  return out;
}

// Epoch-wise shuffled stream of target image indices.
class IndexStream {
 public:
  IndexStream(std::size_t n, std::uint64_t seed) : order_(n), seed_(seed) {}

  std::size_t next() {
    if (cursor_ == order_.size()) {
      std::iota(order_.begin(), order_.end(), std::size_t{0});
      Rng rng = derive_rng(seed_, {0x5eed, epoch_++});
      std::shuffle(order_.begin(), order_.end(), rng);
      cursor_ = 0;
    }
    return order_[cursor_++];
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::uint64_t epoch_ = 0;
  std::uint64_t seed_;
};

struct WeakView {
  std::size_t index;
  bool flip;
  Scene scene;  // weak view, annotations replaced by pseudo-labels
};

}  // namespace

AdaptResult adapt(const ModelState& source, const std::vector<Scene>& target_train,
                  const std::vector<Scene>& eval_set, const AdaptConfig& config, const AdaptHooks& hooks) {
  config.validate();
  if (target_train.empty()) throw std::invalid_argument("adapt: empty target training set");

  // Target data is unlabeled: drop whatever annotations came with it.
  std::vector<Scene> target = target_train;
  for (auto& s : target) s.annotations.clear();

  AdaptResult result;
  if (config.adabn_first) {
    std::vector<const Image*> all;
    for (const auto& s : target) all.push_back(&s.image);
    std::vector<TensorF> batches;
    for (std::size_t b = 0; b < all.size(); b += static_cast<std::size_t>(config.batch_size)) {
      const std::vector<const Image*> chunk(all.begin() + static_cast<std::ptrdiff_t>(b),
                                            all.begin() + static_cast<std::ptrdiff_t>(std::min(all.size(), b + static_cast<std::size_t>(config.batch_size))));
      batches.push_back(images_to_tensor(chunk));
    }
    result.initial = collect_target_statistics(source, batches);
  } else {
    result.initial = source;
  }

  const auto evaluate = [&](const ModelState& m) { return evaluate_model(m, eval_set, config.inference); };
  result.initial_eval = evaluate(result.initial);

  ModelState student = result.initial;
  EmaTeacher teacher(result.initial);
  if (config.fixed_pls && config.max_steps > 0) {
    result.fixed_labels = build_pseudo_label_set(result.initial, target, config);
    result.labeling_steps.push_back(0);
  }

  SgdOptimizer opt(config.lr, config.momentum);
  TrainOptions train = config.train;
  train.include_reg = config.include_reg;
  IndexStream stream(target.size(), config.seed);

  // Weak views of `count` draws with pseudo-labels attached.
  const auto draw_labeled = [&](std::size_t count, Rng& rng, int step) {
    std::vector<WeakView> views;
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t idx = stream.next();
      bool flip = false;
      Scene weak = weak_augment(target[idx], rng, &flip);
      views.push_back({idx, flip, std::move(weak)});
    }
    if (result.fixed_labels) {
      for (auto& v : views) v.scene.annotations = as_targets(result.fixed_labels->get(v.index, v.flip));
    } else {
      std::vector<const Image*> images;
      for (const auto& v : views) images.push_back(&v.scene.image);
      const auto labels = generate_pseudo_labels(teacher.model(), images, config.tau, config.inference, config.teacher_bn);
      result.labeling_steps.push_back(step);
      for (std::size_t i = 0; i < views.size(); ++i) views[i].scene.annotations = as_targets(labels[i]);
    }
    return views;
  };

  bool have_best = false;
  double best_map = 0;
  LossBreakdown window{};
  double window_pls = 0;
  int window_steps = 0;

  for (int step = 1; step <= config.max_steps; ++step) {
    Rng rng = derive_rng(config.seed, {0xada, static_cast<std::uint64_t>(step)});
    std::vector<Scene> batch;
    if (config.mosaic) {
      for (int b = 0; b < config.batch_size; ++b) {
        auto views = draw_labeled(4, rng, step);
        if (config.weak_strong) {
          for (auto& v : views) v.scene = strong_augment(v.scene, config.strong, rng);
        }
        batch.push_back(mosaic({&views[0].scene, &views[1].scene, &views[2].scene, &views[3].scene},
                               target.front().image.height));
      }
    } else {
      auto views = draw_labeled(static_cast<std::size_t>(config.batch_size), rng, step);
      for (auto& v : views) {
        batch.push_back(config.weak_strong ? strong_augment(v.scene, config.strong, rng) : std::move(v.scene));
      }
    }

    std::vector<const Image*> images;
    std::vector<std::vector<Annotation>> targets;
    int num_pls = 0;
    for (const auto& s : batch) {
      images.push_back(&s.image);
      targets.push_back(s.annotations);
      num_pls += static_cast<int>(s.annotations.size());
    }

    LossBreakdown losses;
    try {
      auto out = forward_train(student, images_to_tensor(images), targets, train, rng);
      losses = out.losses;
      opt.step(student, out.grads);
      if (!student.all_finite()) throw NumericalError("student parameters became non-finite");
    } catch (const NumericalError& e) {
      result.diverged = true;
      result.diverged_step = step;
      result.divergence_message = e.what();
      break;
    }
    if (!config.fixed_pls) teacher.update(student, config.alpha);

    result.trace.steps.push_back({step, losses, num_pls});
    window.rpn_cls += losses.rpn_cls;
    window.rpn_reg += losses.rpn_reg;
    window.roi_cls += losses.roi_cls;
    window.roi_reg += losses.roi_reg;
    window.total += losses.total;
    window_pls += num_pls;
    ++window_steps;
    if (hooks.on_step) hooks.on_step(step, student, teacher.model());

    if (step % config.eval_period == 0 || step == config.max_steps) {
      const ModelState& tracked = config.evaluates_teacher() ? teacher.model() : student;
      AdaptEvalRecord rec;
      rec.step = step;
      const double inv = 1.0 / window_steps;
      rec.mean_losses = {window.rpn_cls * inv, window.rpn_reg * inv, window.roi_cls * inv, window.roi_reg * inv,
                         window.total * inv};
      rec.mean_num_pls = window_pls * inv;
      rec.eval = evaluate(tracked);
      window = {};
      window_pls = 0;
      window_steps = 0;
      if (!have_best || rec.eval.map > best_map) {
        have_best = true;
        best_map = rec.eval.map;
        result.best_model = tracked;
        result.best_step = step;
        result.best_eval = rec.eval;
      }
      result.trace.evals.push_back(rec);
      if (hooks.on_eval) hooks.on_eval(rec);
    }
  }

  result.final_model = config.evaluates_teacher() ? teacher.model() : student;
  if (!result.trace.evals.empty() && result.trace.evals.back().step == static_cast<int>(result.trace.steps.size()) &&
      !result.diverged) {
    result.final_eval = result.trace.evals.back().eval;
  } else {
    result.final_eval = evaluate(result.final_model);
  }
  if (!have_best) {
    result.best_model = result.final_model;
    result.best_step = static_cast<int>(result.trace.steps.size());
    result.best_eval = result.final_eval;
  }
  return result;
}

}  // namespace sfod
