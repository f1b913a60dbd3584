#include "sfod/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace sfod {
namespace {

template <typename Scalar>
struct RpnOutput {
  Tensor<Scalar> hidden_pre;
  Tensor<Scalar> hidden;
  Tensor<Scalar> cls;  // [N, 2A, Hf, Wf]
  Tensor<Scalar> reg;  // [N, 4A, Hf, Wf]
};

template <typename Scalar>
RpnOutput<Scalar> rpn_forward(const BasicModelState<Scalar>& model, const Tensor<Scalar>& features) {
  RpnOutput<Scalar> r;
  r.hidden_pre = conv2d_forward(features, model.at("rpn.conv.weight"), model.at("rpn.conv.bias"), 1, 1);
  r.hidden = relu_forward(r.hidden_pre);
  r.cls = conv2d_forward(r.hidden, model.at("rpn.cls.weight"), model.at("rpn.cls.bias"), 1, 0);
  r.reg = conv2d_forward(r.hidden, model.at("rpn.reg.weight"), model.at("rpn.reg.bias"), 1, 0);
  return r;
}

std::vector<Box> anchors_for(const ArchDescriptor& arch) {
  return make_anchors(arch.feature_size(), arch.feature_size(), arch.feature_stride(), arch.anchor_scales,
                      arch.anchor_aspects);
}

// Offsets of anchor k's class logits / deltas inside [N, C, Hf, Wf].
struct AnchorSlot {
  Index y, x, a;
};

AnchorSlot anchor_slot(Index k, Index fw, Index per_cell) {
  const Index cell = k / per_cell;
  return {cell / fw, cell % fw, k % per_cell};
}

template <typename Scalar>
std::vector<Box> generate_proposals(const RpnOutput<Scalar>& rpn, Index n, const std::vector<Box>& anchors,
                                    const ArchDescriptor& arch, int pre_nms_top_n, float nms_iou,
                                    int post_nms_top_n) {
  const Index per_cell = arch.anchors_per_cell();
  const Index fw = rpn.cls.dim(3);
  const auto size = static_cast<float>(arch.input_size);
  struct Candidate {
    float score;
    Index index;
    Box box;
  };
  std::vector<Candidate> cands;
  cands.reserve(anchors.size());
  for (Index k = 0; k < static_cast<Index>(anchors.size()); ++k) {
    const auto [y, x, a] = anchor_slot(k, fw, per_cell);
    const double l0 = rpn.cls(n, 2 * a, y, x), l1 = rpn.cls(n, 2 * a + 1, y, x);
    const auto score = static_cast<float>(1.0 / (1.0 + std::exp(l0 - l1)));
    Deltas d;
    for (int j = 0; j < 4; ++j) d[static_cast<std::size_t>(j)] = static_cast<float>(rpn.reg(n, 4 * a + j, y, x));
    const Box b = clip_box(decode_deltas(d, anchors[static_cast<std::size_t>(k)]), size, size);
    if (b.width() >= 1.0f && b.height() >= 1.0f && std::isfinite(score)) cands.push_back({score, k, b});
  }
  const auto order = [](const Candidate& p, const Candidate& q) {
    return p.score != q.score ? p.score > q.score : p.index < q.index;
  };
  const auto keep = std::min<std::size_t>(cands.size(), static_cast<std::size_t>(pre_nms_top_n));
  std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(), order);
  cands.resize(keep);
  std::vector<Detection> dets;
  dets.reserve(cands.size());
  for (const auto& c : cands) dets.push_back({c.box, 0, c.score});
  dets = nms(std::move(dets), nms_iou);
  std::vector<Box> proposals;
  for (std::size_t i = 0; i < dets.size() && static_cast<int>(i) < post_nms_top_n; ++i) {
    proposals.push_back(dets[i].box);
  }
  return proposals;
}

void validate_targets(const std::vector<std::vector<Annotation>>& targets, Index batch, int num_classes) {
  if (static_cast<Index>(targets.size()) != batch) {
    throw std::invalid_argument("forward_train: " + std::to_string(targets.size()) + " target lists for " +
                                std::to_string(batch) + " images");
  }
  for (const auto& list : targets) {
    for (const Annotation& a : list) {
      if (!a.box.valid() || a.class_id < 0 || a.class_id >= num_classes) {
        std::ostringstream os;
        os << "forward_train: malformed target (" << a.box.x1 << "," << a.box.y1 << "," << a.box.x2 << ","
           << a.box.y2 << ") class " << a.class_id;
        throw std::invalid_argument(os.str());
      }
    }
  }
}

SamplePlan::Image sample_image(const std::vector<Box>& anchors, const std::vector<Box>& proposals,
                               const std::vector<Annotation>& gts, const TrainOptions& opt, Rng& rng) {
  SamplePlan::Image plan;
  std::vector<Box> gt_boxes;
  for (const auto& g : gts) gt_boxes.push_back(g.box);

  // RPN anchors.
  const auto labels = match_anchors(anchors, gt_boxes, opt.rpn_pos_iou, opt.rpn_neg_iou);
  std::vector<int> pos, neg;
  for (std::size_t k = 0; k < labels.size(); ++k) {
    if (labels[k].kind == AnchorLabel::Positive) pos.push_back(static_cast<int>(k));
    if (labels[k].kind == AnchorLabel::Negative) neg.push_back(static_cast<int>(k));
  }
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  const auto max_pos = static_cast<std::size_t>(std::lround(opt.rpn_batch * opt.rpn_pos_fraction));
  const std::size_t n_pos = std::min(pos.size(), max_pos);
  const std::size_t n_neg = std::min(neg.size(), static_cast<std::size_t>(opt.rpn_batch) - n_pos);
  for (std::size_t i = 0; i < n_pos; ++i) {
    const int k = pos[i];
    plan.anchors.push_back(k);
    plan.anchor_labels.push_back(1);
    plan.anchor_targets.push_back(encode_deltas(gt_boxes[static_cast<std::size_t>(labels[static_cast<std::size_t>(k)].gt)],
                                                anchors[static_cast<std::size_t>(k)]));
  }
  for (std::size_t i = 0; i < n_neg; ++i) {
    plan.anchors.push_back(neg[i]);
    plan.anchor_labels.push_back(0);
    plan.anchor_targets.push_back({0, 0, 0, 0});
  }

  // ROI proposals, with the ground truth appended as extra candidates.
  std::vector<Box> cands = proposals;
  cands.insert(cands.end(), gt_boxes.begin(), gt_boxes.end());
  std::vector<int> fg, bg;
  std::vector<int> match(cands.size(), -1);
  for (std::size_t i = 0; i < cands.size(); ++i) {
    float best = 0;
    for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
      const float v = iou(cands[i], gt_boxes[g]);
      if (v > best) {
        best = v;
        match[i] = static_cast<int>(g);
      }
    }
    (best >= opt.roi_fg_iou ? fg : bg).push_back(static_cast<int>(i));
  }
  std::shuffle(fg.begin(), fg.end(), rng);
  std::shuffle(bg.begin(), bg.end(), rng);
  const auto max_fg = static_cast<std::size_t>(std::lround(opt.roi_batch * opt.roi_pos_fraction));
  const std::size_t n_fg = std::min(fg.size(), max_fg);
  const std::size_t n_bg = std::min(bg.size(), static_cast<std::size_t>(opt.roi_batch) - n_fg);
  for (std::size_t i = 0; i < n_fg; ++i) {
    const auto c = static_cast<std::size_t>(fg[i]);
    const auto& g = gts[static_cast<std::size_t>(match[c])];
    plan.rois.push_back(cands[c]);
    plan.roi_labels.push_back(g.class_id + 1);
    plan.roi_targets.push_back(encode_deltas(g.box, cands[c]));
  }
  for (std::size_t i = 0; i < n_bg; ++i) {
    plan.rois.push_back(cands[static_cast<std::size_t>(bg[i])]);
    plan.roi_labels.push_back(0);
    plan.roi_targets.push_back({0, 0, 0, 0});
  }
  return plan;
}

Box to_feature_coords(const Box& b, int stride) {
  const float s = 1.0f / static_cast<float>(stride);
  return {b.x1 * s, b.y1 * s, b.x2 * s, b.y2 * s};
}

// Pools `proposal` (feature coordinates) from a [c,h,w] map into `out`
// (c*o*o values) and records the flat source index of each value.
template <typename Scalar>
void roi_pool_into(const Scalar* features, Index c, Index h, Index w, const Box& proposal, int out_size, Scalar* out,
                   Index* argmax) {
  constexpr int kMaxBins = 32;
  if (out_size > kMaxBins) throw std::invalid_argument("roi_pool: out_size above " + std::to_string(kMaxBins));
  Index rows[kMaxBins][2], cols[kMaxBins][2];
  const auto ranges = [out_size](float lo, float hi, Index extent, Index (*r)[2]) {
    const float len = hi - lo;
    for (int i = 0; i < out_size; ++i) {
      Index first, last;
      if (len < 1.0f) {
        first = last = static_cast<Index>(std::floor(0.5f * (lo + hi)));
      } else {
        const float bin = len / static_cast<float>(out_size);
        const float start = lo + bin * static_cast<float>(i);
        first = static_cast<Index>(std::floor(start));
        last = static_cast<Index>(std::ceil(start + bin)) - 1;
      }
      first = std::clamp<Index>(first, 0, extent - 1);
      last = std::clamp<Index>(last, first, extent - 1);
      r[i][0] = first;
      r[i][1] = last;
    }
  };
  ranges(proposal.y1, proposal.y2, h, rows);
  ranges(proposal.x1, proposal.x2, w, cols);
  Index o = 0;
  for (Index ch = 0; ch < c; ++ch) {
    const Scalar* plane = features + ch * h * w;
    for (int i = 0; i < out_size; ++i) {
      for (int j = 0; j < out_size; ++j, ++o) {
        Index best = rows[i][0] * w + cols[j][0];
        for (Index y = rows[i][0]; y <= rows[i][1]; ++y) {
          for (Index x = cols[j][0]; x <= cols[j][1]; ++x) {
            if (plane[y * w + x] > plane[best]) best = y * w + x;
          }
        }
        out[o] = plane[best];
        argmax[o] = ch * h * w + best;
      }
    }
  }
}

template <typename Scalar>
struct RoiHeadOutput {
  Tensor<Scalar> pooled;  // [R, C*o*o]
  Tensor<Scalar> fc1_pre, fc1, fc2_pre, fc2;
  Tensor<Scalar> cls;  // [R, K+1]
  Tensor<Scalar> reg;  // [R, 4K]
  std::vector<Index> argmax;  // [R * C*o*o], flat index into the image's feature map
  std::vector<Index> image_of;
};

template <typename Scalar>
RoiHeadOutput<Scalar> roi_head_forward(const BasicModelState<Scalar>& model, const Tensor<Scalar>& features,
                                       const std::vector<std::vector<Box>>& rois_per_image) {
  const ArchDescriptor& arch = model.arch();
  const Index out = arch.roi_pool_size;
  const Index width = features.dim(1) * out * out;
  Index total = 0;
  for (const auto& r : rois_per_image) total += static_cast<Index>(r.size());
  RoiHeadOutput<Scalar> h;
  h.pooled = Tensor<Scalar>({total, width});
  h.argmax.resize(static_cast<std::size_t>(total * width));
  const Index c = features.dim(1), fh = features.dim(2), fw = features.dim(3);
  Index row = 0;
  for (Index n = 0; n < static_cast<Index>(rois_per_image.size()); ++n) {
    const Scalar* f = features.data() + n * c * fh * fw;
    for (const Box& b : rois_per_image[static_cast<std::size_t>(n)]) {
      roi_pool_into(f, c, fh, fw, to_feature_coords(b, arch.feature_stride()), static_cast<int>(out),
                    h.pooled.data() + row * width, h.argmax.data() + row * width);
      h.image_of.push_back(n);
      ++row;
    }
  }
  h.fc1_pre = linear_forward(h.pooled, model.at("roi.fc1.weight"), model.at("roi.fc1.bias"));
  h.fc1 = relu_forward(h.fc1_pre);
  h.fc2_pre = linear_forward(h.fc1, model.at("roi.fc2.weight"), model.at("roi.fc2.bias"));
  h.fc2 = relu_forward(h.fc2_pre);
  h.cls = linear_forward(h.fc2, model.at("roi.cls.weight"), model.at("roi.cls.bias"));
  h.reg = linear_forward(h.fc2, model.at("roi.reg.weight"), model.at("roi.reg.bias"));
  return h;
}

template <typename Scalar>
void accumulate(Gradients<Scalar>& grads, const std::string& name, const Tensor<Scalar>& g) {
  grads.at(name).array() += g.array();
}

}  // namespace

template <typename Scalar>
BackboneTrace<Scalar> backbone_forward(const BasicModelState<Scalar>& model, const Tensor<Scalar>& images,
                                       BNMode mode) {
  const ArchDescriptor& arch = model.arch();
  if (images.rank() != 4 || images.dim(1) != arch.input_channels || images.dim(2) != arch.input_size ||
      images.dim(3) != arch.input_size) {
    throw DimensionError("backbone: input " + shape_to_string(images.shape()) + " does not match the " +
                         std::to_string(arch.input_size) + "px architecture");
  }
  const int blocks = static_cast<int>(arch.backbone_channels.size());
  BackboneTrace<Scalar> t;
  t.blocks.resize(static_cast<std::size_t>(blocks));
  Tensor<Scalar> x = images;
  for (int b = 0; b < blocks; ++b) {
    auto& blk = t.blocks[static_cast<std::size_t>(b)];
    const std::string conv = backbone_conv_name(b);
    Tensor<Scalar> y = conv2d_forward(x, model.at(conv + ".weight"), model.at(conv + ".bias"), 1, 1);
    auto bn = bn_forward(y, model.bn_state(backbone_bn_name(b)), mode);
    blk.input = std::move(x);
    blk.bn = std::move(bn.cache);
    blk.bn_output = std::move(bn.output);
    t.batch_means.push_back(std::move(bn.batch_mean));
    t.batch_vars.push_back(std::move(bn.batch_var));
    t.bn_states.push_back(std::move(bn.state));
    Tensor<Scalar> act = relu_forward(blk.bn_output);
    if (b + 1 < blocks) {
      blk.pre_pool_shape = act.shape();
      auto pooled = maxpool2_forward(act);
      blk.pool_argmax = std::move(pooled.argmax);
      x = std::move(pooled.output);
    } else {
      x = std::move(act);
    }
  }
  t.features = std::move(x);
  return t;
}

template <typename Scalar>
RoiPoolResult<Scalar> roi_pool(const Tensor<Scalar>& features, const Box& proposal, int out_size) {
  if (features.rank() != 3) throw DimensionError("roi_pool: expected [C,H,W], got " + shape_to_string(features.shape()));
  if (out_size < 1) throw std::invalid_argument("roi_pool: out_size must be positive");
  const Index c = features.dim(0);
  RoiPoolResult<Scalar> r{Tensor<Scalar>({c, out_size, out_size}),
                          std::vector<Index>(static_cast<std::size_t>(c * out_size * out_size))};
  roi_pool_into(features.data(), c, features.dim(1), features.dim(2), proposal, out_size, r.output.data(),
                r.argmax.data());
  return r;
}

template <typename Scalar>
TrainOutput<Scalar> forward_train(BasicModelState<Scalar>& model, const Tensor<Scalar>& images,
                                  const std::vector<std::vector<Annotation>>& targets,
                                  const TrainOptions& options, Rng& rng, const SamplePlan* fixed_plan) {
  const ArchDescriptor& arch = model.arch();
  const Index batch = images.rank() == 4 ? images.dim(0) : 0;
  validate_targets(targets, batch, arch.num_classes);

  // Forward.
  BackboneTrace<Scalar> trace = backbone_forward(model, images, BNMode::Train);
  for (int b = 0; b < static_cast<int>(trace.bn_states.size()); ++b) {
    model.set_bn_statistics(backbone_bn_name(b), trace.bn_states[static_cast<std::size_t>(b)]);
  }
  const RpnOutput<Scalar> rpn = rpn_forward(model, trace.features);
  const std::vector<Box> anchors = anchors_for(arch);

  TrainOutput<Scalar> out;
  if (fixed_plan) {
    if (static_cast<Index>(fixed_plan->images.size()) != batch) {
      throw std::invalid_argument("forward_train: sample plan covers " + std::to_string(fixed_plan->images.size()) +
                                  " images, batch has " + std::to_string(batch));
    }
    out.plan = *fixed_plan;
  } else {
    for (Index n = 0; n < batch; ++n) {
      const auto proposals = generate_proposals(rpn, n, anchors, arch, options.pre_nms_top_n,
                                                options.proposal_nms_iou, options.post_nms_top_n);
      out.plan.images.push_back(sample_image(anchors, proposals, targets[static_cast<std::size_t>(n)], options, rng));
    }
  }
  const SamplePlan& plan = out.plan;

  const Index per_cell = arch.anchors_per_cell();
  const Index fw = rpn.cls.dim(3);
  Tensor<Scalar> d_cls(rpn.cls.shape()), d_reg(rpn.reg.shape());

  // RPN classification.
  Index sampled = 0, positives = 0;
  for (const auto& im : plan.images) {
    sampled += static_cast<Index>(im.anchors.size());
    for (int l : im.anchor_labels) positives += l;
  }
  if (sampled > 0) {
    Tensor<Scalar> logits({sampled, 2});
    std::vector<int> labels;
    Index row = 0;
    for (Index n = 0; n < batch; ++n) {
      const auto& im = plan.images[static_cast<std::size_t>(n)];
      for (std::size_t i = 0; i < im.anchors.size(); ++i, ++row) {
        const auto [y, x, a] = anchor_slot(im.anchors[i], fw, per_cell);
        logits[2 * row] = rpn.cls(n, 2 * a, y, x);
        logits[2 * row + 1] = rpn.cls(n, 2 * a + 1, y, x);
        labels.push_back(im.anchor_labels[i]);
      }
    }
    const auto ce = softmax_cross_entropy(logits, std::span<const int>(labels), static_cast<Scalar>(sampled));
    out.losses.rpn_cls = static_cast<double>(ce.loss);
    row = 0;
    for (Index n = 0; n < batch; ++n) {
      const auto& im = plan.images[static_cast<std::size_t>(n)];
      for (std::size_t i = 0; i < im.anchors.size(); ++i, ++row) {
        const auto [y, x, a] = anchor_slot(im.anchors[i], fw, per_cell);
        d_cls(n, 2 * a, y, x) += ce.grad[2 * row];
        d_cls(n, 2 * a + 1, y, x) += ce.grad[2 * row + 1];
      }
    }
  }

  // RPN regression over positive anchors.
  if (options.include_reg && positives > 0) {
    Tensor<Scalar> pred({positives, 4}), target({positives, 4});
    Index row = 0;
    for (Index n = 0; n < batch; ++n) {
      const auto& im = plan.images[static_cast<std::size_t>(n)];
      for (std::size_t i = 0; i < im.anchors.size(); ++i) {
        if (im.anchor_labels[i] != 1) continue;
        const auto [y, x, a] = anchor_slot(im.anchors[i], fw, per_cell);
        for (int j = 0; j < 4; ++j) {
          pred[4 * row + j] = rpn.reg(n, 4 * a + j, y, x);
          target[4 * row + j] = static_cast<Scalar>(im.anchor_targets[i][static_cast<std::size_t>(j)]);
        }
        ++row;
      }
    }
    const auto l1 = smooth_l1(pred, target);
    out.losses.rpn_reg = static_cast<double>(l1.loss);
    row = 0;
    for (Index n = 0; n < batch; ++n) {
      const auto& im = plan.images[static_cast<std::size_t>(n)];
      for (std::size_t i = 0; i < im.anchors.size(); ++i) {
        if (im.anchor_labels[i] != 1) continue;
        const auto [y, x, a] = anchor_slot(im.anchors[i], fw, per_cell);
        for (int j = 0; j < 4; ++j) d_reg(n, 4 * a + j, y, x) += l1.grad[4 * row + j];
        ++row;
      }
    }
  }

  // ROI head.
  std::vector<std::vector<Box>> rois;
  std::vector<int> roi_labels;
  for (const auto& im : plan.images) {
    rois.push_back(im.rois);
    roi_labels.insert(roi_labels.end(), im.roi_labels.begin(), im.roi_labels.end());
  }
  Gradients<Scalar> grads = model.zeros_like();
  Tensor<Scalar> d_features(trace.features.shape());
  if (!roi_labels.empty()) {
    const RoiHeadOutput<Scalar> head = roi_head_forward(model, trace.features, rois);
    const Index total = head.cls.dim(0);
    const auto ce = softmax_cross_entropy(head.cls, std::span<const int>(roi_labels), static_cast<Scalar>(total));
    out.losses.roi_cls = static_cast<double>(ce.loss);

    Tensor<Scalar> d_roi_reg(head.reg.shape());
    Index fg = 0;
    for (int l : roi_labels) fg += l > 0 ? 1 : 0;
    if (options.include_reg && fg > 0) {
      Tensor<Scalar> pred({fg, 4}), target({fg, 4});
      std::vector<std::pair<Index, Index>> where;  // (row, class column offset)
      Index row = 0, r = 0;
      for (const auto& im : plan.images) {
        for (std::size_t i = 0; i < im.rois.size(); ++i, ++r) {
          if (im.roi_labels[i] == 0) continue;
          const Index col = 4 * (im.roi_labels[i] - 1);
          for (int j = 0; j < 4; ++j) {
            pred[4 * row + j] = head.reg[r * head.reg.dim(1) + col + j];
            target[4 * row + j] = static_cast<Scalar>(im.roi_targets[i][static_cast<std::size_t>(j)]);
          }
          where.emplace_back(r, col);
          ++row;
        }
      }
      const auto l1 = smooth_l1(pred, target);
      out.losses.roi_reg = static_cast<double>(l1.loss);
      for (Index k = 0; k < fg; ++k) {
        const auto [rr, col] = where[static_cast<std::size_t>(k)];
        for (int j = 0; j < 4; ++j) d_roi_reg[rr * head.reg.dim(1) + col + j] = l1.grad[4 * k + j];
      }
    }

    auto g_cls = linear_backward(ce.grad, head.fc2, model.at("roi.cls.weight"));
    accumulate(grads, "roi.cls.weight", g_cls.weight);
    accumulate(grads, "roi.cls.bias", g_cls.bias);
    Tensor<Scalar> d_fc2 = std::move(g_cls.input);
    if (options.include_reg) {
      auto g_reg = linear_backward(d_roi_reg, head.fc2, model.at("roi.reg.weight"));
      accumulate(grads, "roi.reg.weight", g_reg.weight);
      accumulate(grads, "roi.reg.bias", g_reg.bias);
      d_fc2.array() += g_reg.input.array();
    }
    auto g_fc2 = linear_backward(relu_backward(d_fc2, head.fc2_pre), head.fc1, model.at("roi.fc2.weight"));
    accumulate(grads, "roi.fc2.weight", g_fc2.weight);
    accumulate(grads, "roi.fc2.bias", g_fc2.bias);
    auto g_fc1 = linear_backward(relu_backward(g_fc2.input, head.fc1_pre), head.pooled, model.at("roi.fc1.weight"));
    accumulate(grads, "roi.fc1.weight", g_fc1.weight);
    accumulate(grads, "roi.fc1.bias", g_fc1.bias);
    const Index width = head.pooled.dim(1);
    const Index plane = trace.features.size() / std::max<Index>(batch, 1);
    for (Index r = 0; r < total; ++r) {
      Scalar* df = d_features.data() + head.image_of[static_cast<std::size_t>(r)] * plane;
      const Index* am = head.argmax.data() + r * width;
      for (Index j = 0; j < width; ++j) df[am[j]] += g_fc1.input[r * width + j];
    }
  }

  out.losses.total = out.losses.rpn_cls + out.losses.roi_cls;
  if (options.include_reg) out.losses.total += out.losses.rpn_reg + out.losses.roi_reg;
  if (!std::isfinite(out.losses.total)) {
    std::ostringstream os;
    os << "forward_train: non-finite loss (rpn_cls=" << out.losses.rpn_cls << " rpn_reg=" << out.losses.rpn_reg
       << " roi_cls=" << out.losses.roi_cls << " roi_reg=" << out.losses.roi_reg << ")";
    throw NumericalError(os.str());
  }

  // RPN backward.
  Tensor<Scalar> d_hidden(rpn.hidden.shape());
  {
    auto g = conv2d_backward(d_cls, rpn.hidden, model.at("rpn.cls.weight"), 1, 0);
    accumulate(grads, "rpn.cls.weight", g.kernel);
    accumulate(grads, "rpn.cls.bias", g.bias);
    d_hidden.array() += g.input.array();
  }
  if (options.include_reg) {
    auto g = conv2d_backward(d_reg, rpn.hidden, model.at("rpn.reg.weight"), 1, 0);
    accumulate(grads, "rpn.reg.weight", g.kernel);
    accumulate(grads, "rpn.reg.bias", g.bias);
    d_hidden.array() += g.input.array();
  }
  {
    auto g = conv2d_backward(relu_backward(d_hidden, rpn.hidden_pre), trace.features, model.at("rpn.conv.weight"), 1, 1);
    accumulate(grads, "rpn.conv.weight", g.kernel);
    accumulate(grads, "rpn.conv.bias", g.bias);
    d_features.array() += g.input.array();
  }

  // Backbone backward.
  Tensor<Scalar> g = std::move(d_features);
  for (int b = static_cast<int>(trace.blocks.size()) - 1; b >= 0; --b) {
    const auto& blk = trace.blocks[static_cast<std::size_t>(b)];
    if (!blk.pool_argmax.empty()) g = maxpool2_backward(g, std::span<const Index>(blk.pool_argmax), blk.pre_pool_shape);
    g = relu_backward(g, blk.bn_output);
    auto bg = bn_backward(g, blk.bn);
    accumulate(grads, backbone_bn_name(b) + ".gamma", bg.gamma);
    accumulate(grads, backbone_bn_name(b) + ".beta", bg.beta);
    const std::string conv = backbone_conv_name(b);
    auto cg = conv2d_backward(bg.input, blk.input, model.at(conv + ".weight"), 1, 1, b > 0);
    accumulate(grads, conv + ".weight", cg.kernel);
    accumulate(grads, conv + ".bias", cg.bias);
    g = std::move(cg.input);
  }
  if (!grads.all_finite()) throw NumericalError("forward_train: non-finite gradient");
  out.grads = std::move(grads);
  return out;
}

std::vector<std::vector<Detection>> forward_inference_batch(const ModelState& model, const TensorF& images,
                                                            const InferenceOptions& options, BNMode bn_mode) {
  const ArchDescriptor& arch = model.arch();
  const BackboneTrace<float> trace = backbone_forward(model, images, bn_mode);
  const RpnOutput<float> rpn = rpn_forward(model, trace.features);
  const std::vector<Box> anchors = anchors_for(arch);
  const Index batch = images.dim(0);
  std::vector<std::vector<Box>> proposals;
  for (Index n = 0; n < batch; ++n) {
    proposals.push_back(generate_proposals(rpn, n, anchors, arch, options.pre_nms_top_n, options.proposal_nms_iou,
                                           options.rpn_top_n));
  }
  std::vector<std::vector<Detection>> results(static_cast<std::size_t>(batch));
  bool any = false;
  for (const auto& p : proposals) any = any || !p.empty();
  if (!any) return results;

  const RoiHeadOutput<float> head = roi_head_forward(model, trace.features, proposals);
  const TensorF probs = softmax(head.cls);
  const int classes = arch.num_classes;
  const auto size = static_cast<float>(arch.input_size);
  Index r = 0;
  for (Index n = 0; n < batch; ++n) {
    std::vector<Detection> dets;
    for (const Box& p : proposals[static_cast<std::size_t>(n)]) {
      for (int c = 0; c < classes; ++c) {
        const float score = probs[r * (classes + 1) + c + 1];
        if (!(score >= options.score_floor)) continue;
        Deltas d;
        for (int j = 0; j < 4; ++j) d[static_cast<std::size_t>(j)] = head.reg[r * 4 * classes + 4 * c + j];
        const Box b = clip_box(decode_deltas(d, p), size, size);
        if (b.width() < 1.0f || b.height() < 1.0f) continue;
        dets.push_back({b, c, std::clamp(score, 0.0f, 1.0f)});
      }
      ++r;
    }
    dets = nms(std::move(dets), options.nms_iou);
    if (static_cast<int>(dets.size()) > options.max_dets) dets.resize(static_cast<std::size_t>(std::max(options.max_dets, 0)));
    results[static_cast<std::size_t>(n)] = std::move(dets);
  }
  return results;
}

std::vector<Detection> forward_inference(const ModelState& model, const TensorF& image, const InferenceOptions& options) {
  TensorF batch = image;
  if (batch.rank() == 3) batch.reshape({1, image.dim(0), image.dim(1), image.dim(2)});
  if (batch.rank() != 4 || batch.dim(0) != 1) {
    throw DimensionError("forward_inference: expected a single image, got " + shape_to_string(image.shape()));
  }
  return forward_inference_batch(model, batch, options, BNMode::Eval).front();
}

template BackboneTrace<float> backbone_forward(const BasicModelState<float>&, const Tensor<float>&, BNMode);
template BackboneTrace<double> backbone_forward(const BasicModelState<double>&, const Tensor<double>&, BNMode);
template RoiPoolResult<float> roi_pool(const Tensor<float>&, const Box&, int);
template RoiPoolResult<double> roi_pool(const Tensor<double>&, const Box&, int);
template TrainOutput<float> forward_train(BasicModelState<float>&, const Tensor<float>&,
                                          const std::vector<std::vector<Annotation>>&, const TrainOptions&, Rng&,
                                          const SamplePlan*);
template TrainOutput<double> forward_train(BasicModelState<double>&, const Tensor<double>&,
                                           const std::vector<std::vector<Annotation>>&, const TrainOptions&, Rng&,
                                           const SamplePlan*);

}  // namespace sfod
