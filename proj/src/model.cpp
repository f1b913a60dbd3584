#include "sfod/model.hpp"

#include <cmath>
#include <stdexcept>

namespace sfod {

void ArchDescriptor::validate() const {
  if (backbone_channels.empty()) throw std::invalid_argument("arch: empty backbone");
  if (input_size <= 0 || input_size % feature_stride() != 0) {
    throw std::invalid_argument("arch: stride " + std::to_string(feature_stride()) +
                                " does not divide input size " + std::to_string(input_size));
  }
  if (anchors_per_cell() < 1) throw std::invalid_argument("arch: need at least one anchor per cell");
  if (num_classes < 1 || roi_pool_size < 1 || roi_hidden < 1 || rpn_channels < 1) {
    throw std::invalid_argument("arch: non-positive head size");
  }
}

void to_json(nlohmann::json& j, const ArchDescriptor& a) {
  j = nlohmann::json{{"input_size", a.input_size},
                     {"input_channels", a.input_channels},
                     {"backbone_channels", a.backbone_channels},
                     {"rpn_channels", a.rpn_channels},
                     {"anchor_scales", a.anchor_scales},
                     {"anchor_aspects", a.anchor_aspects},
                     {"roi_pool_size", a.roi_pool_size},
                     {"roi_hidden", a.roi_hidden},
                     {"num_classes", a.num_classes},
                     {"bn_momentum", a.bn_momentum},
                     {"bn_epsilon", a.bn_epsilon}};
}

void from_json(const nlohmann::json& j, ArchDescriptor& a) {
  j.at("input_size").get_to(a.input_size);
  j.at("input_channels").get_to(a.input_channels);
  j.at("backbone_channels").get_to(a.backbone_channels);
  j.at("rpn_channels").get_to(a.rpn_channels);
  j.at("anchor_scales").get_to(a.anchor_scales);
  j.at("anchor_aspects").get_to(a.anchor_aspects);
  j.at("roi_pool_size").get_to(a.roi_pool_size);
  j.at("roi_hidden").get_to(a.roi_hidden);
  j.at("num_classes").get_to(a.num_classes);
  j.at("bn_momentum").get_to(a.bn_momentum);
  j.at("bn_epsilon").get_to(a.bn_epsilon);
}

const char* param_kind_name(ParamKind kind) {
  switch (kind) {
    case ParamKind::Weight: return "weight";
    case ParamKind::BnAffine: return "bn_affine";
    case ParamKind::BnStatistic: return "bn_statistic";
  }
  return "?";
}

ParamKind param_kind_from_name(const std::string& name) {
  if (name == "weight") return ParamKind::Weight;
  if (name == "bn_affine") return ParamKind::BnAffine;
  if (name == "bn_statistic") return ParamKind::BnStatistic;
  throw std::invalid_argument("unknown parameter kind '" + name + "'");
}

template <typename Scalar>
BasicModelState<Scalar>::BasicModelState(ArchDescriptor arch) : arch_(std::move(arch)) {}

template <typename Scalar>
void BasicModelState<Scalar>::add(std::string name, ParamKind kind, Tensor<Scalar> value) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), kind, std::move(value)});
}

template <typename Scalar>
Tensor<Scalar>& BasicModelState<Scalar>::at(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return entries_[it->second].value;
}

template <typename Scalar>
const Tensor<Scalar>& BasicModelState<Scalar>::at(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return entries_[it->second].value;
}

template <typename Scalar>
BNState<Scalar> BasicModelState<Scalar>::bn_state(const std::string& prefix) const {
  BNState<Scalar> s;
  s.gamma = at(prefix + ".gamma");
  s.beta = at(prefix + ".beta");
  s.running_mean = at(prefix + ".running_mean");
  s.running_var = at(prefix + ".running_var");
  s.momentum = static_cast<Scalar>(arch_.bn_momentum);
  s.epsilon = static_cast<Scalar>(arch_.bn_epsilon);
  return s;
}

template <typename Scalar>
void BasicModelState<Scalar>::set_bn_statistics(const std::string& prefix, const BNState<Scalar>& state) {
  at(prefix + ".running_mean") = state.running_mean;
  at(prefix + ".running_var") = state.running_var;
}

template <typename Scalar>
BasicModelState<Scalar> BasicModelState<Scalar>::zeros_like() const {
  BasicModelState out(arch_);
  for (const auto& e : entries_) out.add(e.name, e.kind, Tensor<Scalar>(e.value.shape()));
  return out;
}

template <typename Scalar>
void BasicModelState<Scalar>::require_compatible(const BasicModelState& other,
                                                 const std::string& what) const {
  if (entries_.size() != other.entries_.size()) {
    throw std::invalid_argument(what + ": " + std::to_string(entries_.size()) + " vs " +
                                std::to_string(other.entries_.size()) + " parameters");
  }
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.kind != b.kind || a.value.shape() != b.value.shape()) {
      throw std::invalid_argument(what + ": parameter mismatch at '" + a.name + "' " +
                                  shape_to_string(a.value.shape()) + " vs '" + b.name + "' " +
                                  shape_to_string(b.value.shape()));
    }
  }
}

template <typename Scalar>
bool BasicModelState<Scalar>::all_finite() const {
  for (const auto& e : entries_) {
    if (!e.value.all_finite()) return false;
  }
  return true;
}

std::string backbone_conv_name(int block) { return "backbone.conv" + std::to_string(block); }
std::string backbone_bn_name(int block) { return "backbone.bn" + std::to_string(block); }

std::vector<std::string> bn_layer_names(const ArchDescriptor& arch) {
  std::vector<std::string> names;
  for (int b = 0; b < static_cast<int>(arch.backbone_channels.size()); ++b) {
    names.push_back(backbone_bn_name(b));
  }
  return names;
}

namespace {

TensorF normal_tensor(Shape shape, float stddev, std::mt19937_64& rng) {
  TensorF t(std::move(shape));
  std::normal_distribution<float> dist(0.0f, stddev);
  for (float& v : t.values()) v = dist(rng);
  return t;
}

}  // namespace

ModelState init_model(const ArchDescriptor& arch, std::uint64_t seed) {
  arch.validate();
  std::mt19937_64 rng(seed);
  ModelState m(arch);
  int in_c = arch.input_channels;
  for (int b = 0; b < static_cast<int>(arch.backbone_channels.size()); ++b) {
    const int out_c = arch.backbone_channels[static_cast<std::size_t>(b)];
    const float he = std::sqrt(2.0f / static_cast<float>(in_c * 9));
    m.add(backbone_conv_name(b) + ".weight", ParamKind::Weight, normal_tensor({out_c, in_c, 3, 3}, he, rng));
    m.add(backbone_conv_name(b) + ".bias", ParamKind::Weight, TensorF({out_c}));
    m.add(backbone_bn_name(b) + ".gamma", ParamKind::BnAffine, TensorF({out_c}, 1.0f));
    m.add(backbone_bn_name(b) + ".beta", ParamKind::BnAffine, TensorF({out_c}));
    m.add(backbone_bn_name(b) + ".running_mean", ParamKind::BnStatistic, TensorF({out_c}));
    m.add(backbone_bn_name(b) + ".running_var", ParamKind::BnStatistic, TensorF({out_c}, 1.0f));
    in_c = out_c;
  }
  const int feat = arch.feature_channels();
  const int anchors = arch.anchors_per_cell();
  const float rpn_he = std::sqrt(2.0f / static_cast<float>(feat * 9));
  m.add("rpn.conv.weight", ParamKind::Weight, normal_tensor({arch.rpn_channels, feat, 3, 3}, rpn_he, rng));
  m.add("rpn.conv.bias", ParamKind::Weight, TensorF({arch.rpn_channels}));
  m.add("rpn.cls.weight", ParamKind::Weight, normal_tensor({2 * anchors, arch.rpn_channels, 1, 1}, 0.01f, rng));
  m.add("rpn.cls.bias", ParamKind::Weight, TensorF({2 * anchors}));
  m.add("rpn.reg.weight", ParamKind::Weight, normal_tensor({4 * anchors, arch.rpn_channels, 1, 1}, 0.01f, rng));
  m.add("rpn.reg.bias", ParamKind::Weight, TensorF({4 * anchors}));

  const int pooled = feat * arch.roi_pool_size * arch.roi_pool_size;
  const int hidden = arch.roi_hidden;
  m.add("roi.fc1.weight", ParamKind::Weight,
        normal_tensor({hidden, pooled}, std::sqrt(2.0f / static_cast<float>(pooled)), rng));
  m.add("roi.fc1.bias", ParamKind::Weight, TensorF({hidden}));
  m.add("roi.fc2.weight", ParamKind::Weight,
        normal_tensor({hidden, hidden}, std::sqrt(2.0f / static_cast<float>(hidden)), rng));
  m.add("roi.fc2.bias", ParamKind::Weight, TensorF({hidden}));
  m.add("roi.cls.weight", ParamKind::Weight, normal_tensor({arch.num_classes + 1, hidden}, 0.01f, rng));
  m.add("roi.cls.bias", ParamKind::Weight, TensorF({arch.num_classes + 1}));
  m.add("roi.reg.weight", ParamKind::Weight, normal_tensor({4 * arch.num_classes, hidden}, 0.001f, rng));
  m.add("roi.reg.bias", ParamKind::Weight, TensorF({4 * arch.num_classes}));
  return m;
}

template <typename Scalar>
void sgd_step(BasicModelState<Scalar>& params, const Gradients<Scalar>& grads, Scalar lr) {
  params.require_compatible(grads, "sgd_step");
  auto& entries = params.entries();
  const auto& g = grads.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!entries[i].trainable()) continue;
    entries[i].value.array() -= lr * g[i].value.array();
  }
}

template class BasicModelState<float>;
template class BasicModelState<double>;
template void sgd_step(BasicModelState<float>&, const Gradients<float>&, float);
template void sgd_step(BasicModelState<double>&, const Gradients<double>&, double);

}  // namespace sfod
