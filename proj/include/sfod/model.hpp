#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "sfod/batchnorm.hpp"
#include "sfod/tensor.hpp"

namespace sfod {

/// Shape of the micro detector. Every block is conv3x3 -> BN -> ReLU, with a
/// 2x2 max-pool after each block except the last, so the feature stride is
/// 2^(blocks-1).
struct ArchDescriptor {
  int input_size = 96;
  int input_channels = 3;
  std::vector<int> backbone_channels{8, 16, 32, 64};
  int rpn_channels = 64;
  std::vector<float> anchor_scales{16, 32, 64};
  std::vector<float> anchor_aspects{0.5f, 1.0f, 2.0f};
  int roi_pool_size = 5;
  int roi_hidden = 256;
  int num_classes = 3;
  float bn_momentum = 0.1f;
  float bn_epsilon = 1e-5f;

  int feature_stride() const { return 1 << (static_cast<int>(backbone_channels.size()) - 1); }
  int feature_size() const { return input_size / feature_stride(); }
  int feature_channels() const { return backbone_channels.back(); }
  int anchors_per_cell() const {
    return static_cast<int>(anchor_scales.size() * anchor_aspects.size());
  }
  void validate() const;

  bool operator==(const ArchDescriptor&) const = default;
};

void to_json(nlohmann::json& j, const ArchDescriptor& a);
void from_json(const nlohmann::json& j, ArchDescriptor& a);

enum class ParamKind : std::uint8_t {
  Weight,       // conv / linear weights and biases
  BnAffine,     // BN gamma, beta
  BnStatistic,  // BN running mean / variance (not trainable)
};

const char* param_kind_name(ParamKind kind);
ParamKind param_kind_from_name(const std::string& name);

template <typename Scalar>
struct NamedTensor {
  std::string name;
  ParamKind kind = ParamKind::Weight;
  Tensor<Scalar> value;

  bool trainable() const { return kind != ParamKind::BnStatistic; }
  bool operator==(const NamedTensor&) const = default;
};

/// Every array of the detector by name, in architecture order. Also used to
/// hold gradients (with statistics entries left at zero).
template <typename Scalar>
class BasicModelState {
 public:
  BasicModelState() = default;
  explicit BasicModelState(ArchDescriptor arch);

  const ArchDescriptor& arch() const { return arch_; }
  const std::vector<NamedTensor<Scalar>>& entries() const { return entries_; }
  std::vector<NamedTensor<Scalar>>& entries() { return entries_; }

  void add(std::string name, ParamKind kind, Tensor<Scalar> value);
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  Tensor<Scalar>& at(const std::string& name);
  const Tensor<Scalar>& at(const std::string& name) const;

  /// Extracts (or writes back) the BN layer called `prefix`.
  BNState<Scalar> bn_state(const std::string& prefix) const;
  void set_bn_statistics(const std::string& prefix, const BNState<Scalar>& state);

  /// Same names and shapes, entries zero-filled.
  BasicModelState zeros_like() const;

  /// Throws std::invalid_argument unless `other` has identical names, kinds and shapes.
  void require_compatible(const BasicModelState& other, const std::string& what) const;

  template <typename Other>
  BasicModelState<Other> cast() const {
    BasicModelState<Other> out;
    out.set_arch(arch_);
    for (const auto& e : entries_) out.add(e.name, e.kind, e.value.template cast<Other>());
    return out;
  }

  void set_arch(ArchDescriptor arch) { arch_ = std::move(arch); }
  bool all_finite() const;

  bool operator==(const BasicModelState& other) const {
    return arch_ == other.arch_ && entries_ == other.entries_;
  }

 private:
  ArchDescriptor arch_;
  std::vector<NamedTensor<Scalar>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

using ModelState = BasicModelState<float>;
template <typename Scalar>
using Gradients = BasicModelState<Scalar>;

std::string backbone_conv_name(int block);
std::string backbone_bn_name(int block);

/// Names of the BN layers in forward order.
std::vector<std::string> bn_layer_names(const ArchDescriptor& arch);

/// He-normal conv/linear weights, zero biases, identity BN; detection heads
/// use small Gaussian weights.
ModelState init_model(const ArchDescriptor& arch, std::uint64_t seed);

/// w <- w - lr * g for every trainable entry; BN statistics untouched.
template <typename Scalar>
void sgd_step(BasicModelState<Scalar>& params, const Gradients<Scalar>& grads, Scalar lr);

}  // namespace sfod
