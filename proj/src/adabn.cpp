#include "sfod/adabn.hpp"

#include <stdexcept>

#include "sfod/detector.hpp"

namespace sfod {

ModelState collect_target_statistics(const ModelState& model, const std::vector<TensorF>& batches) {
  if (batches.empty()) throw std::invalid_argument("collect_target_statistics: empty target stream");
  const auto names = bn_layer_names(model.arch());
  if (names.empty()) throw std::invalid_argument("collect_target_statistics: model has no BN layers");

  std::vector<TensorD> mean_sum, var_sum;
  for (const auto& name : names) {
    const Shape shape = model.at(name + ".running_mean").shape();
    mean_sum.emplace_back(shape);
    var_sum.emplace_back(shape);
  }
  for (const auto& batch : batches) {
    const auto trace = backbone_forward(model, batch, BNMode::Train);
    for (std::size_t l = 0; l < names.size(); ++l) {
      mean_sum[l].array() += trace.batch_means[l].array().cast<double>();
      var_sum[l].array() += trace.batch_vars[l].array().cast<double>();
    }
  }

  ModelState out = model;
  const double inv = 1.0 / static_cast<double>(batches.size());
  for (std::size_t l = 0; l < names.size(); ++l) {
    out.at(names[l] + ".running_mean").array() = (mean_sum[l].array() * inv).cast<float>();
    out.at(names[l] + ".running_var").array() = (var_sum[l].array() * inv).cast<float>();
  }
  return out;
}

std::vector<TensorF> split_batches(const TensorF& images, int batch_size) {
  if (batch_size <= 0) throw std::invalid_argument("split_batches: batch size must be positive");
  std::vector<TensorF> out;
  const Index n = images.dim(0);
  for (Index b = 0; b < n; b += batch_size) out.push_back(images.slice(b, std::min<Index>(n, b + batch_size)));
  return out;
}

}  // namespace sfod
