#pragma once

#include <vector>

#include "sfod/model.hpp"
#include "sfod/tensor.hpp"

namespace sfod {

/// AdaBN: replaces every BN layer's running mean/variance with the
/// equal-weight average of its Train-mode batch statistics over one pass of
/// `batches` (each [N,3,H,W]). Weights, gamma and beta are copied untouched.
/// Throws std::invalid_argument on an empty stream.
ModelState collect_target_statistics(const ModelState& model, const std::vector<TensorF>& batches);

/// Consecutive batches of `batch_size` from an [N,3,H,W] tensor; the last
/// one may be shorter.
std::vector<TensorF> split_batches(const TensorF& images, int batch_size);

}  // namespace sfod
