#pragma once

#include <cstdint>
#include <string>

#include "dust/params.hpp"
#include "dust/tensor.hpp"

namespace dust {

enum class UpsampleKind { TransposedConv, Bilinear };

std::string to_string(UpsampleKind kind);
UpsampleKind upsample_kind_from_string(const std::string& name);

struct UNetConfig {
  std::size_t depth = 4;
  std::size_t base_channels = 16;
  std::size_t n_classes = 4;
  bool instance_norm = true;
  UpsampleKind main_upsample = UpsampleKind::TransposedConv;
  UpsampleKind aux_upsample = UpsampleKind::Bilinear;

  bool operator==(const UNetConfig&) const = default;
};

/// Throws std::invalid_argument unless depth >= 2, base_channels >= 4,
/// n_classes >= 2 and the two decoders use different upsampling kinds.
void validate(const UNetConfig& cfg);

/// Spatial dims of the input must be multiples of 2^(depth-1).
std::size_t spatial_divisor(const UNetConfig& cfg);

/// Closed-form count of scalar parameters for the architecture.
std::size_t expected_param_count(const UNetConfig& cfg);

template <typename T>
struct BasicModelParams {
  UNetConfig config;
  BasicParamSet<T> params;

  template <typename U = T>
  BasicModelParams<U> clone_as() const {
    return BasicModelParams<U>{config, params.template clone_as<U>()};
  }
};

using ModelParams = BasicModelParams<float>;

/// He-normal (fan-in) kernels, zero biases, unit/zero norm affine. Identical
/// seeds give bit-identical buffers.
ModelParams init_params(const UNetConfig& cfg, std::uint64_t seed);
ModelParams init_params(std::size_t depth, std::size_t base_channels, std::size_t n_classes,
                        std::uint64_t seed);

/// Per-pixel class probabilities from the main and auxiliary decoders.
template <typename T>
struct BasicDualPrediction {
  BasicTensor<T> main_prob;
  BasicTensor<T> aux_prob;
};

using DualPrediction = BasicDualPrediction<float>;

/// batch [B,1,H,W] -> two [B,n,H,W] softmax maps sharing one encoder pass.
template <typename T>
BasicDualPrediction<T> predict_dual(const BasicModelParams<T>& model, const BasicTensor<T>& batch);

/// Main-decoder softmax only (skips the auxiliary branch).
template <typename T>
BasicTensor<T> predict_main(const BasicModelParams<T>& model, const BasicTensor<T>& batch);

/// Argmax over the class axis of a [B,n,H,W] map; ties go to the lowest index.
LabelBatch argmax_labels(const Tensor& prob);

/// Eval-mode hard labels from the main decoder.
LabelBatch predict_main_labels(const ModelParams& model, const Tensor& batch);

}  // namespace dust
