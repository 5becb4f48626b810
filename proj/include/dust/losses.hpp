#pragma once

#include <optional>
#include <stdexcept>

#include "dust/tensor.hpp"
#include "dust/unet.hpp"

namespace dust {

struct LossOptions {
  double log_eps = 1e-8;      // inside every log
  double dice_smooth = 1e-5;  // soft-Dice numerator/denominator smoothing
  bool dice_include_background = true;
};

/// A scalar loss node plus, for pixel-wise losses, the [B,H,W] map it averages.
template <typename T>
struct BasicLossValue {
  BasicTensor<T> scalar;
  BasicTensor<T> per_pixel;  // undefined when the loss is not pixel-wise

  T value() const { return scalar.item(); }
};

using LossValue = BasicLossValue<float>;

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Per-pixel KL(main || aux) = sum_c p_c log((p_c+eps)/(q_c+eps)), clamped at 0.
/// Differentiable with respect to both maps.
template <typename T>
BasicTensor<T> kl_pixel_uncertainty(const BasicDualPrediction<T>& pred, const LossOptions& opts = {});

/// -log(prob[target] + eps) per pixel; scalar is the mean over B*H*W.
template <typename T>
BasicLossValue<T> cross_entropy(const BasicTensor<T>& prob, const LabelBatch& target,
                                const LossOptions& opts = {});

/// 1 - mean over (batch, class) of (2 sum p t + s) / (sum p + sum t + s).
template <typename T>
BasicLossValue<T> dice_loss(const BasicTensor<T>& prob, const LabelBatch& target,
                            const LossOptions& opts = {});

/// (dice + ce) / 2 for a single probability map.
template <typename T>
BasicLossValue<T> supervised_loss_single(const BasicTensor<T>& prob, const LabelBatch& target,
                                         const LossOptions& opts = {});

/// (L_dice + L_ce) / 2 where each term is averaged over the two decoders.
template <typename T>
BasicLossValue<T> supervised_loss(const BasicDualPrediction<T>& pred, const LabelBatch& target,
                                  const LossOptions& opts = {});

/// exp(-D_kl) * ce_main + D_kl per pixel, averaged. Gradients reach both
/// decoders, including through the exp(-D_kl) weight.
template <typename T>
BasicLossValue<T> rectified_unsup_loss(const BasicDualPrediction<T>& pred, const LabelBatch& pseudo,
                                       const LossOptions& opts = {});

/// Unrectified pseudo-label loss: cross-entropy of the main map only.
template <typename T>
BasicLossValue<T> plain_unsup_loss(const BasicDualPrediction<T>& pred, const LabelBatch& pseudo,
                                   const LossOptions& opts = {});

/// sup + unsup_weight * unsup. Throws NonFiniteLoss if either term is NaN/Inf.
template <typename T>
BasicLossValue<T> total_loss(const BasicLossValue<T>& sup, const std::optional<BasicLossValue<T>>& unsup,
                             double unsup_weight = 1.0);

}  // namespace dust
