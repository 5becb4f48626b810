#include "dust/losses.hpp"

#include <cmath>
#include <sstream>

#include "dust/ops.hpp"

namespace dust {
namespace {

void require_labels_match(const char* op, const Shape& prob, const LabelBatch& labels) {
  if (prob.size() != 4 || prob[0] != labels.batch || prob[2] != labels.height ||
      prob[3] != labels.width) {
    throw ShapeError(std::string(op) + ": probability map " + shape_str(prob) +
                     " does not match labels [" + std::to_string(labels.batch) + "," +
                     std::to_string(labels.height) + "," + std::to_string(labels.width) + "]");
  }
}

template <typename T>
BasicTensor<T> shifted_log(const BasicTensor<T>& x, double eps) {
  return log(affine(x, T(1), static_cast<T>(eps)));
}

}  // namespace

template <typename T>
BasicTensor<T> kl_pixel_uncertainty(const BasicDualPrediction<T>& pred, const LossOptions& opts) {
  if (pred.main_prob.shape() != pred.aux_prob.shape()) {
    throw ShapeError("kl_pixel_uncertainty: main map " + shape_str(pred.main_prob.shape()) +
                     " and aux map " + shape_str(pred.aux_prob.shape()) + " differ");
  }
  if (pred.main_prob.rank() != 4) {
    throw ShapeError("kl_pixel_uncertainty: expected [B,n,H,W], got " +
                     shape_str(pred.main_prob.shape()));
  }
  auto log_ratio = linear_combination<T>(
      {shifted_log(pred.main_prob, opts.log_eps), shifted_log(pred.aux_prob, opts.log_eps)},
      {T(1), T(-1)});
  return relu(sum(mul(pred.main_prob, log_ratio), {1}));
}

template <typename T>
BasicLossValue<T> cross_entropy(const BasicTensor<T>& prob, const LabelBatch& target,
                                const LossOptions& opts) {
  require_labels_match("cross_entropy", prob.shape(), target);
  auto onehot = one_hot<T>(target, prob.dim(1));
  auto per_pixel = affine(sum(mul(onehot, shifted_log(prob, opts.log_eps)), {1}), T(-1), T(0));
  return {mean_all(per_pixel), per_pixel};
}

template <typename T>
BasicLossValue<T> dice_loss(const BasicTensor<T>& prob, const LabelBatch& target,
                            const LossOptions& opts) {
  require_labels_match("dice_loss", prob.shape(), target);
  const std::size_t B = prob.dim(0), C = prob.dim(1);
  if (!opts.dice_include_background && C < 2) {
    throw std::invalid_argument("dice_loss: foreground-only Dice needs at least 2 classes");
  }
  const T s = static_cast<T>(opts.dice_smooth);
  auto onehot = one_hot<T>(target, C);
  auto inter = sum(mul(prob, onehot), {2, 3});
  auto prob_mass = sum(prob, {2, 3});
  BasicTensor<T> target_mass;
  {
    NoGradGuard constant;
    target_mass = sum(onehot, {2, 3});
  }
  auto num = affine(inter, T(2), s);
  auto den = linear_combination<T>({prob_mass, target_mass}, {T(1), T(1)}, s);
  // num / den as exp(log num - log den); both stay >= s > 0.
  auto dice = exp(linear_combination<T>({log(num), log(den)}, {T(1), T(-1)}));
  BasicTensor<T> mean_dice;
  if (opts.dice_include_background) {
    mean_dice = mean_all(dice);
  } else {
    std::vector<T> mask(B * C, T(1));
    for (std::size_t b = 0; b < B; ++b) mask[b * C] = T(0);
    mean_dice = affine(sum_all(mul(dice, BasicTensor<T>({B, C}, std::move(mask)))),
                       T(1) / static_cast<T>(B * (C - 1)), T(0));
  }
  return {affine(mean_dice, T(-1), T(1)), {}};
}

template <typename T>
BasicLossValue<T> supervised_loss_single(const BasicTensor<T>& prob, const LabelBatch& target,
                                         const LossOptions& opts) {
  auto dice = dice_loss(prob, target, opts);
  auto ce = cross_entropy(prob, target, opts);
  return {linear_combination<T>({dice.scalar, ce.scalar}, {T(0.5), T(0.5)}), {}};
}

template <typename T>
BasicLossValue<T> supervised_loss(const BasicDualPrediction<T>& pred, const LabelBatch& target,
                                  const LossOptions& opts) {
  auto dice_main = dice_loss(pred.main_prob, target, opts);
  auto dice_aux = dice_loss(pred.aux_prob, target, opts);
  auto ce_main = cross_entropy(pred.main_prob, target, opts);
  auto ce_aux = cross_entropy(pred.aux_prob, target, opts);
  return {linear_combination<T>({dice_main.scalar, dice_aux.scalar, ce_main.scalar, ce_aux.scalar},
                                {T(0.25), T(0.25), T(0.25), T(0.25)}),
          {}};
}

template <typename T>
BasicLossValue<T> rectified_unsup_loss(const BasicDualPrediction<T>& pred, const LabelBatch& pseudo,
                                       const LossOptions& opts) {
  auto kl = kl_pixel_uncertainty(pred, opts);
  auto ce = cross_entropy(pred.main_prob, pseudo, opts);
  auto weight = exp(affine(kl, T(-1), T(0)));
  auto per_pixel = add(mul(weight, ce.per_pixel), kl);
  return {mean_all(per_pixel), per_pixel};
}

template <typename T>
BasicLossValue<T> plain_unsup_loss(const BasicDualPrediction<T>& pred, const LabelBatch& pseudo,
                                   const LossOptions& opts) {
  return cross_entropy(pred.main_prob, pseudo, opts);
}

template <typename T>
BasicLossValue<T> total_loss(const BasicLossValue<T>& sup,
                             const std::optional<BasicLossValue<T>>& unsup, double unsup_weight) {
  const double s = sup.value();
  const double u = unsup ? static_cast<double>(unsup->value()) : 0.0;
  if (!std::isfinite(s) || !std::isfinite(u) || !std::isfinite(unsup_weight)) {
    std::ostringstream os;
    os << "total_loss: non-finite loss (supervised=" << s;
    if (unsup) os << ", unsupervised=" << u;
    os << ", weight=" << unsup_weight << ")";
    throw NonFiniteLoss(os.str());
  }
  if (!unsup) return {sup.scalar, {}};
  return {linear_combination<T>({sup.scalar, unsup->scalar}, {T(1), static_cast<T>(unsup_weight)}),
          {}};
}

#define DUST_INSTANTIATE_LOSSES(T)                                                               \
  template BasicTensor<T> kl_pixel_uncertainty(const BasicDualPrediction<T>&, const LossOptions&); \
  template BasicLossValue<T> cross_entropy(const BasicTensor<T>&, const LabelBatch&,             \
                                           const LossOptions&);                                  \
  template BasicLossValue<T> dice_loss(const BasicTensor<T>&, const LabelBatch&,                 \
                                       const LossOptions&);                                      \
  template BasicLossValue<T> supervised_loss_single(const BasicTensor<T>&, const LabelBatch&,    \
                                                    const LossOptions&);                         \
  template BasicLossValue<T> supervised_loss(const BasicDualPrediction<T>&, const LabelBatch&,   \
                                             const LossOptions&);                                \
  template BasicLossValue<T> rectified_unsup_loss(const BasicDualPrediction<T>&,                 \
                                                  const LabelBatch&, const LossOptions&);        \
  template BasicLossValue<T> plain_unsup_loss(const BasicDualPrediction<T>&, const LabelBatch&,  \
                                              const LossOptions&);                               \
  template BasicLossValue<T> total_loss(const BasicLossValue<T>&,                                \
                                        const std::optional<BasicLossValue<T>>&, double);

DUST_INSTANTIATE_LOSSES(float)
DUST_INSTANTIATE_LOSSES(double)
DUST_INSTANTIATE_LOSSES(long double)

#undef DUST_INSTANTIATE_LOSSES

}  // namespace dust
