#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "textdeform/autodiff.hpp"
#include "textdeform/geometry.hpp"

namespace textdeform {

struct LossConfig {
  double alpha = 3.0;    // weight on the distance regression
  double lambda = 0.1;   // weight on the boundary matching term
  int eps = 60;          // maximum training epoch
  double ohem_neg_ratio = 3.0;
  double smooth_l1_beta = 1.0;
  int ohem_empty_negatives = 100;

  void validate() const;
};

/// Keeps every positive and the min(ratio * #pos, #neg) highest-loss
/// negatives. Without positives the top `empty_negatives` negatives are
/// kept. Pixels with valid == 0 are never selected. Ties between equal
/// losses resolve toward the lower index.
std::vector<std::uint8_t> ohem_select(std::span<const double> per_pixel_loss, std::span<const float> cls_gt,
                                      double ratio, int empty_negatives = 100,
                                      std::span<const std::uint8_t> valid = {});
std::vector<std::uint8_t> ohem_select(const GridMap& per_pixel_loss, const GridMap& cls_gt, double ratio);

/// Per-pixel binary cross-entropy of probabilities, clamped away from 0 and 1.
std::vector<double> bce_per_pixel(const GridMap& pred_cls, const GridMap& gt_cls);

// Value-only losses, matching the differentiable versions below.
double loss_cls(const GridMap& pred_cls, const GridMap& gt_cls, const LossConfig& cfg);
double loss_dist(const GridMap& pred_dist, const GridMap& gt_dist, std::span<const std::uint8_t> mask);
double loss_dir(const GridMap& pred_dir, const GridMap& gt_dir, const GridMap& segment_size, const GridMap& gt_cls);
double matching_loss(const ControlPolygon& pred, const ControlPolygon& gt, double beta = 1.0);
/// Index shift j that realises the minimum in matching_loss.
int best_shift(const ControlPolygon& pred, const ControlPolygon& gt, double beta = 1.0);

/// lambda / (1 + exp((i - eps) / eps)).
double deform_weight(double epoch, const LossConfig& cfg);

struct LossParts {
  double cls = 0.0;
  double dist = 0.0;
  double dir = 0.0;
  double match = 0.0;
};

double total_loss(const LossParts& parts, double epoch, const LossConfig& cfg);

namespace ad_loss {

/// Masked mean of softplus(z) - y z over logits z (any shape, H*W values).
template <class T>
ad::Var<T> cls_from_logits(const ad::Var<T>& logits, std::span<const float> gt, std::span<const std::uint8_t> mask);

/// Masked mean squared error.
template <class T>
ad::Var<T> dist_mse(const ad::Var<T>& pred, std::span<const float> gt, std::span<const std::uint8_t> mask);

/// pred (2, H, W); gt_dir as GridMap H x W x 2.
template <class T>
ad::Var<T> direction(const ad::Var<T>& pred, const GridMap& gt_dir, const GridMap& segment_size, const GridMap& gt_cls);

/// pred (N, 2) against gt (N, 2); gradient flows through the minimising shift.
template <class T>
ad::Var<T> matching(const ad::Var<T>& pred, const ControlPolygon& gt, double beta);

}  // namespace ad_loss

}  // namespace textdeform
