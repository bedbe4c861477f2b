#ifndef CONTEXT_TRACKER_REGRESSOR_HPP
#define CONTEXT_TRACKER_REGRESSOR_HPP

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <span>
#include <vector>

#include "context_tracker/bbox.hpp"
#include "context_tracker/errors.hpp"
#include "context_tracker/tensor.hpp"

namespace context_tracker::regress {

/// (dx, dy, dlog w, dlog h) taking `from` onto `to`.
inline Eigen::Vector4d box_targets(const BBox& from, const BBox& to) {
  return {(to.cx() - from.cx()) / from.w, (to.cy() - from.cy()) / from.h, std::log(to.w / from.w),
          std::log(to.h / from.h)};
}

inline BBox apply_targets(const BBox& b, const Eigen::Vector4d& t) {
  return BBox::from_center(b.cx() + t[0] * b.w, b.cy() + t[1] * b.h, b.w * std::exp(t[2]), b.h * std::exp(t[3]));
}

/// Linear ridge map from a flattened RoI feature (plus a constant 1, also
/// penalised) to box-transform targets.
struct BoxRegressor {
  Eigen::MatrixXd weights;  // (D + 1) x 4; last row multiplies the constant
  double lambda = 1000.0;

  std::size_t feature_dim() const { return weights.rows() == 0 ? 0 : static_cast<std::size_t>(weights.rows() - 1); }
  bool trained() const { return weights.rows() > 0; }

  Eigen::Vector4d predict(const Tensor& feature) const {
    if (feature.size() != feature_dim()) throw ContractError("BoxRegressor: feature size mismatch");
    Eigen::Vector4d t = weights.row(weights.rows() - 1).transpose();
    const Eigen::Index d = static_cast<Eigen::Index>(feature_dim());
    for (Eigen::Index i = 0; i < d; ++i) t += static_cast<double>(feature[static_cast<std::size_t>(i)]) * weights.row(i).transpose();
    return t;
  }
};

/// Closed-form ridge regression; uses the dual (N x N) system when N < D + 1.
inline BoxRegressor train_box_regressor(std::span<const Tensor> features, std::span<const BBox> boxes, const BBox& gt,
                                        double lambda = 1000.0, std::size_t min_samples = 32) {
  if (!(lambda > 0.0)) throw ContractError("train_box_regressor: lambda must be > 0");
  if (features.size() != boxes.size()) throw ContractError("train_box_regressor: features/boxes length mismatch");
  if (features.size() < min_samples) {
    throw ContractError("train_box_regressor: need at least " + std::to_string(min_samples) + " candidates, got " +
                        std::to_string(features.size()));
  }
  require_valid(gt, "train_box_regressor");
  const Eigen::Index n = static_cast<Eigen::Index>(features.size());
  const Eigen::Index d = static_cast<Eigen::Index>(features.front().size()) + 1;
  Eigen::MatrixXd x(n, d);
  Eigen::MatrixXd y(n, 4);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Tensor& f = features[static_cast<std::size_t>(i)];
    if (static_cast<Eigen::Index>(f.size()) + 1 != d) throw ContractError("train_box_regressor: inconsistent feature sizes");
    for (Eigen::Index j = 0; j + 1 < d; ++j) x(i, j) = f[static_cast<std::size_t>(j)];
    x(i, d - 1) = 1.0;
    y.row(i) = box_targets(boxes[static_cast<std::size_t>(i)], gt).transpose();
  }

  BoxRegressor reg;
  reg.lambda = lambda;
  if (n < d) {
    Eigen::MatrixXd gram = x * x.transpose();
    gram.diagonal().array() += lambda;
    reg.weights = x.transpose() * gram.llt().solve(y);
  } else {
    Eigen::MatrixXd gram = x.transpose() * x;
    gram.diagonal().array() += lambda;
    reg.weights = gram.llt().solve(x.transpose() * y);
  }
  return reg;
}

/// Refined box, clipped to the frame when extents are given.
inline BBox apply_regressor(const BoxRegressor& reg, const Tensor& feature, const BBox& box, double frame_w = 0.0,
                            double frame_h = 0.0) {
  BBox out = apply_targets(box, reg.predict(feature));
  if (frame_w > 0.0 && frame_h > 0.0) out = clip_to_frame(out, frame_w, frame_h);
  return out;
}

}  // namespace context_tracker::regress

#endif  // CONTEXT_TRACKER_REGRESSOR_HPP
