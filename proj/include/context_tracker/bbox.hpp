#ifndef CONTEXT_TRACKER_BBOX_HPP
#define CONTEXT_TRACKER_BBOX_HPP

#include <algorithm>
#include <cmath>
#include <string>

#include "context_tracker/errors.hpp"

namespace context_tracker {

/// Axis-aligned box: top-left corner and extents, in pixels.
struct BBox {
  double x = 0.0;
  double y = 0.0;
  double w = 1.0;
  double h = 1.0;

  double cx() const noexcept { return x + 0.5 * w; }
  double cy() const noexcept { return y + 0.5 * h; }
  double area() const noexcept { return w * h; }
  bool valid() const noexcept { return w > 0.0 && h > 0.0 && std::isfinite(x) && std::isfinite(y); }

  static BBox from_center(double cx, double cy, double w, double h) {
    return {cx - 0.5 * w, cy - 0.5 * h, w, h};
  }

  BBox translated(double dx, double dy) const { return {x + dx, y + dy, w, h}; }

  friend bool operator==(const BBox&, const BBox&) = default;
};

inline void require_valid(const BBox& b, const char* what) {
  if (!b.valid()) {
    throw ContractError(std::string(what) + ": degenerate box (w=" + std::to_string(b.w) +
                        ", h=" + std::to_string(b.h) + ")");
  }
}

/// Intersection over union with half-open intervals [x, x + w).
inline double iou(const BBox& a, const BBox& b) {
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

inline double center_distance(const BBox& a, const BBox& b) {
  return std::hypot(a.cx() - b.cx(), a.cy() - b.cy());
}

/// Keeps the centre inside the frame and extents within [min_side, frame extent].
inline BBox clip_to_frame(const BBox& b, double frame_w, double frame_h, double min_side = 10.0) {
  const double w = std::clamp(b.w, std::min(min_side, frame_w), frame_w);
  const double h = std::clamp(b.h, std::min(min_side, frame_h), frame_h);
  const double cx = std::clamp(b.cx(), 0.0, frame_w - 1.0);
  const double cy = std::clamp(b.cy(), 0.0, frame_h - 1.0);
  return BBox::from_center(cx, cy, w, h);
}

}  // namespace context_tracker

#endif  // CONTEXT_TRACKER_BBOX_HPP
