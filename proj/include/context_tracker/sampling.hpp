#ifndef CONTEXT_TRACKER_SAMPLING_HPP
#define CONTEXT_TRACKER_SAMPLING_HPP

// Candidate generation around a target state and IoU-based labelling.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "context_tracker/bbox.hpp"
#include "context_tracker/errors.hpp"

namespace context_tracker::sampling {

struct SamplerCfg {
  double trans_sigma_factor = 0.6;
  double scale_sigma = 0.5;
  double scale_base = 1.05;
  bool clip_to_frame = true;
  double frame_w = 0.0;  // needed when clip_to_frame is set
  double frame_h = 0.0;

  void validate() const {
    if (trans_sigma_factor < 0.0 || scale_sigma < 0.0) throw ContractError("sampler: sigmas must be non-negative");
    if (!(scale_base > 0.0)) throw ContractError("sampler: scale_base must be positive");
    if (clip_to_frame && (frame_w <= 0.0 || frame_h <= 0.0)) {
      throw ContractError("sampler: clip_to_frame requires frame extents");
    }
  }
};

/// Gaussian translation (std = factor * mean(w, h) per axis) and a log-normal
/// isotropic scale base^s, s ~ N(0, scale_sigma^2).
inline BBox draw_one(const BBox& center, const SamplerCfg& cfg, std::mt19937_64& rng) {
  std::normal_distribution<double> unit(0.0, 1.0);
  const double sigma = cfg.trans_sigma_factor * 0.5 * (center.w + center.h);
  const double dx = unit(rng) * sigma;
  const double dy = unit(rng) * sigma;
  const double s = std::pow(cfg.scale_base, unit(rng) * cfg.scale_sigma);
  BBox b = BBox::from_center(center.cx() + dx, center.cy() + dy, center.w * s, center.h * s);
  if (cfg.clip_to_frame) b = clip_to_frame(b, cfg.frame_w, cfg.frame_h);
  return b;
}

inline std::vector<BBox> sample_candidates(const BBox& center, std::size_t n, const SamplerCfg& cfg,
                                           std::uint64_t seed) {
  require_valid(center, "sample_candidates");
  cfg.validate();
  if (n == 0) throw ContractError("sample_candidates: n must be >= 1");
  std::mt19937_64 rng(seed);
  std::vector<BBox> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(draw_one(center, cfg, rng));
  return out;
}

struct Labeled {
  std::vector<BBox> positives;
  std::vector<BBox> negatives;
};

/// IoU > pos_thr -> positive, IoU < neg_thr -> negative, otherwise dropped.
inline Labeled label_candidates(const std::vector<BBox>& cands, const BBox& gt, double pos_thr, double neg_thr) {
  if (!(pos_thr > neg_thr)) throw ContractError("label_candidates: pos_thr must exceed neg_thr");
  Labeled out;
  for (const BBox& c : cands) {
    const double o = iou(c, gt);
    if (o > pos_thr) {
      out.positives.push_back(c);
    } else if (o < neg_thr) {
      out.negatives.push_back(c);
    }
  }
  return out;
}

enum class Phase { FirstFrame, Online, DomainAdapt };

struct Quotas {
  std::size_t positives;
  std::size_t negatives;
  double pos_thr;
  double neg_thr;
};

inline Quotas phase_quotas(Phase phase) {
  switch (phase) {
    case Phase::FirstFrame: return {500, 5000, 0.7, 0.5};
    case Phase::Online: return {50, 200, 0.7, 0.3};
    case Phase::DomainAdapt: return {250, 250, 0.7, 0.5};
  }
  return {0, 0, 0.7, 0.5};
}

/// Distribution knobs for the training-set draws. Positives come from a tight
/// Gaussian, negatives from a wider one; domain-adaptation negatives double the
/// negative spread and mix in whole-frame uniform draws.
struct TrainingDrawCfg {
  double pos_trans_factor = 0.1;
  double pos_scale_sigma = 0.5;
  double neg_trans_factor = 1.0;
  double neg_scale_sigma = 1.0;
  double da_neg_trans_multiplier = 2.0;
  double da_uniform_fraction = 0.2;
  double scale_base = 1.05;
  std::size_t max_attempts_per_sample = 200;
};

inline Labeled draw_training_sets(const BBox& gt, Phase phase, std::uint64_t seed, double frame_w, double frame_h,
                                  const TrainingDrawCfg& dcfg = {}) {
  require_valid(gt, "draw_training_sets");
  if (frame_w <= 0.0 || frame_h <= 0.0) throw ContractError("draw_training_sets: frame extents must be positive");
  const Quotas q = phase_quotas(phase);
  std::mt19937_64 rng(seed);

  SamplerCfg pos_cfg{dcfg.pos_trans_factor, dcfg.pos_scale_sigma, dcfg.scale_base, true, frame_w, frame_h};
  SamplerCfg neg_cfg{dcfg.neg_trans_factor, dcfg.neg_scale_sigma, dcfg.scale_base, true, frame_w, frame_h};
  if (phase == Phase::DomainAdapt) neg_cfg.trans_sigma_factor *= dcfg.da_neg_trans_multiplier;

  Labeled out;
  out.positives.reserve(q.positives);
  out.negatives.reserve(q.negatives);

  const std::size_t pos_budget = q.positives * dcfg.max_attempts_per_sample;
  std::size_t attempts = 0;
  while (out.positives.size() < q.positives) {
    if (++attempts > pos_budget) {
      throw SamplingExhausted("draw_training_sets: only " + std::to_string(out.positives.size()) + "/" +
                              std::to_string(q.positives) + " positives with IoU > " + std::to_string(q.pos_thr));
    }
    const BBox b = draw_one(gt, pos_cfg, rng);
    if (iou(b, gt) > q.pos_thr) out.positives.push_back(b);
  }

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const std::size_t neg_budget = q.negatives * dcfg.max_attempts_per_sample;
  attempts = 0;
  while (out.negatives.size() < q.negatives) {
    if (++attempts > neg_budget) {
      throw SamplingExhausted("draw_training_sets: only " + std::to_string(out.negatives.size()) + "/" +
                              std::to_string(q.negatives) + " negatives with IoU < " + std::to_string(q.neg_thr));
    }
    BBox b;
    if (phase == Phase::DomainAdapt && unif(rng) < dcfg.da_uniform_fraction) {
      const double cx = unif(rng) * frame_w;
      const double cy = unif(rng) * frame_h;
      b = clip_to_frame(BBox::from_center(cx, cy, gt.w, gt.h), frame_w, frame_h);
    } else {
      b = draw_one(gt, neg_cfg, rng);
    }
    if (iou(b, gt) < q.neg_thr) out.negatives.push_back(b);
  }
  return out;
}

/// Candidates for the box regressor: IoU > min_iou with gt.
inline std::vector<BBox> draw_regression_set(const BBox& gt, std::size_t n, double min_iou, std::uint64_t seed,
                                             double frame_w, double frame_h) {
  require_valid(gt, "draw_regression_set");
  SamplerCfg cfg{0.3, 1.0, 1.6, true, frame_w, frame_h};
  std::mt19937_64 rng(seed);
  std::vector<BBox> out;
  out.reserve(n);
  const std::size_t budget = n * 200;
  std::size_t attempts = 0;
  while (out.size() < n) {
    if (++attempts > budget) throw SamplingExhausted("draw_regression_set: quota unreachable");
    const BBox b = draw_one(gt, cfg, rng);
    if (iou(b, gt) > min_iou) out.push_back(b);
  }
  return out;
}

}  // namespace context_tracker::sampling

#endif  // CONTEXT_TRACKER_SAMPLING_HPP
