#ifndef CONTEXT_TRACKER_TRACKER_HPP
#define CONTEXT_TRACKER_TRACKER_HPP

// Online tracking state machine: first-frame domain adaptation and head
// training, then per-frame candidate scoring with short-term (on failure) and
// long-term (every tau_int frames) head updates fed from bounded memories.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "context_tracker/adapt.hpp"
#include "context_tracker/backbone.hpp"
#include "context_tracker/bbox.hpp"
#include "context_tracker/errors.hpp"
#include "context_tracker/head.hpp"
#include "context_tracker/image.hpp"
#include "context_tracker/loss.hpp"
#include "context_tracker/parallel.hpp"
#include "context_tracker/regressor.hpp"
#include "context_tracker/sampling.hpp"
#include "context_tracker/tensor.hpp"

namespace context_tracker::tracker {

struct TrackerConfig {
  int tau_short = 20;
  int tau_long = 100;
  int tau_int = 10;
  double score_threshold = 0.5;

  std::size_t first_frame_iters = 50;
  double first_frame_lr = 0.0015;
  std::size_t online_iters = 10;
  double online_lr = 0.0025;
  double momentum = 0.9;
  double weight_decay = 5e-4;

  loss::LossKind loss_kind = loss::LossKind::CostSensitive;
  loss::CsLossParams loss_params{};
  sampling::SamplerCfg sampler{};
  sampling::TrainingDrawCfg training_draws{};
  std::size_t candidates_per_frame = 256;

  bool domain_adaptation = true;
  std::size_t mask_k = 420;
  adapt::ImportanceSource importance_source = adapt::ImportanceSource::Score;
  adapt::Ranking ranking = adapt::Ranking::Absolute;
  double da_lr = 0.003;
  std::size_t da_iters = 100;

  std::size_t head_width = head::kDefaultWidth;

  bool use_regressor = true;
  std::size_t regressor_samples = 1000;
  double regressor_min_iou = 0.6;
  double regressor_lambda = 1000.0;

  double target_side = 107.0;
  int feature_margin = 32;
  std::uint64_t seed = 0;

  void validate() const {
    if (tau_short <= 0 || tau_long <= 0 || tau_int <= 0) throw ConfigError("tau_short, tau_long, tau_int must be positive");
    if (tau_short > tau_long) throw ConfigError("tau_short must not exceed tau_long");
    if (first_frame_iters == 0 || online_iters == 0 || da_iters == 0) throw ConfigError("iteration counts must be positive");
    if (!(first_frame_lr > 0.0) || !(online_lr > 0.0) || !(da_lr > 0.0)) throw ConfigError("learning rates must be positive");
    if (candidates_per_frame == 0) throw ConfigError("candidates_per_frame must be positive");
    if (mask_k == 0) throw ConfigError("mask_k must be positive");
    if (head_width == 0) throw ConfigError("head_width must be positive");
    if (!(target_side > 0.0)) throw ConfigError("target_side must be positive");
    try {
      loss_params.validate();
    } catch (const ContractError& e) {
      throw ConfigError(e.what());
    }
  }
};

enum class UpdateKind { None, Short, Long };

inline const char* to_string(UpdateKind k) {
  switch (k) {
    case UpdateKind::None: return "none";
    case UpdateKind::Short: return "short";
    case UpdateKind::Long: return "long";
  }
  return "?";
}

struct FrameResult {
  int frame = 1;  // 1-based
  BBox box;
  double score = 1.0;
  bool success = true;
  UpdateKind update = UpdateKind::None;
};

using TrackRun = std::vector<FrameResult>;

struct StepDecision {
  bool success = false;
  UpdateKind update = UpdateKind::None;
};

/// Success iff score >= threshold (an exact tie counts as success); failure
/// triggers a short-term update, otherwise a long-term one when t % tau_int == 0.
inline StepDecision decide(double score, int t, const TrackerConfig& cfg) {
  StepDecision d;
  d.success = !(score < cfg.score_threshold);
  if (!d.success) {
    d.update = UpdateKind::Short;
  } else if (t % cfg.tau_int == 0) {
    d.update = UpdateKind::Long;
  }
  return d;
}

/// Lowest index among the maxima.
inline std::size_t select_best(std::span<const double> scores) {
  if (scores.empty()) throw TrackingError("no candidates to select from");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

struct FrameSamples {
  std::vector<Tensor> positives;
  std::vector<Tensor> negatives;
};

/// Frame-indexed training samples. Both memories admit the same frames and
/// evict their oldest frame past capacity; negatives are dropped once a frame
/// leaves the short memory since only the short memory supplies negatives.
class MemoryStore {
 public:
  MemoryStore(int tau_short, int tau_long) : tau_short_(tau_short), tau_long_(tau_long) {
    if (tau_short <= 0 || tau_short > tau_long) throw ContractError("MemoryStore: need 0 < tau_short <= tau_long");
  }

  void admit(int frame, FrameSamples samples) {
    store_[frame] = std::move(samples);
    long_.push_back(frame);
    short_.push_back(frame);
    if (static_cast<int>(long_.size()) > tau_long_) {
      store_.erase(long_.front());
      long_.pop_front();
    }
    if (static_cast<int>(short_.size()) > tau_short_) {
      const int old = short_.front();
      short_.pop_front();
      auto it = store_.find(old);
      if (it != store_.end()) {
        it->second.negatives.clear();
        it->second.negatives.shrink_to_fit();
      }
    }
  }

  const std::deque<int>& short_frames() const { return short_; }
  const std::deque<int>& long_frames() const { return long_; }

  std::vector<const Tensor*> positives(const std::deque<int>& frames) const { return gather(frames, true); }
  std::vector<const Tensor*> negatives(const std::deque<int>& frames) const { return gather(frames, false); }

  bool invariants_hold() const {
    if (static_cast<int>(short_.size()) > tau_short_ || static_cast<int>(long_.size()) > tau_long_) return false;
    for (const int f : short_) {
      if (std::find(long_.begin(), long_.end(), f) == long_.end()) return false;
    }
    return true;
  }

 private:
  std::vector<const Tensor*> gather(const std::deque<int>& frames, bool pos) const {
    std::vector<const Tensor*> out;
    for (const int f : frames) {
      const auto it = store_.find(f);
      if (it == store_.end()) continue;
      for (const Tensor& t : pos ? it->second.positives : it->second.negatives) out.push_back(&t);
    }
    return out;
  }

  int tau_short_;
  int tau_long_;
  std::deque<int> short_;
  std::deque<int> long_;
  std::map<int, FrameSamples> store_;
};

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t purpose, std::uint64_t t = 0) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (purpose + 1) + 0xbf58476d1ce4e5b9ULL * (t + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Diagnostics from the first frame.
struct InitReport {
  std::vector<double> da_loss_curve;
  adapt::ChannelImportance importance;
  std::vector<double> head_loss_curve;
};

class Tracker {
 public:
  /// Replaces the winning candidate's score with a scripted value (tests only).
  using ScoreHook = std::function<double(int frame, double raw_score)>;

  Tracker(TrackerConfig cfg, std::shared_ptr<const backbone::BackboneWeights> weights)
      : cfg_(std::move(cfg)), weights_(std::move(weights)), memory_(cfg_.tau_short, cfg_.tau_long) {
    cfg_.validate();
    if (!weights_) throw ContractError("Tracker: backbone weights required");
    if (cfg_.domain_adaptation && cfg_.mask_k > weights_->channels()) {
      throw ConfigError("mask_k=" + std::to_string(cfg_.mask_k) + " exceeds backbone channel count " +
                        std::to_string(weights_->channels()));
    }
  }

  void set_score_hook(ScoreHook hook) { hook_ = std::move(hook); }

  FrameResult init(const Image& frame, const BBox& gt) {
    require_valid(gt, "Tracker::init");
    if (frame.width <= 0 || frame.height <= 0) throw ContractError("Tracker::init: empty frame");
    frame_w_ = frame.width;
    frame_h_ = frame.height;
    scale_ = backbone::target_scale(gt, cfg_.target_side);
    const backbone::FeatureMap fm = features_of(frame);

    // Domain adaptation on off-the-shelf features.
    report_ = InitReport{};
    if (cfg_.domain_adaptation) {
      const auto da_sets = sampling::draw_training_sets(gt, sampling::Phase::DomainAdapt, mix_seed(cfg_.seed, 1),
                                                        frame_w_, frame_h_, cfg_.training_draws);
      std::vector<Tensor> feats;
      std::vector<int> labels;
      for (const BBox& b : da_sets.positives) {
        feats.push_back(roi(fm, b, {}));
        labels.push_back(1);
      }
      for (const BBox& b : da_sets.negatives) {
        feats.push_back(roi(fm, b, {}));
        labels.push_back(0);
      }
      adapt::DaTrainCfg da_cfg;
      da_cfg.learning_rate = cfg_.da_lr;
      da_cfg.iterations = cfg_.da_iters;
      da_cfg.momentum = cfg_.momentum;
      da_cfg.weight_decay = cfg_.weight_decay;
      da_cfg.seed = mix_seed(cfg_.seed, 2);
      const auto trained = adapt::train_conv_da(feats, labels, da_cfg);
      report_.da_loss_curve = trained.loss_curve;
      const std::span<const Tensor> negs(feats.begin() + static_cast<std::ptrdiff_t>(da_sets.positives.size()),
                                         feats.end());
      report_.importance = adapt::channel_importance(trained.weights, negs, cfg_.importance_source);
      mask_ = adapt::select_channels(report_.importance, cfg_.mask_k, cfg_.ranking);
    } else {
      mask_ = adapt::ChannelMask::identity(weights_->channels());
    }

    // Head training on first-frame samples.
    const auto sets = sampling::draw_training_sets(gt, sampling::Phase::FirstFrame, mix_seed(cfg_.seed, 3), frame_w_,
                                                   frame_h_, cfg_.training_draws);
    std::vector<Tensor> pos, neg;
    pos.reserve(sets.positives.size());
    neg.reserve(sets.negatives.size());
    for (const BBox& b : sets.positives) pos.push_back(roi(fm, b, mask_.indices));
    for (const BBox& b : sets.negatives) neg.push_back(roi(fm, b, mask_.indices));

    head_ = head::init_head<float>(mix_seed(cfg_.seed, 4), mask_.size(), cfg_.head_width);
    head::HeadMomentum first_momentum;
    auto ft = finetune_cfg(cfg_.first_frame_iters, cfg_.first_frame_lr, mix_seed(cfg_.seed, 5));
    report_.head_loss_curve = head::finetune(head_, pointers(pos), pointers(neg), ft, first_momentum).loss_curve;

    if (cfg_.use_regressor) {
      const auto boxes = sampling::draw_regression_set(gt, cfg_.regressor_samples, cfg_.regressor_min_iou,
                                                       mix_seed(cfg_.seed, 6), frame_w_, frame_h_);
      std::vector<Tensor> feats;
      feats.reserve(boxes.size());
      for (const BBox& b : boxes) feats.push_back(roi(fm, b, mask_.indices));
      regressor_ = regress::train_box_regressor(feats, boxes, gt, cfg_.regressor_lambda);
    }

    const auto q = sampling::phase_quotas(sampling::Phase::Online);
    FrameSamples first;
    first.positives.assign(std::make_move_iterator(pos.begin()),
                           std::make_move_iterator(pos.begin() + static_cast<std::ptrdiff_t>(std::min(q.positives, pos.size()))));
    first.negatives.assign(std::make_move_iterator(neg.begin()),
                           std::make_move_iterator(neg.begin() + static_cast<std::ptrdiff_t>(std::min(q.negatives, neg.size()))));
    memory_ = MemoryStore(cfg_.tau_short, cfg_.tau_long);
    memory_.admit(1, std::move(first));
    update_momentum_ = head::HeadMomentum{};

    t_ = 1;
    box_ = gt;
    initialized_ = true;
    return FrameResult{1, gt, 1.0, true, UpdateKind::None};
  }

  FrameResult step(const Image& frame) {
    if (!initialized_) throw TrackingError("Tracker::step called before init");
    if (frame.width != static_cast<int>(frame_w_) || frame.height != static_cast<int>(frame_h_)) {
      throw TrackingError("frame size changed mid-sequence");
    }
    const int t = ++t_;
    const backbone::FeatureMap fm = features_of(frame);

    sampling::SamplerCfg scfg = cfg_.sampler;
    scfg.frame_w = frame_w_;
    scfg.frame_h = frame_h_;
    const auto cands = sampling::sample_candidates(box_, cfg_.candidates_per_frame, scfg, mix_seed(cfg_.seed, 10, t));
    std::vector<Tensor> feats(cands.size());
    parallel_for(cands.size(), [&](std::size_t i) { feats[i] = roi(fm, cands[i], mask_.indices); });
    if (feats.empty()) throw TrackingError("no candidates at frame " + std::to_string(t));
    const std::vector<double> scores = head::score_features(feats, head_);
    const std::size_t best = select_best(scores);
    const double score = hook_ ? hook_(t, scores[best]) : scores[best];
    const StepDecision d = decide(score, t, cfg_);

    FrameResult r{t, cands[best], score, d.success, d.update};
    if (d.success) {
      if (cfg_.use_regressor && regressor_.trained()) {
        r.box = regress::apply_regressor(regressor_, feats[best], cands[best], frame_w_, frame_h_);
      }
      const auto sets = sampling::draw_training_sets(r.box, sampling::Phase::Online, mix_seed(cfg_.seed, 11, t),
                                                     frame_w_, frame_h_, cfg_.training_draws);
      FrameSamples fs;
      for (const BBox& b : sets.positives) fs.positives.push_back(roi(fm, b, mask_.indices));
      for (const BBox& b : sets.negatives) fs.negatives.push_back(roi(fm, b, mask_.indices));
      memory_.admit(t, std::move(fs));
    }

    if (d.update == UpdateKind::Short) {
      update(memory_.positives(memory_.short_frames()), memory_.negatives(memory_.short_frames()), t);
    } else if (d.update == UpdateKind::Long) {
      update(memory_.positives(memory_.long_frames()), memory_.negatives(memory_.short_frames()), t);
    }
    box_ = r.box;
    return r;
  }

  const TrackerConfig& config() const { return cfg_; }
  const MemoryStore& memory() const { return memory_; }
  const adapt::ChannelMask& mask() const { return mask_; }
  const head::HeadWeights<float>& head_weights() const { return head_; }
  const regress::BoxRegressor& regressor() const { return regressor_; }
  const InitReport& init_report() const { return report_; }
  const backbone::BackboneWeights& backbone_weights() const { return *weights_; }
  double scale() const { return scale_; }
  int frame_index() const { return t_; }

 private:
  backbone::FeatureMap features_of(const Image& frame) const {
    backbone::ExtractOptions opt;
    opt.margin = cfg_.feature_margin;
    return backbone::extract_features(backbone::rescale(frame, scale_), *weights_, opt);
  }

  Tensor roi(const backbone::FeatureMap& fm, const BBox& box, std::span<const int> channels) const {
    return backbone::roi_align(fm, backbone::scale_box(box, scale_), backbone::kRoiOut, channels);
  }

  static std::vector<const Tensor*> pointers(const std::vector<Tensor>& v) {
    std::vector<const Tensor*> out;
    out.reserve(v.size());
    for (const Tensor& t : v) out.push_back(&t);
    return out;
  }

  head::FinetuneCfg finetune_cfg(std::size_t iters, double lr, std::uint64_t seed) const {
    head::FinetuneCfg ft;
    ft.iterations = iters;
    ft.learning_rate = lr;
    ft.momentum = cfg_.momentum;
    ft.weight_decay = cfg_.weight_decay;
    ft.loss_kind = cfg_.loss_kind;
    ft.loss_params = cfg_.loss_params;
    ft.train_conv4 = true;
    ft.seed = seed;
    return ft;
  }

  void update(const std::vector<const Tensor*>& pos, const std::vector<const Tensor*>& neg, int t) {
    if (pos.empty() || neg.empty()) return;
    head::finetune(head_, pos, neg, finetune_cfg(cfg_.online_iters, cfg_.online_lr, mix_seed(cfg_.seed, 12, t)),
                   update_momentum_);
  }

  TrackerConfig cfg_;
  std::shared_ptr<const backbone::BackboneWeights> weights_;
  MemoryStore memory_;
  adapt::ChannelMask mask_;
  head::HeadWeights<float> head_;
  head::HeadMomentum update_momentum_;
  regress::BoxRegressor regressor_;
  InitReport report_;
  ScoreHook hook_;
  double frame_w_ = 0.0;
  double frame_h_ = 0.0;
  double scale_ = 1.0;
  int t_ = 0;
  BBox box_;
  bool initialized_ = false;
};

/// Runs init on frame 1 and step on the rest. `frame_at(i)` returns frame i (0-based).
inline TrackRun track_sequence(std::size_t frame_count, const std::function<Image(std::size_t)>& frame_at,
                               const BBox& gt0, const TrackerConfig& cfg,
                               std::shared_ptr<const backbone::BackboneWeights> weights,
                               Tracker::ScoreHook hook = {}) {
  if (frame_count == 0) throw ContractError("track_sequence: need at least one frame");
  Tracker tracker(cfg, std::move(weights));
  if (hook) tracker.set_score_hook(std::move(hook));
  TrackRun run;
  run.reserve(frame_count);
  run.push_back(tracker.init(frame_at(0), gt0));
  for (std::size_t i = 1; i < frame_count; ++i) run.push_back(tracker.step(frame_at(i)));
  return run;
}

inline TrackRun track_sequence(const std::vector<Image>& frames, const BBox& gt0, const TrackerConfig& cfg,
                               std::shared_ptr<const backbone::BackboneWeights> weights) {
  return track_sequence(
      frames.size(), [&](std::size_t i) { return frames[i]; }, gt0, cfg, std::move(weights));
}

}  // namespace context_tracker::tracker

#endif  // CONTEXT_TRACKER_TRACKER_HPP
