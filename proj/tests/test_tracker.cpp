#include <gtest/gtest.h>

#include "context_tracker/config.hpp"
#include "context_tracker/synth.hpp"
#include "context_tracker/tracker.hpp"

using namespace context_tracker;
using namespace context_tracker::tracker;

namespace {

FrameSamples samples(std::size_t npos, std::size_t nneg, float tag) {
  FrameSamples s;
  s.positives.assign(npos, Tensor({1}, {tag}));
  s.negatives.assign(nneg, Tensor({1}, {-tag}));
  return s;
}

// Small, fast tracker on a short synthetic clip.
TrackerConfig quick_config(std::uint64_t seed) {
  TrackerConfig cfg = config::toy_tracker_config(seed);
  cfg.first_frame_iters = 5;
  cfg.online_iters = 2;
  cfg.da_iters = 5;
  cfg.regressor_samples = 64;
  return cfg;
}

}  // namespace

TEST(Decide, ThresholdAndSchedule) {
  TrackerConfig cfg;
  cfg.tau_int = 10;
  EXPECT_EQ(decide(0.4, 7, cfg).update, UpdateKind::Short);
  EXPECT_FALSE(decide(0.4, 7, cfg).success);
  EXPECT_EQ(decide(0.4, 10, cfg).update, UpdateKind::Short);  // failure wins over the schedule
  EXPECT_EQ(decide(0.9, 10, cfg).update, UpdateKind::Long);
  EXPECT_EQ(decide(0.9, 11, cfg).update, UpdateKind::None);
  EXPECT_TRUE(decide(0.5, 3, cfg).success);  // tie counts as success
  EXPECT_EQ(decide(0.5, 3, cfg).update, UpdateKind::None);
}

TEST(SelectBest, ArgmaxWithLowestIndexTie) {
  const std::vector<double> s = {0.1, 0.9, 0.3};
  EXPECT_EQ(select_best(s), 1u);
  const std::vector<double> tie = {0.2, 0.7, 0.7};
  EXPECT_EQ(select_best(tie), 1u);
  EXPECT_THROW(select_best(std::vector<double>{}), TrackingError);
}

TEST(Memory, CapacitiesAndEviction) {
  MemoryStore m(3, 5);
  for (int f = 1; f <= 8; ++f) {
    m.admit(f, samples(2, 4, static_cast<float>(f)));
    EXPECT_TRUE(m.invariants_hold());
  }
  EXPECT_EQ(m.short_frames(), (std::deque<int>{6, 7, 8}));
  EXPECT_EQ(m.long_frames(), (std::deque<int>{4, 5, 6, 7, 8}));
  EXPECT_EQ(m.positives(m.long_frames()).size(), 10u);
  EXPECT_EQ(m.negatives(m.short_frames()).size(), 12u);
  // Negatives of frames that left the short memory are gone.
  EXPECT_EQ(m.negatives(m.long_frames()).size(), 12u);
  EXPECT_THROW(MemoryStore(6, 5), ContractError);
}

TEST(MixSeed, DistinctPurposesAndFrames) {
  EXPECT_NE(mix_seed(1, 2, 3), mix_seed(1, 3, 3));
  EXPECT_NE(mix_seed(1, 2, 3), mix_seed(1, 2, 4));
  EXPECT_EQ(mix_seed(1, 2, 3), mix_seed(1, 2, 3));
}

TEST(Tracker, StepBeforeInitThrows) {
  Tracker t(quick_config(1), std::make_shared<backbone::BackboneWeights>(config::toy_backbone(1)));
  EXPECT_THROW(t.step(Image(64, 64)), TrackingError);
}

TEST(Tracker, OversizedMaskIsConfigError) {
  TrackerConfig cfg = quick_config(1);
  cfg.mask_k = 1000;
  EXPECT_THROW(Tracker(cfg, std::make_shared<backbone::BackboneWeights>(config::toy_backbone(1))), ConfigError);
}

TEST(Tracker, ScriptedScoresDriveUpdates) {
  synth::SceneSpec spec = synth::preset("easy_translation", 2);
  spec.length = 8;
  const auto seq = synth::generate(spec);
  TrackerConfig cfg = quick_config(2);
  cfg.tau_int = 3;
  const std::vector<double> script = {0, 0.9, 0.9, 0.2, 0.8, 0.5, 0.1, 0.7};
  const auto run = track_sequence(
      seq.frames.size(), [&](std::size_t i) { return seq.frames[i]; }, seq.gt[0], cfg,
      std::make_shared<backbone::BackboneWeights>(config::toy_backbone(2)),
      [&](int t, double) { return script[static_cast<std::size_t>(t - 1)]; });
  ASSERT_EQ(run.size(), 8u);
  EXPECT_EQ(run[0].box, seq.gt[0]);
  const std::vector<UpdateKind> want = {UpdateKind::None, UpdateKind::None,  UpdateKind::Long,  UpdateKind::Short,
                                        UpdateKind::None, UpdateKind::Long,  UpdateKind::Short, UpdateKind::None};
  for (std::size_t i = 1; i < run.size(); ++i) {
    EXPECT_EQ(run[i].update, want[i]) << "frame " << i + 1;
    EXPECT_EQ(run[i].success, script[i] >= 0.5) << "frame " << i + 1;
    EXPECT_EQ(run[i].frame, static_cast<int>(i + 1));
  }
}

TEST(Tracker, DeterministicUnderSeed) {
  synth::SceneSpec spec = synth::preset("easy_translation", 4);
  spec.length = 4;
  const auto seq = synth::generate(spec);
  const auto w = std::make_shared<backbone::BackboneWeights>(config::toy_backbone(4));
  const auto a = track_sequence(seq.frames, seq.gt[0], quick_config(4), w);
  const auto b = track_sequence(seq.frames, seq.gt[0], quick_config(4), w);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].box, b[i].box);
    EXPECT_EQ(a[i].score, b[i].score);
  }
}

TEST(Tracker, FrameSizeChangeIsTrackingError) {
  synth::SceneSpec spec = synth::preset("easy_translation", 5);
  spec.length = 2;
  const auto seq = synth::generate(spec);
  Tracker t(quick_config(5), std::make_shared<backbone::BackboneWeights>(config::toy_backbone(5)));
  t.init(seq.frames[0], seq.gt[0]);
  EXPECT_EQ(t.mask().size(), quick_config(5).mask_k);
  EXPECT_TRUE(t.memory().invariants_hold());
  EXPECT_THROW(t.step(Image(100, 100)), TrackingError);
}
