#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>

#include "context_tracker/eval.hpp"
#include "context_tracker/synth.hpp"

using namespace context_tracker;
using namespace context_tracker::synth;
namespace fs = std::filesystem;

TEST(Synth, PresetsProduceFullSequences) {
  for (const auto& name : preset_names()) {
    const Sequence s = generate(preset(name, 1));
    EXPECT_EQ(s.frames.size(), 60u) << name;
    EXPECT_EQ(s.gt.size(), 60u) << name;
    EXPECT_EQ(s.frames[0].width, 320);
    EXPECT_EQ(s.frames[0].height, 240);
  }
  EXPECT_THROW(preset("nope"), ContractError);
}

TEST(Synth, Deterministic) {
  const Sequence a = generate(preset("distractor", 3));
  const Sequence b = generate(preset("distractor", 3));
  const Sequence c = generate(preset("distractor", 4));
  EXPECT_EQ(a.frames[10], b.frames[10]);
  EXPECT_NE(a.frames[10], c.frames[10]);
}

TEST(Synth, GroundTruthFollowsPath) {
  const SceneSpec spec = preset("easy_translation", 0);
  const Sequence s = generate(spec);
  EXPECT_EQ(s.gt[0], (BBox{40, 80, 48, 48}));
  EXPECT_EQ(s.gt[30], (BBox{130, 100, 48, 48}));
}

TEST(Synth, Tags) {
  EXPECT_TRUE(generate(preset("easy_translation", 0)).tags.empty());
  const auto has = [](const Sequence& s, const char* t) {
    return std::find(s.tags.begin(), s.tags.end(), t) != s.tags.end();
  };
  EXPECT_TRUE(has(generate(preset("occlusion", 0)), "OCC"));
  EXPECT_TRUE(has(generate(preset("distractor", 0)), "BC"));
  EXPECT_TRUE(has(generate(preset("scale_change", 0)), "SV"));
}

TEST(Synth, OccluderCoversMostOfTheTarget) {
  const SceneSpec spec = preset("occlusion", 0);
  const Sequence s = generate(spec);
  ASSERT_EQ(spec.occluders.size(), 1u);
  const Occluder& o = spec.occluders[0];
  EXPECT_GE(o.end - o.start, 10);
  for (int t = o.start; t < o.end; ++t) {
    const BBox& g = s.gt[static_cast<std::size_t>(t)];
    const double ix = std::max(0.0, std::min(g.x + g.w, o.rect.x + o.rect.w) - std::max(g.x, o.rect.x));
    const double iy = std::max(0.0, std::min(g.y + g.h, o.rect.y + o.rect.h) - std::max(g.y, o.rect.y));
    EXPECT_GE(ix * iy / g.area(), 0.6) << "frame " << t;
  }
}

TEST(Synth, ScaleChangeGrowsTarget) {
  const Sequence s = generate(preset("scale_change", 0));
  EXPECT_NEAR(s.gt.back().w / s.gt.front().w, 1.5, 0.05);
}

TEST(Synth, LeavingFrameWithoutClippingThrows) {
  SceneSpec spec = preset("easy_translation", 0);
  spec.target.path.back().x = 1000;
  spec.clip_to_frame = false;
  EXPECT_THROW(generate(spec), ContractError);
  spec.clip_to_frame = true;
  const Sequence s = generate(spec);
  for (const BBox& g : s.gt) EXPECT_LE(g.x + g.w, 320.0);
}

TEST(Synth, WrittenSequenceLoadsBack) {
  const fs::path d = fs::temp_directory_path() / "context_tracker_synth" / "occ";
  fs::remove_all(d);
  SceneSpec spec = preset("occlusion", 2);
  spec.length = 5;
  const Sequence s = generate(spec);
  write_sequence(d, s);
  const auto rec = eval::load_otb_sequence(d);
  ASSERT_EQ(rec.frames.size(), 5u);
  EXPECT_EQ(rec.gt, s.gt);
  EXPECT_EQ(read_ppm(rec.frames[3]), s.frames[3]);
  EXPECT_EQ(rec.attributes, s.tags);
}
