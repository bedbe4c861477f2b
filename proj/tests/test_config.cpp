#include <gtest/gtest.h>

#include "context_tracker/config.hpp"

using namespace context_tracker;
using namespace context_tracker::config;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, DefaultsMatchReferenceSettings) {
  const RunConfig c = parse("{}");
  EXPECT_EQ(c.tracker.tau_short, 20);
  EXPECT_EQ(c.tracker.tau_long, 100);
  EXPECT_EQ(c.tracker.tau_int, 10);
  EXPECT_EQ(c.tracker.mask_k, 420u);
  EXPECT_EQ(c.tracker.candidates_per_frame, 256u);
  EXPECT_DOUBLE_EQ(c.tracker.loss_params.alpha, 10.0);
  EXPECT_DOUBLE_EQ(c.tracker.loss_params.beta, 0.2);
  EXPECT_EQ(c.tracker.loss_kind, loss::LossKind::CostSensitive);
}

TEST(Config, KeysApply) {
  const RunConfig c = parse(R"({"tau_short": 5, "loss": "ce", "domain_adaptation": false, "scale_sigma": 0.25,
                                "ranking": "signed", "importance_source": "loss", "weights": "w.cwb"})");
  EXPECT_EQ(c.tracker.tau_short, 5);
  EXPECT_EQ(c.tracker.loss_kind, loss::LossKind::CrossEntropy);
  EXPECT_FALSE(c.tracker.domain_adaptation);
  EXPECT_DOUBLE_EQ(c.tracker.sampler.scale_sigma, 0.25);
  EXPECT_EQ(c.tracker.ranking, adapt::Ranking::Signed);
  EXPECT_EQ(c.weights, "w.cwb");
  EXPECT_TRUE(c.is_set("tau_short"));
  EXPECT_FALSE(c.is_set("tau_long"));
}

TEST(Config, RoundTripsThroughJson) {
  const RunConfig a = parse(R"({"tau_int": 7, "loss": "focal", "focal_nu": 2.0, "head_width": 32})");
  const RunConfig b = from_json(to_json(a));
  EXPECT_EQ(to_json(a), to_json(b));
  EXPECT_EQ(b.tracker.tau_int, 7);
}

TEST(Config, ErrorsNameTheKey) {
  EXPECT_EQ(error_of(R"({"tau_shrt": 3})"), "unknown config key 'tau_shrt'");
  EXPECT_NE(error_of(R"({"tau_short": "x"})").find("tau_short"), std::string::npos);
  EXPECT_NE(error_of(R"({"mask_k": -1})").find("mask_k"), std::string::npos);
  EXPECT_NE(error_of(R"({"loss": "hinge"})").find("loss"), std::string::npos);
  EXPECT_NE(error_of("{").find("malformed"), std::string::npos);
  EXPECT_NE(error_of("[1, 2]"), "");
}

TEST(Config, ToyProfileRespectsExplicitKeys) {
  RunConfig c = parse(R"({"mask_k": 20, "online_lr": 0.01})");
  apply_toy_profile(c);
  EXPECT_TRUE(c.toy_backbone);
  EXPECT_EQ(c.tracker.mask_k, 20u);
  EXPECT_EQ(c.tracker.head_width, kToyHeadWidth);
  EXPECT_EQ(c.tracker.online_lr, 0.01);
  EXPECT_EQ(c.tracker.first_frame_lr, kToyFirstFrameLr);
  RunConfig d = parse("{}");
  apply_toy_profile(d);
  EXPECT_EQ(d.tracker.mask_k, kToyMaskK);
  EXPECT_EQ(d.tracker.online_lr, kToyOnlineLr);
}

TEST(Config, BackboneResolution) {
  RunConfig c = parse("{}");
  EXPECT_THROW(resolve_backbone(c), ConfigError);
  c.weights = "/nonexistent/weights.cwb";
  EXPECT_THROW(resolve_backbone(c), DataError);
  c.toy_backbone = true;
  EXPECT_EQ(resolve_backbone(c)->channels(), backbone::BackboneArch::toy().conv3);
  EXPECT_EQ(resolve_backbone(c)->conv3_w, toy_backbone(c.backbone_seed).conv3_w);
}

TEST(Config, InvalidTrackerValuesRejected) {
  RunConfig c = parse(R"({"tau_short": 0})");
  EXPECT_THROW(c.tracker.validate(), ConfigError);
}
