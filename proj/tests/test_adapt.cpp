#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "context_tracker/adapt.hpp"

using namespace context_tracker;
using namespace context_tracker::adapt;

namespace {

// Positives light channel 0, negatives light channel 1; small noise elsewhere.
void separable_set(std::size_t channels, std::size_t n, std::uint64_t seed, std::vector<Tensor>& feats,
                   std::vector<int>& labels) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.05);
  for (std::size_t i = 0; i < 2 * n; ++i) {
    const int y = i < n ? 1 : 0;
    Tensor f({channels, 3, 3});
    for (float& v : f.data()) v = static_cast<float>(noise(rng));
    for (std::size_t p = 0; p < 9; ++p) f[(y == 1 ? 0 : 1) * 9 + p] += 1.0f;
    feats.push_back(std::move(f));
    labels.push_back(y);
  }
}

}  // namespace

TEST(ConvDa, SeparableSetReachesFullAccuracy) {
  std::vector<Tensor> feats;
  std::vector<int> labels;
  separable_set(4, 40, 1, feats, labels);
  DaTrainCfg cfg;
  cfg.learning_rate = 0.05;
  cfg.iterations = 200;
  const auto r = train_conv_da(feats, labels, cfg);
  EXPECT_LE(r.loss_curve.back(), r.loss_curve.front());
  std::vector<const Tensor*> ptrs;
  for (const auto& f : feats) ptrs.push_back(&f);
  const Tensor logits = conv_da_logits(stack(ptrs), r.weights);
  for (std::size_t i = 0; i < feats.size(); ++i) {
    const bool says_pos = logits[2 * i + kPositiveClass] > logits[2 * i + kBackgroundClass];
    EXPECT_EQ(says_pos, labels[i] == 1) << i;
  }
}

TEST(ConvDa, ZeroLearningRateKeepsInit) {
  std::vector<Tensor> feats;
  std::vector<int> labels;
  separable_set(3, 5, 2, feats, labels);
  DaTrainCfg cfg;
  cfg.learning_rate = 0.0;
  cfg.iterations = 5;
  cfg.seed = 17;
  const auto r = train_conv_da(feats, labels, cfg);
  std::mt19937_64 rng(cfg.seed);
  const ConvDaWeights init = init_conv_da(3, rng(), cfg.init_std);
  EXPECT_EQ(r.weights.kernel, init.kernel);
  EXPECT_EQ(r.weights.bias, init.bias);
}

TEST(ConvDa, DeterministicUnderSeed) {
  std::vector<Tensor> feats;
  std::vector<int> labels;
  separable_set(3, 8, 3, feats, labels);
  const auto a = train_conv_da(feats, labels, {});
  const auto b = train_conv_da(feats, labels, {});
  EXPECT_EQ(a.weights.kernel, b.weights.kernel);
  EXPECT_EQ(a.loss_curve, b.loss_curve);
}

TEST(ConvDa, SingleClassThrows) {
  std::vector<Tensor> feats(3, Tensor({2, 3, 3}));
  std::vector<int> labels(3, 1);
  EXPECT_THROW(train_conv_da(feats, labels, {}), ContractError);
}

TEST(Importance, ZeroKernelGivesZero) {
  ConvDaWeights w{Tensor({2, 4, 3, 3}), Tensor({2})};
  std::vector<Tensor> negs(3, Tensor({4, 5, 5}, 1.0f));
  const auto imp = channel_importance(w, negs);
  for (double d : imp.delta) EXPECT_EQ(d, 0.0);
}

TEST(Importance, BackgroundKernelOnOneChannelIsLocal) {
  ConvDaWeights w{Tensor({2, 4, 3, 3}), Tensor({2})};
  for (std::size_t p = 0; p < 9; ++p) {
    w.kernel[(kBackgroundClass * 4 + 2) * 9 + p] = 0.3f;
    w.kernel[(kPositiveClass * 4 + 0) * 9 + p] = 0.7f;  // positive class must not matter for Score
  }
  std::vector<Tensor> negs(2, Tensor({4, 4, 4}, 0.5f));
  const auto imp = channel_importance(w, negs, ImportanceSource::Score);
  for (std::size_t c = 0; c < 4; ++c) {
    if (c == 2) {
      EXPECT_NE(imp.delta[c], 0.0);
    } else {
      EXPECT_EQ(imp.delta[c], 0.0);
    }
  }
}

TEST(Importance, OneByOneEqualsKernelCentre) {
  // On a 1x1 map with padding 1 only the kernel centre touches the input, so
  // d(background logit)/dx_c = kernel[bg, c, 1, 1].
  std::mt19937_64 rng(5);
  std::normal_distribution<double> d;
  ConvDaWeights w{Tensor({2, 6, 3, 3}), Tensor({2})};
  for (float& v : w.kernel.data()) v = static_cast<float>(d(rng));
  std::vector<Tensor> negs = {Tensor({6, 1, 1}, {1, -2, 3, 0.5f, 0, 4})};
  const auto imp = channel_importance(w, negs);
  for (std::size_t c = 0; c < 6; ++c) EXPECT_NEAR(imp.delta[c], w.kernel[((kBackgroundClass * 6 + c) * 3 + 1) * 3 + 1], 1e-6);
}

TEST(Importance, EmptyNegativesThrow) {
  ConvDaWeights w{Tensor({2, 2, 3, 3}), Tensor({2})};
  EXPECT_THROW(channel_importance(w, std::vector<Tensor>{}), ContractError);
}

TEST(SelectChannels, SortingAndTies) {
  EXPECT_EQ(select_channels({{3, 1, 2}}, 2).indices, (std::vector<int>{0, 2}));
  EXPECT_EQ(select_channels({{5, 5, 5, 5}}, 2).indices, (std::vector<int>{0, 1}));
  EXPECT_EQ(select_channels({{-3, 1, 2}}, 1, Ranking::Absolute).indices, (std::vector<int>{0}));
  EXPECT_EQ(select_channels({{-3, 1, 2}}, 1, Ranking::Signed).indices, (std::vector<int>{2}));
  ChannelImportance all{std::vector<double>(512, 0.1)};
  EXPECT_EQ(select_channels(all, 512), ChannelMask::identity(512));
  EXPECT_THROW(select_channels({{1, 2}}, 3), ContractError);
}

TEST(SelectChannels, ScaleEquivariant) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> d;
  ChannelImportance imp{std::vector<double>(64)};
  for (double& v : imp.delta) v = d(rng);
  ChannelImportance scaled = imp;
  for (double& v : scaled.delta) v *= 3.7;
  EXPECT_EQ(select_channels(imp, 20), select_channels(scaled, 20));
}

TEST(ApplyMask, Gathers) {
  Tensor f({2, 1, 2}, {1, 2, 3, 4});
  EXPECT_EQ(apply_mask(f, ChannelMask::identity(2)), f);
  EXPECT_EQ(apply_mask(f, ChannelMask{{1}}), Tensor({1, 1, 2}, std::vector<float>{3, 4}));
  EXPECT_THROW(apply_mask(f, ChannelMask{{2}}), ContractError);
}

TEST(ApplyMask, CommutesWithChannelMeans) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> d;
  Tensor f({5, 3, 3});
  for (float& v : f.data()) v = static_cast<float>(d(rng));
  const ChannelMask m{{0, 3, 4}};
  const Tensor means = nn::global_avg_pool(f);
  const Tensor masked_means = nn::global_avg_pool(apply_mask(f, m));
  for (std::size_t k = 0; k < m.size(); ++k) EXPECT_FLOAT_EQ(masked_means[k], means[static_cast<std::size_t>(m.indices[k])]);
}
