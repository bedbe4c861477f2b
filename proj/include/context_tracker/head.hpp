#ifndef CONTEXT_TRACKER_HEAD_HPP
#define CONTEXT_TRACKER_HEAD_HPP

// Online classifier head on masked RoI features (K x 7 x 7):
//   conv4 3x1 (pad 1,0) -> relu -> conv5 1x3 (pad 0,1) -> relu -> conv6 1x1 -> 2 class maps
// Class maps are spatially averaged into (positive, negative) logits.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "context_tracker/adapt.hpp"
#include "context_tracker/errors.hpp"
#include "context_tracker/loss.hpp"
#include "context_tracker/nn.hpp"
#include "context_tracker/tensor.hpp"

namespace context_tracker::head {

inline constexpr std::size_t kDefaultWidth = 256;
inline const nn::Conv2dOptions kConv4Opt{1, 1, 1, 0};
inline const nn::Conv2dOptions kConv5Opt{1, 1, 0, 1};
inline const nn::Conv2dOptions kConv6Opt{1, 1, 0, 0};

template <typename T = float>
struct HeadWeights {
  BasicTensor<T> conv4_w, conv4_b;  // W x K x 3 x 1
  BasicTensor<T> conv5_w, conv5_b;  // W x W x 1 x 3
  BasicTensor<T> conv6_w, conv6_b;  // 2 x W x 1 x 1

  std::size_t input_channels() const { return conv4_w.dim(1); }
  std::size_t width() const { return conv4_w.dim(0); }

  std::vector<BasicTensor<T>*> params() { return {&conv4_w, &conv4_b, &conv5_w, &conv5_b, &conv6_w, &conv6_b}; }
  std::vector<const BasicTensor<T>*> params() const {
    return {&conv4_w, &conv4_b, &conv5_w, &conv5_b, &conv6_w, &conv6_b};
  }

  friend bool operator==(const HeadWeights&, const HeadWeights&) = default;
};

/// Zero-mean Gaussian kernels (std 0.01), zero biases.
template <typename T = float>
HeadWeights<T> init_head(std::uint64_t seed, std::size_t k, std::size_t width = kDefaultWidth, double stddev = 0.01) {
  if (k == 0 || width == 0) throw ContractError("init_head: channel counts must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, stddev);
  auto gaussian = [&](Shape s) {
    BasicTensor<T> t(std::move(s));
    for (T& v : t.data()) v = static_cast<T>(dist(rng));
    return t;
  };
  HeadWeights<T> w;
  w.conv4_w = gaussian({width, k, 3, 1});
  w.conv4_b = BasicTensor<T>({width});
  w.conv5_w = gaussian({width, width, 1, 3});
  w.conv5_b = BasicTensor<T>({width});
  w.conv6_w = gaussian({2, width, 1, 1});
  w.conv6_b = BasicTensor<T>({2});
  return w;
}

/// Intermediate activations kept for the backward pass.
template <typename T>
struct HeadActivations {
  BasicTensor<T> input;  // N x K x H x W
  BasicTensor<T> a4, r4, a5, r5, a6;
  BasicTensor<T> logits;  // N x 2
};

template <typename T>
HeadActivations<T> forward_batch(const BasicTensor<T>& batch, const HeadWeights<T>& w) {
  require_rank(batch, 4, "head input");
  if (batch.dim(1) != w.input_channels()) {
    throw ContractError("head: feature has " + std::to_string(batch.dim(1)) + " channels, head expects " +
                        std::to_string(w.input_channels()));
  }
  HeadActivations<T> act;
  act.input = batch;
  act.a4 = nn::conv2d(batch, w.conv4_w, w.conv4_b, kConv4Opt);
  act.r4 = nn::relu(act.a4);
  act.a5 = nn::conv2d(act.r4, w.conv5_w, w.conv5_b, kConv5Opt);
  act.r5 = nn::relu(act.a5);
  act.a6 = nn::conv2d(act.r5, w.conv6_w, w.conv6_b, kConv6Opt);
  act.logits = nn::global_avg_pool(act.a6);
  return act;
}

template <typename T>
BasicTensor<T> logits_batch(const BasicTensor<T>& batch, const HeadWeights<T>& w) {
  return forward_batch(batch, w).logits;
}

template <typename T>
struct HeadGrads {
  HeadWeights<T> weights;
  BasicTensor<T> input;  // empty unless requested
};

/// Back-propagates dL/dlogits (N x 2) through the head.
template <typename T>
HeadGrads<T> backward_batch(const HeadActivations<T>& act, const HeadWeights<T>& w, const BasicTensor<T>& dlogits,
                            bool want_input = false) {
  HeadGrads<T> g;
  const BasicTensor<T> d6 = nn::global_avg_pool_backward(act.a6.shape(), dlogits);
  auto g6 = nn::conv2d_backward(act.r5, w.conv6_w, d6, kConv6Opt, true);
  const BasicTensor<T> d5 = nn::relu_backward(act.a5, g6.input);
  auto g5 = nn::conv2d_backward(act.r4, w.conv5_w, d5, kConv5Opt, true);
  const BasicTensor<T> d4 = nn::relu_backward(act.a4, g5.input);
  auto g4 = nn::conv2d_backward(act.input, w.conv4_w, d4, kConv4Opt, want_input);
  g.weights.conv4_w = std::move(g4.kernel);
  g.weights.conv4_b = std::move(g4.bias);
  g.weights.conv5_w = std::move(g5.kernel);
  g.weights.conv5_b = std::move(g5.bias);
  g.weights.conv6_w = std::move(g6.kernel);
  g.weights.conv6_b = std::move(g6.bias);
  if (want_input) g.input = std::move(g4.input);
  return g;
}

struct HeadScore {
  double f_pos = 0.5;
  double f_neg = 0.5;
  double logit_pos = 0.0;
  double logit_neg = 0.0;
};

template <typename T>
HeadScore head_forward(const BasicTensor<T>& feature, const HeadWeights<T>& w) {
  require_rank(feature, 3, "head_forward");
  const BasicTensor<T> batch = feature.reshaped({1, feature.dim(0), feature.dim(1), feature.dim(2)});
  const BasicTensor<T> logits = logits_batch(batch, w);
  const BasicTensor<T> probs = nn::softmax2(logits);
  return {static_cast<double>(probs[0]), static_cast<double>(probs[1]), static_cast<double>(logits[0]),
          static_cast<double>(logits[1])};
}

/// Positive-class probabilities for a batch of features, evaluated in chunks.
inline std::vector<double> score_features(std::span<const Tensor> features, const HeadWeights<float>& w,
                                          std::size_t chunk = 64) {
  std::vector<double> out;
  out.reserve(features.size());
  for (std::size_t start = 0; start < features.size(); start += chunk) {
    const std::size_t end = std::min(features.size(), start + chunk);
    std::vector<const Tensor*> ptrs;
    for (std::size_t i = start; i < end; ++i) ptrs.push_back(&features[i]);
    const Tensor probs = nn::softmax2(logits_batch(adapt::stack(ptrs), w));
    for (std::size_t i = 0; i < ptrs.size(); ++i) out.push_back(probs[2 * i]);
  }
  return out;
}

/// Momentum buffers for each head parameter; owned by the caller across updates.
struct HeadMomentum {
  std::vector<Tensor> velocity = std::vector<Tensor>(6);
};

struct FinetuneCfg {
  std::size_t iterations = 10;
  double learning_rate = 0.0025;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t batch_pos = 32;
  std::size_t batch_neg = 96;
  loss::LossKind loss_kind = loss::LossKind::CostSensitive;
  loss::CsLossParams loss_params{};
  bool train_conv4 = true;
  std::uint64_t seed = 0;
};

struct FinetuneResult {
  std::vector<double> loss_curve;  // mean minibatch loss per iteration
};

/// `iterations` SGD steps on minibatches of batch_pos positives + batch_neg negatives.
inline FinetuneResult finetune(HeadWeights<float>& w, std::span<const Tensor* const> pos,
                               std::span<const Tensor* const> neg, const FinetuneCfg& cfg, HeadMomentum& momentum) {
  if (pos.empty() || neg.empty()) throw ContractError("finetune: both classes need at least one sample");
  std::mt19937_64 rng(cfg.seed);
  adapt::detail::BatchCycler pos_cycle(pos.size(), rng), neg_cycle(neg.size(), rng);
  const nn::SgdConfig sgd{cfg.learning_rate, cfg.momentum, cfg.weight_decay};
  FinetuneResult result;

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    std::vector<const Tensor*> batch;
    std::vector<int> y;
    for (const std::size_t i : pos_cycle.next(cfg.batch_pos)) {
      batch.push_back(pos[i]);
      y.push_back(1);
    }
    for (const std::size_t i : neg_cycle.next(cfg.batch_neg)) {
      batch.push_back(neg[i]);
      y.push_back(0);
    }
    const auto act = forward_batch(adapt::stack(batch), w);
    const double inv = 1.0 / static_cast<double>(batch.size());
    Tensor dlogits(act.logits.shape());
    double total = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto l = loss::loss_on_logits(act.logits[2 * i], act.logits[2 * i + 1], y[i], cfg.loss_kind, cfg.loss_params);
      total += l.value;
      dlogits[2 * i] = static_cast<float>(l.grad_pos * inv);
      dlogits[2 * i + 1] = static_cast<float>(l.grad_neg * inv);
    }
    result.loss_curve.push_back(total * inv);

    auto g = backward_batch(act, w, dlogits, false);
    auto params = w.params();
    auto grads = g.weights.params();
    for (std::size_t p = cfg.train_conv4 ? 0 : 2; p < params.size(); ++p) {
      nn::sgd_step(*params[p], *grads[p], momentum.velocity[p], sgd);
    }
  }
  return result;
}

inline FinetuneResult finetune(HeadWeights<float>& w, std::span<const Tensor* const> pos,
                               std::span<const Tensor* const> neg, const FinetuneCfg& cfg) {
  HeadMomentum m;
  return finetune(w, pos, neg, cfg, m);
}

}  // namespace context_tracker::head

#endif  // CONTEXT_TRACKER_HEAD_HPP
