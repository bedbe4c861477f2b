#ifndef CONTEXT_TRACKER_ADAPT_HPP
#define CONTEXT_TRACKER_ADAPT_HPP

// One-shot domain adaptation: a single 3x3 conv (Conv-DA) is trained on
// first-frame RoI features; the spatially averaged gradient of its background
// score w.r.t. each input channel ranks channels, and the top K are kept.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "context_tracker/errors.hpp"
#include "context_tracker/loss.hpp"
#include "context_tracker/nn.hpp"
#include "context_tracker/tensor.hpp"

namespace context_tracker::adapt {

inline constexpr std::size_t kPositiveClass = 0;
inline constexpr std::size_t kBackgroundClass = 1;

struct ConvDaWeights {
  Tensor kernel;  // 2 x C x 3 x 3
  Tensor bias;    // 2

  std::size_t channels() const { return kernel.dim(1); }
};

inline ConvDaWeights init_conv_da(std::size_t channels, std::uint64_t seed, double stddev = 0.01) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, stddev);
  ConvDaWeights w{Tensor({2, channels, 3, 3}), Tensor({2})};
  for (float& v : w.kernel.data()) v = static_cast<float>(dist(rng));
  return w;
}

inline const nn::Conv2dOptions kDaConv{1, 1, 1, 1};

/// N x C x H x W batch from a list of C x H x W features.
inline Tensor stack(std::span<const Tensor* const> feats) {
  if (feats.empty()) throw ContractError("stack: empty feature list");
  const Shape& s = feats.front()->shape();
  if (s.size() != 3) throw ContractError("stack: features must be C x H x W");
  const std::size_t n = s[0] * s[1] * s[2];
  Tensor out({feats.size(), s[0], s[1], s[2]});
  for (std::size_t i = 0; i < feats.size(); ++i) {
    if (feats[i]->shape() != s) throw ContractError("stack: inconsistent feature shapes");
    std::copy(feats[i]->ptr(), feats[i]->ptr() + n, out.ptr() + i * n);
  }
  return out;
}

/// Per-sample (positive, background) logits: spatial mean of the 2-channel response.
inline Tensor conv_da_logits(const Tensor& batch, const ConvDaWeights& w) {
  return nn::global_avg_pool(nn::conv2d(batch, w.kernel, w.bias, kDaConv));
}

struct DaTrainCfg {
  double learning_rate = 0.003;
  std::size_t iterations = 100;
  std::size_t batch_pos = 32;
  std::size_t batch_neg = 32;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double init_std = 0.01;
  std::uint64_t seed = 0;
};

struct DaTrainResult {
  ConvDaWeights weights;
  std::vector<double> loss_curve;  // minibatch CE per iteration
};

namespace detail {

// Cycles through a seeded permutation; repeats indices when the pool is small.
class BatchCycler {
 public:
  BatchCycler(std::size_t pool, std::mt19937_64& rng) : order_(pool), rng_(&rng) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::shuffle(order_.begin(), order_.end(), *rng_);
  }

  std::vector<std::size_t> next(std::size_t count) {
    std::vector<std::size_t> out;
    out.reserve(count);
    while (out.size() < count) {
      if (pos_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), *rng_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  std::mt19937_64* rng_;
};

}  // namespace detail

/// Trains Conv-DA with plain cross-entropy. labels[i] is 1 for target, 0 for background.
inline DaTrainResult train_conv_da(std::span<const Tensor> features, std::span<const int> labels,
                                   const DaTrainCfg& cfg = {}) {
  if (features.size() != labels.size()) throw ContractError("train_conv_da: features/labels length mismatch");
  std::vector<const Tensor*> pos, neg;
  for (std::size_t i = 0; i < features.size(); ++i) (labels[i] == 1 ? pos : neg).push_back(&features[i]);
  if (pos.empty() || neg.empty()) throw ContractError("train_conv_da: need at least one positive and one negative");
  const std::size_t channels = features.front().dim(0);

  std::mt19937_64 rng(cfg.seed);
  DaTrainResult r{init_conv_da(channels, rng(), cfg.init_std), {}};
  detail::BatchCycler pos_cycle(pos.size(), rng), neg_cycle(neg.size(), rng);
  const nn::SgdConfig sgd{cfg.learning_rate, cfg.momentum, cfg.weight_decay};
  Tensor vk, vb;

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
    const Tensor x = stack(batch);
    const Tensor response = nn::conv2d(x, r.weights.kernel, r.weights.bias, kDaConv);
    const Tensor logits = nn::global_avg_pool(response);

    const double inv = 1.0 / static_cast<double>(batch.size());
    Tensor dlogits(logits.shape());
    double total = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto l = loss::loss_on_logits(logits[2 * i], logits[2 * i + 1], y[i], loss::LossKind::CrossEntropy, {});
      total += l.value;
      dlogits[2 * i] = static_cast<float>(l.grad_pos * inv);
      dlogits[2 * i + 1] = static_cast<float>(l.grad_neg * inv);
    }
    r.loss_curve.push_back(total * inv);

    const Tensor dresp = nn::global_avg_pool_backward(response.shape(), dlogits);
    const auto g = nn::conv2d_backward(x, r.weights.kernel, dresp, kDaConv, false);
    nn::sgd_step(r.weights.kernel, g.kernel, vk, sgd);
    nn::sgd_step(r.weights.bias, g.bias, vb, sgd);
  }
  return r;
}

enum class ImportanceSource { Score, Loss };
enum class Ranking { Absolute, Signed };

inline ImportanceSource parse_importance_source(const std::string& s) {
  if (s == "score") return ImportanceSource::Score;
  if (s == "loss") return ImportanceSource::Loss;
  throw ContractError("unknown importance_source '" + s + "' (expected score or loss)");
}

inline Ranking parse_ranking(const std::string& s) {
  if (s == "abs") return Ranking::Absolute;
  if (s == "signed") return Ranking::Signed;
  throw ContractError("unknown ranking '" + s + "' (expected abs or signed)");
}

struct ChannelImportance {
  std::vector<double> delta;  // signed, averaged over negatives

  std::vector<double> ranking_scores(Ranking r) const {
    std::vector<double> s = delta;
    if (r == Ranking::Absolute) {
      for (double& v : s) v = std::abs(v);
    }
    return s;
  }
};

/// delta_n = mean over negatives of (1/(H*W)) * sum_{i,j} d target / d x[n, i, j], where
/// target is the background logit (Score) or the background-label CE loss (Loss).
inline ChannelImportance channel_importance(const ConvDaWeights& da, std::span<const Tensor> neg_features,
                                            ImportanceSource source = ImportanceSource::Score,
                                            std::size_t chunk = 32) {
  if (neg_features.empty()) throw ContractError("channel_importance: empty negative set");
  const std::size_t channels = da.channels();
  ChannelImportance imp{std::vector<double>(channels, 0.0)};
  for (std::size_t start = 0; start < neg_features.size(); start += chunk) {
    const std::size_t end = std::min(neg_features.size(), start + chunk);
    std::vector<const Tensor*> batch;
    for (std::size_t i = start; i < end; ++i) {
      if (neg_features[i].dim(0) != channels) throw ContractError("channel_importance: channel count mismatch");
      batch.push_back(&neg_features[i]);
    }
    const Tensor x = stack(batch);
    const Tensor response = nn::conv2d(x, da.kernel, da.bias, kDaConv);
    Tensor dlogits({batch.size(), 2});
    if (source == ImportanceSource::Score) {
      for (std::size_t i = 0; i < batch.size(); ++i) dlogits[2 * i + kBackgroundClass] = 1.0f;
    } else {
      const Tensor logits = nn::global_avg_pool(response);
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto l = loss::loss_on_logits(logits[2 * i], logits[2 * i + 1], 0, loss::LossKind::CrossEntropy, {});
        dlogits[2 * i] = static_cast<float>(l.grad_pos);
        dlogits[2 * i + 1] = static_cast<float>(l.grad_neg);
      }
    }
    const Tensor dresp = nn::global_avg_pool_backward(response.shape(), dlogits);
    const auto g = nn::conv2d_backward(x, da.kernel, dresp, kDaConv, true);
    const std::size_t plane = x.dim(2) * x.dim(3);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      for (std::size_t c = 0; c < channels; ++c) {
        const float* p = g.input.ptr() + (i * channels + c) * plane;
        double s = 0.0;
        for (std::size_t k = 0; k < plane; ++k) s += p[k];
        imp.delta[c] += s / static_cast<double>(plane);
      }
    }
  }
  for (double& d : imp.delta) d /= static_cast<double>(neg_features.size());
  return imp;
}

/// Ordered, distinct channel indices.
struct ChannelMask {
  std::vector<int> indices;

  std::size_t size() const { return indices.size(); }
  static ChannelMask identity(std::size_t channels) {
    ChannelMask m;
    m.indices.resize(channels);
    std::iota(m.indices.begin(), m.indices.end(), 0);
    return m;
  }
  friend bool operator==(const ChannelMask&, const ChannelMask&) = default;
};

/// Top-k channels by ranking score; ties go to the lower index; result sorted ascending.
inline ChannelMask select_channels(const ChannelImportance& imp, std::size_t k, Ranking ranking = Ranking::Absolute) {
  const std::size_t n = imp.delta.size();
  if (k > n) throw ContractError("select_channels: k=" + std::to_string(k) + " exceeds channel count " + std::to_string(n));
  const std::vector<double> score = imp.ranking_scores(ranking);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return score[a] > score[b]; });
  ChannelMask m{std::vector<int>(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k))};
  std::sort(m.indices.begin(), m.indices.end());
  return m;
}

/// Gathers the masked channels of a C x H x W feature, in mask order.
inline Tensor apply_mask(const Tensor& feature, const ChannelMask& mask) {
  require_rank(feature, 3, "apply_mask");
  const std::size_t c = feature.dim(0), plane = feature.dim(1) * feature.dim(2);
  if (mask.indices.empty()) throw ContractError("apply_mask: empty mask");
  Tensor out({mask.size(), feature.dim(1), feature.dim(2)});
  for (std::size_t k = 0; k < mask.size(); ++k) {
    const int idx = mask.indices[k];
    if (idx < 0 || static_cast<std::size_t>(idx) >= c) {
      throw ContractError("apply_mask: index " + std::to_string(idx) + " out of range for " + std::to_string(c) +
                          " channels");
    }
    std::copy(feature.ptr() + idx * plane, feature.ptr() + (idx + 1) * plane, out.ptr() + k * plane);
  }
  return out;
}

}  // namespace context_tracker::adapt

#endif  // CONTEXT_TRACKER_ADAPT_HPP
