#ifndef CONTEXT_TRACKER_GRADCHECK_HPP
#define CONTEXT_TRACKER_GRADCHECK_HPP

// Central finite-difference checks of every hand-written backward pass, run in
// double precision on small seeded instances. Each instance reduces the op
// output to a scalar with a random projection R, so the analytic gradient is
// backward(R).

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "context_tracker/backbone.hpp"
#include "context_tracker/head.hpp"
#include "context_tracker/loss.hpp"
#include "context_tracker/nn.hpp"

namespace context_tracker::gradcheck {

using DTensor = BasicTensor<double>;

struct OpReport {
  std::string op;
  std::size_t instances = 0;
  std::size_t failures = 0;
  double max_rel_err = 0.0;
  bool passed() const { return instances > 0 && failures == 0; }
};

struct SuiteConfig {
  std::size_t instances = 100;
  double tolerance = 1e-3;
  double eps = 1e-3;
  double head_eps = 1e-6;  // head composition: small enough never to cross a relu kink
  std::uint64_t seed = 0;
};

namespace detail {

inline DTensor gaussian(Shape s, std::mt19937_64& rng, double stddev = 1.0) {
  std::normal_distribution<double> d(0.0, stddev);
  DTensor t(std::move(s));
  for (double& v : t.data()) v = d(rng);
  return t;
}

// Values bounded away from zero (|x| >= 0.05) so +-eps never crosses the relu kink.
inline DTensor off_kink(Shape s, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.05, 2.0);
  std::bernoulli_distribution sign(0.5);
  DTensor t(std::move(s));
  for (double& v : t.data()) v = sign(rng) ? mag(rng) : -mag(rng);
  return t;
}

// Distinct values spaced >= 0.01 apart: a shuffled ramp plus sub-spacing jitter,
// so no pooling window has a tie within +-eps.
inline DTensor distinct(Shape s, std::mt19937_64& rng) {
  DTensor t(std::move(s));
  std::vector<std::size_t> order(t.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::uniform_real_distribution<double> jitter(0.0, 0.004);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.01 * static_cast<double>(order[i]) - 1.0 + jitter(rng);
  return t;
}

inline double dot(const DTensor& a, const DTensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline void record(OpReport& r, double err, double tol) {
  ++r.instances;
  r.max_rel_err = std::max(r.max_rel_err, err);
  if (!(err < tol)) ++r.failures;
}

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

}  // namespace detail

/// Input, kernel and bias gradients; every other instance uses dilation 3.
inline OpReport check_conv2d(const SuiteConfig& cfg) {
  OpReport r{"conv2d"};
  std::mt19937_64 rng(cfg.seed ^ 0xc0417ULL);
  for (std::size_t i = 0; i < cfg.instances; ++i) {
    nn::Conv2dOptions opt;
    opt.dilation = i % 2 == 0 ? 3 : detail::pick(rng, 1, 2);
    opt.stride = detail::pick(rng, 1, 2);
    opt.pad_h = detail::pick(rng, 0, 2);
    opt.pad_w = detail::pick(rng, 0, 2);
    const std::size_t k = detail::pick(rng, 1, 3);
    const std::size_t span = opt.dilation * (k - 1) + 1;
    const std::size_t h = span + detail::pick(rng, 0, 4), w = span + detail::pick(rng, 0, 4);
    const std::size_t n = detail::pick(rng, 1, 2), cin = detail::pick(rng, 1, 3), cout = detail::pick(rng, 1, 3);
    const DTensor x = detail::gaussian({n, cin, h, w}, rng);
    const DTensor ker = detail::gaussian({cout, cin, k, k}, rng);
    const DTensor b = detail::gaussian({cout}, rng);
    const DTensor proj = detail::gaussian(nn::conv2d(x, ker, b, opt).shape(), rng);

    const auto g = nn::conv2d_backward(x, ker, proj, opt, true);
    const auto nx = nn::numeric_grad<double>([&](const DTensor& v) { return detail::dot(nn::conv2d(v, ker, b, opt), proj); },
                                             x, cfg.eps);
    const auto nk = nn::numeric_grad<double>([&](const DTensor& v) { return detail::dot(nn::conv2d(x, v, b, opt), proj); },
                                             ker, cfg.eps);
    const auto nb = nn::numeric_grad<double>([&](const DTensor& v) { return detail::dot(nn::conv2d(x, ker, v, opt), proj); },
                                             b, cfg.eps);
    detail::record(r,
                   std::max({nn::relative_error(g.input, nx), nn::relative_error(g.kernel, nk),
                             nn::relative_error(g.bias, nb)}),
                   cfg.tolerance);
  }
  return r;
}

inline OpReport check_relu(const SuiteConfig& cfg) {
  OpReport r{"relu"};
  std::mt19937_64 rng(cfg.seed ^ 0x7e1aULL);
  for (std::size_t i = 0; i < cfg.instances; ++i) {
    const DTensor x = detail::off_kink({1, detail::pick(rng, 1, 3), detail::pick(rng, 2, 6), detail::pick(rng, 2, 6)}, rng);
    const DTensor proj = detail::gaussian(x.shape(), rng);
    const auto ana = nn::relu_backward(x, proj);
    const auto num = nn::numeric_grad<double>([&](const DTensor& v) { return detail::dot(nn::relu(v), proj); }, x, cfg.eps);
    detail::record(r, nn::relative_error(ana, num), cfg.tolerance);
  }
  return r;
}

/// Alternates the backbone setting (alpha 1e-4) with a strongly nonlinear one.
inline OpReport check_lrn(const SuiteConfig& cfg) {
  OpReport r{"lrn"};
  std::mt19937_64 rng(cfg.seed ^ 0x1f2ULL);
  for (std::size_t i = 0; i < cfg.instances; ++i) {
    nn::LrnParams p;
    if (i % 2 == 1) {
      p.alpha = 0.5;
      p.size = static_cast<int>(2 * detail::pick(rng, 0, 2) + 1);
    }
    const DTensor x = detail::gaussian({detail::pick(rng, 1, 2), detail::pick(rng, 1, 8), detail::pick(rng, 1, 4),
                                        detail::pick(rng, 1, 4)},
                                       rng, 3.0);
    const DTensor proj = detail::gaussian(x.shape(), rng);
    const auto ana = nn::lrn_backward(x, proj, p);
    const auto num = nn::numeric_grad<double>([&](const DTensor& v) { return detail::dot(nn::lrn(v, p), proj); }, x, cfg.eps);
    detail::record(r, nn::relative_error(ana, num), cfg.tolerance);
  }
  return r;
}

inline OpReport check_maxpool(const SuiteConfig& cfg) {
  OpReport r{"maxpool2d"};
  std::mt19937_64 rng(cfg.seed ^ 0x3a9ULL);
  for (std::size_t i = 0; i < cfg.instances; ++i) {
    const std::size_t k = detail::pick(rng, 2, 3), s = detail::pick(rng, 1, 2);
    const DTensor x = detail::distinct({detail::pick(rng, 1, 2), detail::pick(rng, 1, 3), k + detail::pick(rng, 0, 5),
                                        k + detail::pick(rng, 0, 5)},
                                       rng);
    const auto fwd = nn::maxpool2d(x, k, s);
    const DTensor proj = detail::gaussian(fwd.output.shape(), rng);
    const auto ana = nn::maxpool2d_backward(x.shape(), fwd.argmax, proj);
    const auto num = nn::numeric_grad<double>(
        [&](const DTensor& v) { return detail::dot(nn::maxpool2d(v, k, s).output, proj); }, x, cfg.eps);
    detail::record(r, nn::relative_error(ana, num), cfg.tolerance);
  }
  return r;
}

inline OpReport check_softmax2(const SuiteConfig& cfg) {
  OpReport r{"softmax2"};
  std::mt19937_64 rng(cfg.seed ^ 0x50f7ULL);
  for (std::size_t i = 0; i < cfg.instances; ++i) {
    const DTensor x = detail::gaussian({detail::pick(rng, 1, 8), 2}, rng, 2.0);
    const DTensor proj = detail::gaussian(x.shape(), rng);
    const auto ana = nn::softmax2_backward(nn::softmax2(x), proj);
    const auto num =
        nn::numeric_grad<double>([&](const DTensor& v) { return detail::dot(nn::softmax2(v), proj); }, x, cfg.eps);
    detail::record(r, nn::relative_error(ana, num), cfg.tolerance);
  }
  return r;
}

inline OpReport check_global_avg_pool(const SuiteConfig& cfg) {
  OpReport r{"global_avg_pool"};
  std::mt19937_64 rng(cfg.seed ^ 0x9a7ULL);
  for (std::size_t i = 0; i < cfg.instances; ++i) {
    const DTensor x =
        detail::gaussian({detail::pick(rng, 1, 3), detail::pick(rng, 1, 3), detail::pick(rng, 1, 5), detail::pick(rng, 1, 5)}, rng);
    const DTensor proj = detail::gaussian(nn::global_avg_pool(x).shape(), rng);
    const auto ana = nn::global_avg_pool_backward(x.shape(), proj);
    const auto num =
        nn::numeric_grad<double>([&](const DTensor& v) { return detail::dot(nn::global_avg_pool(v), proj); }, x, cfg.eps);
    detail::record(r, nn::relative_error(ana, num), cfg.tolerance);
  }
  return r;
}

/// RoIAlign is linear in the feature map, so a float check with a large step is exact up to rounding.
inline OpReport check_roi_align(const SuiteConfig& cfg) {
  OpReport r{"roi_align"};
  std::mt19937_64 rng(cfg.seed ^ 0x401ULL);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < cfg.instances; ++i) {
    backbone::FeatureMap fm;
    fm.stride = 8.0;
    fm.first_center = 4.0;
    const std::size_t fh = detail::pick(rng, 3, 6), fw = detail::pick(rng, 3, 6);
    fm.tensor = detail::gaussian({1, detail::pick(rng, 1, 3), fh, fw}, rng).cast<float>();
    const double x0 = u(rng) * 8.0 * fw * 0.5, y0 = u(rng) * 8.0 * fh * 0.5;
    const BBox roi{x0, y0, 8.0 + u(rng) * 8.0 * fw * 0.5, 8.0 + u(rng) * 8.0 * fh * 0.5};
    const Tensor proj = detail::gaussian(backbone::roi_align(fm, roi).shape(), rng).cast<float>();
    const Tensor ana = backbone::roi_align_backward(fm, roi, proj);
    const Tensor num = nn::numeric_grad<float>(
        [&](const Tensor& v) {
          backbone::FeatureMap probe = fm;
          probe.tensor = v;
          const Tensor out = backbone::roi_align(probe, roi);
          double s = 0.0;
          for (std::size_t j = 0; j < out.size(); ++j) s += static_cast<double>(out[j]) * proj[j];
          return s;
        },
        fm.tensor, 0.25);
    detail::record(r, nn::relative_error(ana, num), cfg.tolerance);
  }
  return r;
}

/// Full head (conv4 -> relu -> conv5 -> relu -> conv6 -> mean) under the
/// cs loss on logits: gradients w.r.t. every parameter and the input.
inline OpReport check_head(const SuiteConfig& cfg) {
  OpReport r{"head"};
  std::mt19937_64 rng(cfg.seed ^ 0x4eadULL);
  std::bernoulli_distribution coin(0.5);
  for (std::size_t i = 0; i < cfg.instances; ++i) {
    const std::size_t k = detail::pick(rng, 2, 4), width = detail::pick(rng, 3, 6), n = detail::pick(rng, 1, 3);
    auto w = head::init_head<double>(rng(), k, width, 0.5);
    for (auto* b : w.params()) {
      if (b->rank() == 1) *b = detail::gaussian(b->shape(), rng, 0.1);
    }
    const DTensor x = detail::gaussian({n, k, 7, 7}, rng);
    std::vector<int> y(n);
    for (int& v : y) v = coin(rng) ? 1 : 0;
    const loss::LossKind kind = static_cast<loss::LossKind>(i % 3);

    auto objective = [&](const DTensor& input, const head::HeadWeights<double>& hw) {
      const DTensor logits = head::logits_batch(input, hw);
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += loss::loss_on_logits(logits[2 * j], logits[2 * j + 1], y[j], kind, {}).value;
      return s / static_cast<double>(n);
    };

    const auto act = head::forward_batch(x, w);
    DTensor dlogits(act.logits.shape());
    for (std::size_t j = 0; j < n; ++j) {
      const auto l = loss::loss_on_logits(act.logits[2 * j], act.logits[2 * j + 1], y[j], kind, {});
      dlogits[2 * j] = l.grad_pos / static_cast<double>(n);
      dlogits[2 * j + 1] = l.grad_neg / static_cast<double>(n);
    }
    auto g = head::backward_batch(act, w, dlogits, true);

    double worst = nn::relative_error(
        g.input, nn::numeric_grad<double>([&](const DTensor& v) { return objective(v, w); }, x, cfg.head_eps));
    auto params = w.params();
    auto grads = g.weights.params();
    for (std::size_t p = 0; p < params.size(); ++p) {
      const DTensor orig = *params[p];
      const auto num = nn::numeric_grad<double>(
          [&](const DTensor& v) {
            *params[p] = v;
            const double out = objective(x, w);
            *params[p] = orig;
            return out;
          },
          orig, cfg.head_eps);
      worst = std::max(worst, nn::relative_error(*grads[p], num));
    }
    detail::record(r, worst, cfg.tolerance);
  }
  return r;
}

/// d loss / d p and d loss / d logits for one loss kind, on batches of 8 labelled probabilities.
inline OpReport check_loss(loss::LossKind kind, const SuiteConfig& cfg) {
  OpReport r{std::string("loss_") + loss::to_string(kind)};
  std::mt19937_64 rng(cfg.seed ^ (0x1055ULL + static_cast<std::uint64_t>(kind)));
  std::uniform_real_distribution<double> prob(0.02, 0.98);
  std::normal_distribution<double> logit(0.0, 2.0);
  std::bernoulli_distribution coin(0.5);
  loss::CsLossParams prm;
  for (std::size_t i = 0; i < cfg.instances; ++i) {
    constexpr std::size_t kBatch = 8;
    std::vector<int> y(kBatch);
    for (int& v : y) v = coin(rng) ? 1 : 0;
    prm.nu = i % 2 == 0 ? 1.0 : 2.0;

    DTensor p({kBatch});
    for (double& v : p.data()) v = prob(rng);
    DTensor ana_p({kBatch});
    for (std::size_t j = 0; j < kBatch; ++j) ana_p[j] = loss::loss_grad(p[j], y[j], kind, prm);
    const auto num_p = nn::numeric_grad<double>(
        [&](const DTensor& v) {
          double s = 0.0;
          for (std::size_t j = 0; j < kBatch; ++j) s += loss::loss_value(v[j], y[j], kind, prm);
          return s;
        },
        p, cfg.eps * 0.1);

    DTensor z({kBatch, 2});
    for (double& v : z.data()) v = logit(rng);
    DTensor ana_z(z.shape());
    for (std::size_t j = 0; j < kBatch; ++j) {
      const auto l = loss::loss_on_logits(z[2 * j], z[2 * j + 1], y[j], kind, prm);
      ana_z[2 * j] = l.grad_pos;
      ana_z[2 * j + 1] = l.grad_neg;
    }
    const auto num_z = nn::numeric_grad<double>(
        [&](const DTensor& v) {
          double s = 0.0;
          for (std::size_t j = 0; j < kBatch; ++j) s += loss::loss_on_logits(v[2 * j], v[2 * j + 1], y[j], kind, prm).value;
          return s;
        },
        z, cfg.eps);
    detail::record(r, std::max(nn::relative_error(ana_p, num_p), nn::relative_error(ana_z, num_z)), cfg.tolerance);
  }
  return r;
}

inline std::vector<OpReport> run_suite(const SuiteConfig& cfg = {}) {
  return {check_conv2d(cfg),
          check_relu(cfg),
          check_lrn(cfg),
          check_maxpool(cfg),
          check_softmax2(cfg),
          check_global_avg_pool(cfg),
          check_roi_align(cfg),
          check_head(cfg),
          check_loss(loss::LossKind::CrossEntropy, cfg),
          check_loss(loss::LossKind::Focal, cfg),
          check_loss(loss::LossKind::CostSensitive, cfg)};
}

}  // namespace context_tracker::gradcheck

#endif  // CONTEXT_TRACKER_GRADCHECK_HPP
