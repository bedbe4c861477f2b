#ifndef CONTEXT_TRACKER_LOSS_HPP
#define CONTEXT_TRACKER_LOSS_HPP

// Classification losses for two-class candidate scoring:
//   ce     -log(p_t)
//   focal  -(1 - p_t)^nu log(p_t)
//   cs     -log(p_t) / (1 + exp(alpha (beta - (1 - p_t)^gamma)))
// where p_t is the probability the classifier assigns to the true label.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "context_tracker/errors.hpp"

namespace context_tracker::loss {

inline constexpr double kProbClamp = 1e-7;
// Above this exponent the modulating factor is taken as exactly 0.
inline constexpr double kExpGuard = 80.0;

enum class LossKind { CrossEntropy, Focal, CostSensitive };

inline const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::CrossEntropy: return "ce";
    case LossKind::Focal: return "focal";
    case LossKind::CostSensitive: return "cs";
  }
  return "?";
}

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "ce") return LossKind::CrossEntropy;
  if (s == "focal") return LossKind::Focal;
  if (s == "cs") return LossKind::CostSensitive;
  throw ContractError("unknown loss kind '" + s + "' (expected ce, focal or cs)");
}

struct CsLossParams {
  double alpha = 10.0;
  double beta = 0.2;
  double gamma = 2.0;
  double nu = 1.0;  // focal variant only

  void validate() const {
    if (!(alpha > 0.0)) throw ContractError("cs loss: alpha must be > 0");
    if (!(beta >= 0.0 && beta <= 1.0)) throw ContractError("cs loss: beta must lie in [0,1]");
    if (!(gamma > 0.0)) throw ContractError("cs loss: gamma must be > 0");
    if (!(nu >= 0.0)) throw ContractError("focal loss: nu must be >= 0");
  }
};

struct LabeledProb {
  double p = 0.5;  // positive-class probability
  int y = 0;       // 1 = positive, 0 = negative
};

inline double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

inline double p_t(double p, int y) { return y == 1 ? p : 1.0 - p; }

inline double ce_loss(double p, int y) { return -std::log(clamp_prob(p_t(p, y))); }

inline double focal_loss(double p, int y, double nu) {
  const double pt = clamp_prob(p_t(p, y));
  return -std::pow(1.0 - pt, nu) * std::log(pt);
}

/// 1 / (1 + exp(alpha (beta - (1 - p_t)^gamma))), in (0, 1).
inline double modulating_factor(double pt, const CsLossParams& prm) {
  const double a = prm.alpha * (prm.beta - std::pow(1.0 - pt, prm.gamma));
  if (a > kExpGuard) return 0.0;
  return 1.0 / (1.0 + std::exp(a));
}

/// d m / d p_t = -m (1 - m) alpha gamma (1 - p_t)^(gamma - 1).
inline double modulating_factor_deriv(double pt, const CsLossParams& prm) {
  const double a = prm.alpha * (prm.beta - std::pow(1.0 - pt, prm.gamma));
  if (a > kExpGuard) return 0.0;
  const double m = 1.0 / (1.0 + std::exp(a));
  const double q = 1.0 - pt;
  const double dq = prm.gamma == 1.0 ? 1.0 : prm.gamma * std::pow(q, prm.gamma - 1.0);
  return -m * (1.0 - m) * prm.alpha * dq;
}

inline double cs_loss(double p, int y, const CsLossParams& prm = {}) {
  const double pt = clamp_prob(p_t(p, y));
  return -std::log(pt) * modulating_factor(pt, prm);
}

/// d loss / d p_t for each kind (p_t already clamped).
inline double grad_wrt_pt(double pt, LossKind kind, const CsLossParams& prm) {
  switch (kind) {
    case LossKind::CrossEntropy: return -1.0 / pt;
    case LossKind::Focal: {
      const double q = 1.0 - pt;
      const double dpow = prm.nu == 0.0 ? 0.0 : prm.nu * std::pow(q, prm.nu - 1.0);
      return dpow * std::log(pt) - std::pow(q, prm.nu) / pt;
    }
    case LossKind::CostSensitive:
      return -modulating_factor(pt, prm) / pt - std::log(pt) * modulating_factor_deriv(pt, prm);
  }
  return 0.0;
}

inline double loss_value(double p, int y, LossKind kind, const CsLossParams& prm) {
  switch (kind) {
    case LossKind::CrossEntropy: return ce_loss(p, y);
    case LossKind::Focal: return focal_loss(p, y, prm.nu);
    case LossKind::CostSensitive: return cs_loss(p, y, prm);
  }
  return 0.0;
}

/// d loss / d p for any kind; zero where the clamp is active.
inline double loss_grad(double p, int y, LossKind kind, const CsLossParams& prm) {
  const double raw = p_t(p, y);
  if (raw < kProbClamp || raw > 1.0 - kProbClamp) return 0.0;
  const double sign = y == 1 ? 1.0 : -1.0;
  return sign * grad_wrt_pt(raw, kind, prm);
}

inline double ce_loss_grad(double p, int y) { return loss_grad(p, y, LossKind::CrossEntropy, {}); }
inline double focal_loss_grad(double p, int y, double nu) {
  CsLossParams prm;
  prm.nu = nu;
  return loss_grad(p, y, LossKind::Focal, prm);
}
inline double cs_loss_grad(double p, int y, const CsLossParams& prm = {}) {
  return loss_grad(p, y, LossKind::CostSensitive, prm);
}

/// Loss value and d loss / d(logit_pos, logit_neg) for a two-class softmax.
/// Works from log-softmax directly so p_t -> 0 or 1 never divides by zero.
struct LogitLoss {
  double value = 0.0;
  double grad_pos = 0.0;
  double grad_neg = 0.0;
  double p_pos = 0.5;
};

inline LogitLoss loss_on_logits(double logit_pos, double logit_neg, int y, LossKind kind,
                                const CsLossParams& prm) {
  const double m = std::max(logit_pos, logit_neg);
  const double lse = m + std::log(std::exp(logit_pos - m) + std::exp(logit_neg - m));
  const double log_pt = (y == 1 ? logit_pos : logit_neg) - lse;
  const double pt = std::exp(log_pt);
  const double q = -std::expm1(log_pt);  // 1 - p_t without cancellation

  LogitLoss r;
  r.p_pos = std::exp(logit_pos - lse);
  // dL/dz_true = dL/dp_t * p_t * q, written without the 1/p_t factor.
  double dz_true = 0.0;
  switch (kind) {
    case LossKind::CrossEntropy:
      r.value = -log_pt;
      dz_true = -q;
      break;
    case LossKind::Focal: {
      const double w = std::pow(q, prm.nu);
      r.value = -w * log_pt;
      const double dpow = prm.nu == 0.0 ? 0.0 : prm.nu * std::pow(q, prm.nu - 1.0);
      dz_true = dpow * log_pt * pt * q - w * q;
      break;
    }
    case LossKind::CostSensitive: {
      const double mf = modulating_factor(pt, prm);
      r.value = -log_pt * mf;
      dz_true = -mf * q - log_pt * modulating_factor_deriv(pt, prm) * pt * q;
      break;
    }
  }
  if (y == 1) {
    r.grad_pos = dz_true;
    r.grad_neg = -dz_true;
  } else {
    r.grad_neg = dz_true;
    r.grad_pos = -dz_true;
  }
  return r;
}

struct BatchLoss {
  double mean = 0.0;
  std::vector<double> grads;  // d(mean)/dp_i
};

/// Mean loss over the batch; per-sample gradients carry the 1/batch factor.
inline BatchLoss batch_loss(std::span<const LabeledProb> batch, LossKind kind, const CsLossParams& prm = {}) {
  if (batch.empty()) throw ContractError("batch_loss: empty batch");
  BatchLoss out;
  out.grads.reserve(batch.size());
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const auto& s : batch) {
    out.mean += loss_value(s.p, s.y, kind, prm);
    out.grads.push_back(loss_grad(s.p, s.y, kind, prm) * inv);
  }
  out.mean *= inv;
  return out;
}

}  // namespace context_tracker::loss

#endif  // CONTEXT_TRACKER_LOSS_HPP
